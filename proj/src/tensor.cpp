#include "icam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace icam {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive");
  }
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

// Builds a tape node. Parents and the backprop closure are dropped when
// grads are disabled or no parent participates in the graph.
Tensor make_op(std::vector<std::size_t> shape, std::vector<double> value,
               std::vector<NodePtr> parents,
               std::function<void(Node&)> backprop, const char* op) {
  check_finite(value, op);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p->requires_grad) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(n));
}

void require_matrix(const Tensor& t, const char* who) {
  if (t.shape().size() != 2) {
    throw ShapeError(std::string(who) + ": expected a rank-2 tensor, got shape " +
                     shape_str(t.shape()));
  }
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

// --- Tensor basics -----------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  check_shape(shape);
  const std::size_t n = shape_numel(shape);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value.assign(n, 0.0);
  return wrap(std::move(node));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.node()->value.begin(), t.node()->value.end(), v);
  check_finite(t.node()->value, "full");
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  check_finite(data, "from");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  return wrap(std::move(node));
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() requires a scalar tensor, got shape " +
                        shape_str(shape()));
  }
  return node_->value[0];
}

std::vector<double>& Tensor::values_mut() {
  if (!node_->parents.empty()) {
    throw ContractError("values_mut() is only valid on leaf tensors");
  }
  return node_->value;
}

Tensor& Tensor::set_requires_grad(bool b) {
  if (!node_->parents.empty()) {
    throw ContractError("set_requires_grad is only valid on leaf tensors");
  }
  node_->requires_grad = b;
  return *this;
}

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->size(), 0.0); }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// --- matmul ------------------------------------------------------------

namespace {

// C[m x n] += or = A[m x k] * B[k x n], row-major, ikj order. Row i of the
// result depends only on row i of A, so batching rows cannot perturb
// per-row results -- rollout modes that differ only in batch width stay
// bitwise comparable.
void gemm(const double* a, const double* b, double* c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = ai[kk];
      if (aik == 0.0) continue;
      const double* bk = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

// C[m x n] = A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      ci[j] = accumulate ? ci[j] + acc : acc;
    }
  }
}

// C[k x n] = A[m x k]^T * B[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = ai[kk];
      if (aik == 0.0) continue;
      double* ck = c + kk * n;
      for (std::size_t j = 0; j < n; ++j) ck[j] += aik * bi[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  gemm(a.values().data(), b.values().data(), out.data(), m, k, n, false);
  Node* an = a.node();
  Node* bn = b.node();
  return make_op(
      {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
      [an, bn, m, k, n](Node& self) {
        if (an->requires_grad) {
          an->ensure_grad();  // dA += G * B^T
          gemm_nt(self.grad.data(), bn->value.data(), an->grad.data(), m, n, k,
                  true);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();  // dB += A^T * G
          gemm_tn(an->value.data(), self.grad.data(), bn->grad.data(), m, k, n,
                  true);
        }
      },
      "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt lhs");
  require_matrix(b, "matmul_nt rhs");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner dimensions disagree, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n, false);
  Node* an = a.node();
  Node* bn = b.node();
  return make_op(
      {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
      [an, bn, m, k, n](Node& self) {
        if (an->requires_grad) {
          an->ensure_grad();  // dA += G * B
          gemm(self.grad.data(), bn->value.data(), an->grad.data(), m, n, k,
               true);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();  // dB += G^T * A
          gemm_tn(self.grad.data(), an->value.data(), bn->grad.data(), m, n, k,
                  true);
        }
      },
      "matmul_nt");
}

// --- elementwise -------------------------------------------------------

namespace {

enum class Broadcast { none, a_scalar, b_scalar };

Broadcast binary_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (a.is_scalar()) return Broadcast::a_scalar;
  if (b.is_scalar()) return Broadcast::b_scalar;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()) +
                   " (only scalar-with-tensor broadcasting is supported)");
}

template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                 Bwd bwd) {
  const Broadcast bc = binary_broadcast(a, b, name);
  const Tensor& big = bc == Broadcast::a_scalar ? b : a;
  const std::size_t n = big.size();
  std::vector<double> out(n);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = bc == Broadcast::a_scalar ? av[0] : av[i];
    const double y = bc == Broadcast::b_scalar ? bv[0] : bv[i];
    out[i] = fwd(x, y);
  }
  Node* an = a.node();
  Node* bn = b.node();
  return make_op(
      big.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
      [an, bn, bc, n, bwd](Node& self) {
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t ia = bc == Broadcast::a_scalar ? 0 : i;
          const std::size_t ib = bc == Broadcast::b_scalar ? 0 : i;
          const double g = self.grad[i];
          double da = 0, db = 0;
          bwd(an->value[ia], bn->value[ib], self.value[i], g, da, db);
          if (an->requires_grad) an->grad[ia] += da;
          if (bn->requires_grad) bn->grad[ib] += db;
        }
      },
      name);
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  Node* an = a.node();
  return make_op(
      a.shape(), std::move(out), {a.node_ptr()},
      [an, n, bwd](Node& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          an->grad[i] += bwd(an->value[i], self.value[i], self.grad[i]);
        }
      },
      name);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double y : b.values()) {
    if (y == 0.0) throw DomainError("div: division by zero");
  }
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

Tensor neg(const Tensor& a) {
  return unary_op(
      a, "neg", [](double x) { return -x; },
      [](double, double, double g) { return -g; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y, double g) { return g * y; });
}

Tensor log(const Tensor& a) {
  for (double x : a.values()) {
    if (x <= 0.0) throw DomainError("log: non-positive input");
  }
  return unary_op(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double, double g) { return g / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid",
      [](double x) {
        // Split on sign to avoid exp overflow on large |x|.
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y, double g) { return g * y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y, double g) { return g * (1.0 - y * y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0 ? g : 0.0; });
}

Tensor add_scalar(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
Tensor mul_scalar(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

// --- reductions / indexing ----------------------------------------------

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  Node* an = a.node();
  return make_op(
      {1}, {acc}, {a.node_ptr()},
      [an](Node& self) {
        an->ensure_grad();
        const double g = self.grad[0];
        for (double& d : an->grad) d += g;
      },
      "sum");
}

Tensor mean_rows(const Tensor& m) {
  require_matrix(m, "mean_rows");
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(c, 0.0);
  const auto v = m.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j] += v[i * c + j];
  }
  for (double& x : out) x /= static_cast<double>(r);
  Node* mn = m.node();
  return make_op(
      {1, c}, std::move(out), {m.node_ptr()},
      [mn, r, c](Node& self) {
        mn->ensure_grad();
        const double inv = 1.0 / static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            mn->grad[i * c + j] += self.grad[j] * inv;
          }
        }
      },
      "mean_rows");
}

Tensor rows(const Tensor& m, const std::vector<std::size_t>& idx) {
  require_matrix(m, "rows");
  const std::size_t r = m.rows(), c = m.cols(), k = idx.size();
  if (k == 0) throw ArgumentError("rows: empty index list");
  for (std::size_t i : idx) {
    if (i >= r) throw ArgumentError("rows: index out of range");
  }
  std::vector<double> out(k * c);
  const auto v = m.values();
  for (std::size_t i = 0; i < k; ++i) {
    std::memcpy(out.data() + i * c, v.data() + idx[i] * c, c * sizeof(double));
  }
  Node* mn = m.node();
  auto indices = idx;
  return make_op(
      {k, c}, std::move(out), {m.node_ptr()},
      [mn, c, indices = std::move(indices)](Node& self) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < indices.size(); ++i) {
          double* dst = mn->grad.data() + indices[i] * c;
          const double* g = self.grad.data() + i * c;
          for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
        }
      },
      "rows");
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_cols lhs");
  require_matrix(b, "concat_cols rhs");
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row counts disagree");
  }
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols();
  std::vector<double> out(r * (ca + cb));
  for (std::size_t i = 0; i < r; ++i) {
    std::memcpy(out.data() + i * (ca + cb), a.values().data() + i * ca,
                ca * sizeof(double));
    std::memcpy(out.data() + i * (ca + cb) + ca, b.values().data() + i * cb,
                cb * sizeof(double));
  }
  Node* an = a.node();
  Node* bn = b.node();
  return make_op(
      {r, ca + cb}, std::move(out), {a.node_ptr(), b.node_ptr()},
      [an, bn, r, ca, cb](Node& self) {
        const std::size_t cc = ca + cb;
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < ca; ++j) {
              an->grad[i * ca + j] += self.grad[i * cc + j];
            }
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < cb; ++j) {
              bn->grad[i * cb + j] += self.grad[i * cc + ca + j];
            }
          }
        }
      },
      "concat_cols");
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_rows lhs");
  require_matrix(b, "concat_rows rhs");
  if (a.cols() != b.cols()) {
    throw ShapeError("concat_rows: column counts disagree");
  }
  const std::size_t ra = a.rows(), rb = b.rows(), c = a.cols();
  std::vector<double> out;
  out.reserve((ra + rb) * c);
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  Node* an = a.node();
  Node* bn = b.node();
  return make_op(
      {ra + rb, c}, std::move(out), {a.node_ptr(), b.node_ptr()},
      [an, bn, ra, rb, c](Node& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < ra * c; ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < rb * c; ++i) {
            bn->grad[i] += self.grad[ra * c + i];
          }
        }
      },
      "concat_rows");
}

Tensor pick(const Tensor& m, const std::vector<std::size_t>& col) {
  require_matrix(m, "pick");
  const std::size_t r = m.rows(), c = m.cols();
  if (col.size() != r) throw ShapeError("pick: need one column index per row");
  for (std::size_t j : col) {
    if (j >= c) throw ArgumentError("pick: column index out of range");
  }
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = m.at(i, col[i]);
  Node* mn = m.node();
  auto cols_copy = col;
  return make_op(
      {r}, std::move(out), {m.node_ptr()},
      [mn, c, cols_copy = std::move(cols_copy)](Node& self) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < cols_copy.size(); ++i) {
          mn->grad[i * c + cols_copy[i]] += self.grad[i];
        }
      },
      "pick");
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  require_matrix(m, "add_rowvec");
  const std::size_t r = m.rows(), c = m.cols();
  if (v.size() != c) {
    throw ShapeError("add_rowvec: vector length does not match columns");
  }
  std::vector<double> out(r * c);
  const auto mv = m.values();
  const auto vv = v.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = mv[i * c + j] + vv[j];
  }
  Node* mn = m.node();
  Node* vn = v.node();
  return make_op(
      {r, c}, std::move(out), {m.node_ptr(), v.node_ptr()},
      [mn, vn, r, c](Node& self) {
        if (mn->requires_grad) {
          mn->ensure_grad();
          for (std::size_t i = 0; i < r * c; ++i) mn->grad[i] += self.grad[i];
        }
        if (vn->requires_grad) {
          vn->ensure_grad();
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              vn->grad[j] += self.grad[i * c + j];
            }
          }
        }
      },
      "add_rowvec");
}

Tensor expand_to(const Tensor& v, const std::vector<std::size_t>& idx,
                 std::size_t n) {
  if (v.shape().size() != 1) throw ShapeError("expand_to: expected a vector");
  if (idx.size() != v.size()) {
    throw ShapeError("expand_to: index count does not match vector length");
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw ArgumentError("expand_to: index out of range");
    out[idx[i]] += v.at(i);
  }
  Node* vn = v.node();
  auto indices = idx;
  return make_op(
      {n}, std::move(out), {v.node_ptr()},
      [vn, indices = std::move(indices)](Node& self) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < indices.size(); ++i) {
          vn->grad[i] += self.grad[indices[i]];
        }
      },
      "expand_to");
}

// --- softmax -------------------------------------------------------------

Tensor softmax_masked(const Tensor& logits,
                      const std::vector<std::uint8_t>& mask) {
  const std::size_t rank = logits.shape().size();
  if (rank != 1 && rank != 2) {
    throw ShapeError("softmax_masked: expected rank 1 or 2");
  }
  const std::size_t r = rank == 2 ? logits.rows() : 1;
  const std::size_t c = rank == 2 ? logits.cols() : logits.size();
  if (mask.size() != r * c) {
    throw ShapeError("softmax_masked: mask length does not match logits");
  }
  std::vector<double> out(r * c, 0.0);
  const auto v = logits.values();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask[i * c + j]) mx = std::max(mx, v[i * c + j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw InfeasibleError("softmax_masked: all entries of row " +
                            std::to_string(i) + " are masked");
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask[i * c + j]) {
        out[i * c + j] = std::exp(v[i * c + j] - mx);
        denom += out[i * c + j];
      }
    }
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask[i * c + j]) out[i * c + j] /= denom;
    }
  }
  Node* ln = logits.node();
  auto mask_copy = mask;
  return make_op(
      logits.shape(), std::move(out), {logits.node_ptr()},
      [ln, r, c, mask_copy = std::move(mask_copy)](Node& self) {
        ln->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            if (!mask_copy[i * c + j]) {
              dot += self.grad[i * c + j] * self.value[i * c + j];
            }
          }
          for (std::size_t j = 0; j < c; ++j) {
            if (!mask_copy[i * c + j]) {
              const double p = self.value[i * c + j];
              ln->grad[i * c + j] += p * (self.grad[i * c + j] - dot);
            }
          }
        }
      },
      "softmax_masked");
}

// --- instance norm -------------------------------------------------------

Tensor instance_norm(const Tensor& h, const Tensor& gamma, const Tensor& beta,
                     double eps) {
  require_matrix(h, "instance_norm");
  const std::size_t n = h.rows(), d = h.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("instance_norm: affine parameters must have length d");
  }
  std::vector<double> xhat(n * d), inv_std(d);
  std::vector<double> out(n * d);
  const auto v = h.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += v[i * d + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = v[i * d + j] - mean;
      var += dx * dx;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[j] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const double xh = (v[i * d + j] - mean) * is;
      xhat[i * d + j] = xh;
      out[i * d + j] = gv[j] * xh + bv[j];
    }
  }
  Node* hn = h.node();
  Node* gn = gamma.node();
  Node* bn = beta.node();
  return make_op(
      {n, d}, std::move(out), {h.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
      [hn, gn, bn, n, d, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node& self) {
        const double invn = 1.0 / static_cast<double>(n);
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (hn->requires_grad) hn->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) {
          double gsum = 0.0, gxsum = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double g = self.grad[i * d + j];
            gsum += g;
            gxsum += g * xhat[i * d + j];
          }
          if (gn->requires_grad) gn->grad[j] += gxsum;
          if (bn->requires_grad) bn->grad[j] += gsum;
          if (hn->requires_grad) {
            const double gamma_j = gn->value[j];
            for (std::size_t i = 0; i < n; ++i) {
              const double g = self.grad[i * d + j];
              hn->grad[i * d + j] +=
                  gamma_j * inv_std[j] *
                  (g - invn * gsum - xhat[i * d + j] * invn * gxsum);
            }
          }
        }
      },
      "instance_norm");
}

// --- attention-free mixing -------------------------------------------------

Tensor aafm(const Tensor& q, const Tensor& k, const Tensor& v,
            const Tensor& a) {
  require_matrix(q, "aafm q");
  require_matrix(k, "aafm k");
  require_matrix(v, "aafm v");
  require_matrix(a, "aafm bias");
  const std::size_t nq = q.rows(), d = q.cols(), nkv = k.rows();
  if (k.cols() != d || v.rows() != nkv || v.cols() != d) {
    throw ShapeError("aafm: q/k/v shapes disagree");
  }
  if (a.rows() != nq || a.cols() != nkv) {
    throw ShapeError("aafm: bias must be (n_query x n_key)");
  }
  const auto qv = q.values();
  const auto kv = k.values();
  const auto vv = v.values();
  const auto av = a.values();

  // The weight e^{A_ij + K_jd} factorizes, so the mix reduces to two
  // matrix products over the shifted factors
  //   ea_ij = e^{A_ij - rowmax_i(A)},  ek_jd = e^{K_jd - colmax_d(K)}.
  // Subtracting the (row + column) bound keeps every exponent <= 0; the
  // shifts cancel exactly in the numerator/denominator ratio. Entries at
  // the mask sentinel come out as ea = 0 and drop from all sums.
  std::vector<double> ea(nq * nkv), ek(nkv * d);
  for (std::size_t i = 0; i < nq; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nkv; ++j) mx = std::max(mx, av[i * nkv + j]);
    if (mx <= kMaskSentinel / 2) {
      throw InfeasibleError("aafm: row " + std::to_string(i) +
                            " has every key masked");
    }
    for (std::size_t j = 0; j < nkv; ++j) {
      ea[i * nkv + j] = std::exp(av[i * nkv + j] - mx);
    }
  }
  {
    std::vector<double> colmax(d, -std::numeric_limits<double>::infinity());
    for (std::size_t j = 0; j < nkv; ++j) {
      for (std::size_t t = 0; t < d; ++t) {
        colmax[t] = std::max(colmax[t], kv[j * d + t]);
      }
    }
    for (std::size_t j = 0; j < nkv; ++j) {
      for (std::size_t t = 0; t < d; ++t) {
        ek[j * d + t] = std::exp(kv[j * d + t] - colmax[t]);
      }
    }
  }
  std::vector<double> ekv(nkv * d);
  for (std::size_t i = 0; i < nkv * d; ++i) ekv[i] = ek[i] * vv[i];
  std::vector<double> num(nq * d), den(nq * d);
  gemm(ea.data(), ekv.data(), num.data(), nq, nkv, d, false);
  gemm(ea.data(), ek.data(), den.data(), nq, nkv, d, false);

  std::vector<double> out(nq * d), ratio(nq * d), sig(nq * d);
  for (std::size_t o = 0; o < nq * d; ++o) {
    const double qx = qv[o];
    const double s = qx >= 0 ? 1.0 / (1.0 + std::exp(-qx))
                             : std::exp(qx) / (1.0 + std::exp(qx));
    sig[o] = s;
    ratio[o] = num[o] / den[o];
    out[o] = s * ratio[o];
  }
  Node* qn = q.node();
  Node* kn = k.node();
  Node* vn = v.node();
  Node* an = a.node();
  return make_op(
      {nq, d}, std::move(out),
      {q.node_ptr(), k.node_ptr(), v.node_ptr(), a.node_ptr()},
      [qn, kn, vn, an, nq, nkv, d, ea = std::move(ea), ek = std::move(ek),
       ekv = std::move(ekv), den = std::move(den), ratio = std::move(ratio),
       sig = std::move(sig)](Node& self) {
        // p_id = g_id * sig_id / den_id drives every input gradient:
        //   dQ = g ⊙ Y ⊙ sig(1-sig)
        //   dV = ek ⊙ (ea^T p)
        //   dK = ek ⊙ [V ⊙ (ea^T p) - ea^T (p ⊙ Y)]
        //   dA = ea ⊙ [p (ek⊙V)^T - (p ⊙ Y) ek^T]
        std::vector<double> p(nq * d), py(nq * d);
        for (std::size_t o = 0; o < nq * d; ++o) {
          p[o] = self.grad[o] * sig[o] / den[o];
          py[o] = p[o] * ratio[o];
          if (qn->requires_grad) {
            qn->ensure_grad();
            qn->grad[o] += self.grad[o] * ratio[o] * sig[o] * (1.0 - sig[o]);
          }
        }
        if (vn->requires_grad || kn->requires_grad) {
          std::vector<double> eatp(nkv * d);
          gemm_tn(ea.data(), p.data(), eatp.data(), nq, nkv, d, false);
          if (vn->requires_grad) {
            vn->ensure_grad();
            for (std::size_t i = 0; i < nkv * d; ++i) {
              vn->grad[i] += ek[i] * eatp[i];
            }
          }
          if (kn->requires_grad) {
            kn->ensure_grad();
            std::vector<double> eatpy(nkv * d);
            gemm_tn(ea.data(), py.data(), eatpy.data(), nq, nkv, d, false);
            for (std::size_t i = 0; i < nkv * d; ++i) {
              kn->grad[i] += vn->value[i] * ek[i] * eatp[i] - ek[i] * eatpy[i];
            }
          }
        }
        if (an->requires_grad) {
          an->ensure_grad();
          std::vector<double> t1(nq * nkv), t2(nq * nkv);
          gemm_nt(p.data(), ekv.data(), t1.data(), nq, d, nkv, false);
          gemm_nt(py.data(), ek.data(), t2.data(), nq, d, nkv, false);
          for (std::size_t i = 0; i < nq * nkv; ++i) {
            an->grad[i] += ea[i] * (t1[i] - t2[i]);
          }
        }
      },
      "aafm");
}

// --- backward --------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;  // graph has no differentiable leaves

  // Iterative post-order DFS; cycles are impossible by construction (ops
  // only reference existing nodes) so no cycle check is made.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Interior grads are scratch for this pass; only leaves accumulate
  // across repeated calls.
  for (Node* n : order) {
    if (n->backprop) n->grad.assign(n->size(), 0.0);
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double h) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor y = f(x);
  if (y.size() != 1) throw ContractError("grad_check: f must return a scalar");
  backward(y);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  NoGradGuard no_grad;
  auto& vals = x.values_mut();
  double max_err = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double saved = vals[i];
    vals[i] = saved + h;
    const double up = f(x).item();
    vals[i] = saved - h;
    const double down = f(x).item();
    vals[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace icam
