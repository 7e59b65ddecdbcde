#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "icam/detail/node.hpp"
#include "icam/errors.hpp"

namespace icam {

// Dense float64 tensor with reverse-mode autodiff. A Tensor is a cheap
// handle onto a tape node; building ops under grad mode records the tape,
// backward() walks it once in reverse topological order.
//
// Values are immutable after an op constructs them. The exceptions are
// grad slots and leaf tensors (parameters), whose values an optimizer may
// rewrite between graphs via values_mut().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data);
  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->size(); }
  std::size_t rows() const { return node_->shape[0]; }
  std::size_t cols() const {
    return node_->shape.size() > 1 ? node_->shape[1] : 1;
  }
  bool is_scalar() const { return size() == 1; }

  double item() const;
  double at(std::size_t i) const { return node_->value[i]; }
  double at(std::size_t i, std::size_t j) const {
    return node_->value[i * cols() + j];
  }
  std::span<const double> values() const { return node_->value; }
  // Mutable access, valid for leaves only (optimizer updates, FD probes).
  std::vector<double>& values_mut();

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b);
  std::span<const double> grad() const;
  void zero_grad();

  detail::Node* node() const { return node_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

// RAII guard disabling tape recording on the current thread. Ops built
// under the guard compute values only.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// --- ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Elementwise ops broadcast a size-1 operand against any shape; otherwise
// shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor sum(const Tensor& a);                      // -> {1}
Tensor mean_rows(const Tensor& m);                // {n,d} -> {1,d}
Tensor rows(const Tensor& m, const std::vector<std::size_t>& idx);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
// v[i] = m[i, col[i]]
Tensor pick(const Tensor& m, const std::vector<std::size_t>& col);
// m + v broadcast over rows; v is {d} or {1,d}
Tensor add_rowvec(const Tensor& m, const Tensor& v);
// Scatter a {k} vector into a {n} vector at idx (rest zero).
Tensor expand_to(const Tensor& v, const std::vector<std::size_t>& idx,
                 std::size_t n);

// Masked softmax. mask[i] != 0 excludes entry i; excluded entries are
// exactly 0 in the output and each row of kept entries sums to 1.
// logits is {n} with mask length n, or {m,n} with mask length m*n
// (row-major, applied row-wise).
Tensor softmax_masked(const Tensor& logits, const std::vector<std::uint8_t>& mask);

// Normalizes each feature column over the row axis: (x - mean) / sqrt(var
// + eps), then applies the per-feature affine gamma/beta ({d} tensors).
Tensor instance_norm(const Tensor& h, const Tensor& gamma, const Tensor& beta,
                     double eps = 1e-5);

// Attention-free mixing: out_i = sigmoid(q_i) ⊙ Σ_j e^{A_ij + k_j} ⊙ v_j
//                                            / Σ_j e^{A_ij + k_j}.
// Stabilized by subtracting, per output element (i,d), the max over j of
// (A_ij + K_jd); exact in real arithmetic. Entries of A at or below
// kMaskSentinel are treated as masked out; a fully masked row is an error.
Tensor aafm(const Tensor& q, const Tensor& k, const Tensor& v,
            const Tensor& a);

inline constexpr double kMaskSentinel = -1e9;

// --- autodiff --------------------------------------------------------

// Reverse pass from a scalar loss. Gradients accumulate; they are not
// cleared between calls.
void backward(const Tensor& loss);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double h = 1e-5);

std::string shape_str(const std::vector<std::size_t>& s);

}  // namespace icam
