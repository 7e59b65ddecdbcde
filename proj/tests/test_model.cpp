#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "icam/model.hpp"
#include "icam/rng.hpp"

using namespace icam;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1,
                     double hi = 1) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> data(n);
  for (auto& x : data) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(data));
}

// Direct double-loop evaluation of the attention-free mix, written
// independently of the library kernel: out_i = sigmoid(q_i) *
// (sum_j e^{a_ij} e^{k_jd} v_jd) / (sum_j e^{a_ij} e^{k_jd}).
std::vector<double> aafm_oracle(const Tensor& q, const Tensor& k,
                                const Tensor& v, const Tensor& a) {
  const std::size_t nq = q.rows(), d = q.cols(), nkv = k.rows();
  std::vector<double> out(nq * d);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t t = 0; t < d; ++t) {
      double num = 0.0, den = 0.0;
      for (std::size_t j = 0; j < nkv; ++j) {
        const double w = std::exp(a.at(i, j)) * std::exp(k.at(j, t));
        num += w * v.at(j, t);
        den += w;
      }
      const double sig = 1.0 / (1.0 + std::exp(-q.at(i, t)));
      out[i * d + t] = sig * num / den;
    }
  }
  return out;
}

ModelConfig tiny_config(Problem p, int d = 8, int layers = 2) {
  ModelConfig cfg;
  cfg.problem = p;
  cfg.embed_dim = d;
  cfg.ff_dim = 4 * d;
  cfg.layers = layers;
  cfg.clip = 50.0;
  return cfg;
}

}  // namespace

TEST_CASE("adaptation bias examples") {
  Tensor alpha = Tensor::scalar(1.0);
  DistanceMatrix dm;
  dm.n = 2;
  dm.d = {0.0, 1.0, 1.0, 0.0};
  Tensor a = adaptation_bias(2, dm, alpha);
  CHECK(a.at(0, 1) == doctest::Approx(-1.0));  // log2(2) = 1
  CHECK(a.at(0, 0) == 0.0);
  CHECK(a.at(1, 1) == 0.0);

  DistanceMatrix dm2;
  dm2.n = 2;
  dm2.d = {0.0, 0.1, 0.1, 0.0};
  Tensor a2 = adaptation_bias(1024, dm2, alpha);
  CHECK(a2.at(0, 1) == doctest::Approx(-1.0));  // log2(1024) = 10

  CHECK_THROWS_AS(adaptation_bias(1, dm, alpha), ArgumentError);
}

TEST_CASE("aafm: uniform weights degenerate to sigmoid(q) * column mean") {
  Rng rng(2);
  Tensor q = random_tensor({3, 4}, rng);
  Tensor k = Tensor::zeros({5, 4});
  Tensor v = random_tensor({5, 4}, rng);
  Tensor a = Tensor::zeros({3, 5});
  Tensor out = aafm(q, k, v, a);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t t = 0; t < 4; ++t) {
      double mean = 0.0;
      for (std::size_t j = 0; j < 5; ++j) mean += v.at(j, t);
      mean /= 5.0;
      const double sig = 1.0 / (1.0 + std::exp(-q.at(i, t)));
      CHECK(std::abs(out.at(i, t) - sig * mean) <= 1e-12);
    }
  }
}

TEST_CASE("aafm: single key reduces to sigmoid(q) * v") {
  Rng rng(3);
  Tensor q = random_tensor({4, 6}, rng);
  Tensor k = random_tensor({1, 6}, rng);
  Tensor v = random_tensor({1, 6}, rng);
  Tensor a = random_tensor({4, 1}, rng);
  Tensor out = aafm(q, k, v, a);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t t = 0; t < 6; ++t) {
      const double sig = 1.0 / (1.0 + std::exp(-q.at(i, t)));
      CHECK(std::abs(out.at(i, t) - sig * v.at(0, t)) <= 1e-12);
    }
  }
}

TEST_CASE("aafm matches the scalar-loop oracle, including masked rows") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const auto nq = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const auto nkv = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const auto d = static_cast<std::size_t>(rng.uniform_int(1, 8));
    Tensor q = random_tensor({nq, d}, rng, -2, 2);
    Tensor k = random_tensor({nkv, d}, rng, -2, 2);
    Tensor v = random_tensor({nkv, d}, rng, -2, 2);
    Tensor a = random_tensor({nq, nkv}, rng, -3, 0);
    if (nkv > 1) {
      // mask a few entries with the sentinel, keeping one key per row
      auto& av = a.values_mut();
      for (std::size_t i = 0; i < nq; ++i) {
        for (std::size_t j = 0; j + 1 < nkv; ++j) {
          if (rng.uniform() < 0.3) av[i * nkv + j] = kMaskSentinel;
        }
      }
    }
    Tensor out = aafm(q, k, v, a);
    const auto expect = aafm_oracle(q, k, v, a);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(std::abs(out.at(i) - expect[i]) <= 1e-10);
    }
  }
}

TEST_CASE("aafm rejects a fully masked row") {
  Rng rng(6);
  Tensor q = random_tensor({2, 3}, rng);
  Tensor k = random_tensor({2, 3}, rng);
  Tensor v = random_tensor({2, 3}, rng);
  Tensor a = Tensor::full({2, 2}, kMaskSentinel);
  CHECK_THROWS_AS(aafm(q, k, v, a), InfeasibleError);
}

TEST_CASE("aafm gradient matches finite differences") {
  Rng rng(7);
  Tensor k = random_tensor({4, 5}, rng);
  Tensor v = random_tensor({4, 5}, rng);
  Tensor a = random_tensor({3, 4}, rng, -2, 0);
  CHECK(grad_check(
            [&](const Tensor& q) { return sum(aafm(q, k, v, a)); },
            random_tensor({3, 5}, rng)) <= 1e-6);
  Tensor q = random_tensor({3, 5}, rng);
  CHECK(grad_check(
            [&](const Tensor& kk) { return sum(aafm(q, kk, v, a)); },
            random_tensor({4, 5}, rng)) <= 1e-6);
  CHECK(grad_check(
            [&](const Tensor& vv) { return sum(aafm(q, k, vv, a)); },
            random_tensor({4, 5}, rng)) <= 1e-6);
  CHECK(grad_check(
            [&](const Tensor& aa) { return sum(aafm(q, k, v, aa)); },
            random_tensor({3, 4}, rng, -2, 0)) <= 1e-6);
}

TEST_CASE("one attention-free layer passes the gradient check at 1e-4") {
  // mirrors an encoder layer: projections, mix, residual + normalization
  Rng rng(8);
  const std::size_t n = 5, d = 6;
  Tensor wq = random_tensor({d, d}, rng);
  Tensor wk = random_tensor({d, d}, rng);
  Tensor wv = random_tensor({d, d}, rng);
  Tensor gamma = Tensor::full({d}, 1.0);
  Tensor beta = Tensor::zeros({d});
  Tensor bias = random_tensor({n, n}, rng, -2, 0);
  const double err = grad_check(
      [&](const Tensor& h) {
        Tensor mixed = aafm(matmul(h, wq), matmul(h, wk), matmul(h, wv), bias);
        return sum(instance_norm(add(h, mixed), gamma, beta));
      },
      random_tensor({n, d}, rng));
  CHECK(err <= 1e-4);
}

TEST_CASE("encoder is permutation-equivariant") {
  for (Problem problem : {Problem::tsp, Problem::cvrp}) {
    const Model model = Model::init(tiny_config(problem), 11);
    const Instance inst = generate_uniform(
        problem, 7, CapacityRule::fixed(30), 21);
    const ParamView pv = model.make_view();
    NoGradGuard no_grad;
    const Tensor h = model.encode(pv, inst, distance_matrix(inst)).h;

    // permute nodes (depot stays put for cvrp) and compare rows
    std::vector<int> perm(static_cast<std::size_t>(inst.node_count()));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(4);
    const std::size_t lo = problem == Problem::cvrp ? 1 : 0;
    for (std::size_t i = perm.size() - 1; i > lo; --i) {
      std::swap(perm[i], perm[lo + static_cast<std::size_t>(rng.uniform_int(
                             0, static_cast<int>(i - lo)))]);
    }
    Instance shuffled = inst;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.coords[i] = inst.coords[static_cast<std::size_t>(perm[i])];
      if (problem == Problem::cvrp) {
        shuffled.demands[i] = inst.demands[static_cast<std::size_t>(perm[i])];
      }
    }
    const Tensor h2 = model.encode(pv, shuffled, distance_matrix(shuffled)).h;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      for (std::size_t t = 0; t < h.cols(); ++t) {
        CHECK(std::abs(h2.at(i, t) -
                       h.at(static_cast<std::size_t>(perm[i]), t)) <= 1e-9);
      }
    }
  }
}

TEST_CASE("scale label reaches the embeddings through the bias") {
  // same coordinates, different claimed scale -> different encodings; with
  // alpha frozen at 0 the bias vanishes and the scale cannot matter.
  const Model model = Model::init(tiny_config(Problem::tsp), 13);
  const Instance inst = generate_uniform(Problem::tsp, 6, CapacityRule::fixed(0), 5);
  const DistanceMatrix dm = distance_matrix(inst);
  const ParamView pv = model.make_view();
  NoGradGuard no_grad;

  auto encode_with_scale = [&](const ParamView& view, int scale) {
    // reproduce the encoder with an explicit scale label
    const std::size_t n = static_cast<std::size_t>(inst.node_count());
    std::vector<double> xs(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i * 2] = inst.coords[i][0];
      xs[i * 2 + 1] = inst.coords[i][1];
    }
    Tensor h = add_rowvec(matmul(Tensor::from({n, 2}, std::move(xs)),
                                 view.embed_w),
                          view.embed_b);
    for (const LayerParams& lp : view.layers) {
      Tensor a = adaptation_bias(scale, dm, lp.alpha);
      Tensor mixed = aafm(matmul(h, lp.wq), matmul(h, lp.wk), matmul(h, lp.wv), a);
      h = instance_norm(add(h, mixed), lp.norm1_gamma, lp.norm1_beta);
      Tensor ff = add_rowvec(
          matmul(relu(add_rowvec(matmul(h, lp.ff_w1), lp.ff_b1)), lp.ff_w2),
          lp.ff_b2);
      h = instance_norm(add(h, ff), lp.norm2_gamma, lp.norm2_beta);
    }
    return h;
  };

  const Tensor h6 = encode_with_scale(pv, 6);
  const Tensor h600 = encode_with_scale(pv, 600);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < h6.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(h6.at(i) - h600.at(i)));
  }
  CHECK(max_diff > 1e-6);

  // ablation: zero alpha removes the instance conditioning entirely
  Model flat = Model::init(tiny_config(Problem::tsp), 13);
  for (auto& [name, t] : flat.params().entries()) {
    if (name.size() >= 5 && name.substr(name.size() - 5) == "alpha" &&
        name.rfind("config.", 0) != 0) {
      const_cast<Tensor&>(t).values_mut()[0] = 0.0;
    }
  }
  const ParamView pv0 = flat.make_view();
  const Tensor z6 = encode_with_scale(pv0, 6);
  const Tensor z600 = encode_with_scale(pv0, 600);
  for (std::size_t i = 0; i < z6.size(); ++i) {
    CHECK(z6.at(i) == z600.at(i));
  }
}

TEST_CASE("decoder: single feasible node gets probability 1") {
  const Model model = Model::init(tiny_config(Problem::tsp), 17);
  const Instance inst = generate_uniform(Problem::tsp, 4, CapacityRule::fixed(0), 3);
  const DistanceMatrix dm = distance_matrix(inst);
  const ParamView pv = model.make_view();
  NoGradGuard no_grad;
  const EncoderResult enc = model.encode(pv, inst, dm);
  DecoderStepInput in;
  in.first = {0};
  in.last = {2};
  in.mask = {1, 1, 1, 0};
  const Tensor p = model.decoder_probs(pv, enc, inst, dm, in);
  CHECK(p.at(0, 3) == 1.0);
  CHECK(p.at(0, 0) == 0.0);
  CHECK(p.at(0, 1) == 0.0);
  CHECK(p.at(0, 2) == 0.0);
}

TEST_CASE("decoder: probabilities are a masked distribution with bounded logits") {
  const ModelConfig cfg = tiny_config(Problem::tsp);
  const Model model = Model::init(cfg, 19);
  const Instance inst = generate_uniform(Problem::tsp, 8, CapacityRule::fixed(0), 23);
  const DistanceMatrix dm = distance_matrix(inst);
  const ParamView pv = model.make_view();
  NoGradGuard no_grad;
  const EncoderResult enc = model.encode(pv, inst, dm);
  DecoderStepInput in;
  in.first = {1, 2};
  in.last = {4, 5};
  in.mask.assign(16, 0);
  in.mask[1] = in.mask[4] = 1;        // row 0: visited 1, 4
  in.mask[8 + 2] = in.mask[8 + 5] = 1;  // row 1: visited 2, 5
  const Tensor p = model.decoder_probs(pv, enc, inst, dm, in);
  for (std::size_t r = 0; r < 2; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      if (in.mask[r * 8 + j]) {
        CHECK(p.at(r, j) == 0.0);
      } else {
        CHECK(p.at(r, j) > 0.0);
        // the clipped logits bound every probability ratio by e^{2 xi}
        CHECK(p.at(r, j) >= std::exp(-2.0 * cfg.clip) / 8.0);
      }
      total += p.at(r, j);
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("log-prob: a 2-node tour is forced, so log p = 0") {
  const Model model = Model::init(tiny_config(Problem::tsp), 23);
  const Instance inst = generate_uniform(Problem::tsp, 2, CapacityRule::fixed(0), 2);
  const ParamView pv = model.make_view();
  NoGradGuard no_grad;
  const Tensor lp =
      model.solution_log_prob(pv, inst, distance_matrix(inst), {0, 1});
  CHECK(lp.item() == 0.0);
}

TEST_CASE("log-prob: completions of a fixed start sum to probability 1") {
  const Model model = Model::init(tiny_config(Problem::tsp), 29);
  const Instance inst = generate_uniform(Problem::tsp, 4, CapacityRule::fixed(0), 31);
  const DistanceMatrix dm = distance_matrix(inst);
  const ParamView pv = model.make_view();
  NoGradGuard no_grad;
  std::vector<int> rest = {1, 2, 3};
  double total = 0.0;
  do {
    std::vector<int> order = {0, rest[0], rest[1], rest[2]};
    total += std::exp(model.solution_log_prob(pv, inst, dm, order).item());
  } while (std::next_permutation(rest.begin(), rest.end()));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("log-prob equals the sum of per-step decoder logs") {
  for (Problem problem : {Problem::tsp, Problem::cvrp}) {
    const Model model = Model::init(tiny_config(problem), 37);
    const Instance inst =
        generate_uniform(problem, 5, CapacityRule::fixed(12), 41);
    const DistanceMatrix dm = distance_matrix(inst);
    const ParamView pv = model.make_view();
    NoGradGuard no_grad;

    // build a feasible order greedily by replaying the decoder
    std::vector<int> order;
    double manual = 0.0;
    const EncoderResult enc = model.encode(pv, inst, dm);
    if (problem == Problem::tsp) {
      std::vector<std::uint8_t> visited(5, 0);
      visited[0] = 1;
      order = {0};
      std::size_t last = 0;
      for (int t = 1; t < 5; ++t) {
        DecoderStepInput in;
        in.first = {0};
        in.last = {last};
        in.mask = visited;
        const Tensor p = model.decoder_probs(pv, enc, inst, dm, in);
        std::size_t best = 0;
        double best_v = -1;
        for (std::size_t j = 0; j < 5; ++j) {
          if (p.at(0, j) > best_v) {
            best_v = p.at(0, j);
            best = j;
          }
        }
        manual += std::log(best_v);
        visited[best] = 1;
        order.push_back(static_cast<int>(best));
        last = best;
      }
    } else {
      // serve customers one by one, returning to the depot when needed
      std::vector<std::uint8_t> visited(6, 0);
      order = {0, 1};
      visited[1] = 1;
      int remaining = inst.capacity - inst.demands[1];
      std::size_t last = 1;
      int served = 1;
      while (served < 5) {
        DecoderStepInput in;
        in.last = {last};
        in.cap_frac = {static_cast<double>(remaining) / inst.capacity};
        in.mask.assign(6, 0);
        in.mask[0] = last == 0 ? 1 : 0;
        for (int j = 1; j < 6; ++j) {
          if (visited[static_cast<std::size_t>(j)] ||
              inst.demands[static_cast<std::size_t>(j)] > remaining) {
            in.mask[static_cast<std::size_t>(j)] = 1;
          }
        }
        const Tensor p = model.decoder_probs(pv, enc, inst, dm, in);
        std::size_t best = 0;
        double best_v = -1;
        for (std::size_t j = 0; j < 6; ++j) {
          if (p.at(0, j) > best_v) {
            best_v = p.at(0, j);
            best = j;
          }
        }
        manual += std::log(best_v);
        order.push_back(static_cast<int>(best));
        if (best == 0) {
          remaining = inst.capacity;
          last = 0;
        } else {
          visited[best] = 1;
          remaining -= inst.demands[best];
          served += 1;
          last = best;
        }
      }
      order.push_back(0);
    }
    const double lp = model.solution_log_prob(pv, inst, dm, order).item();
    CHECK(std::abs(lp - manual) <= 1e-12);
  }
}

TEST_CASE("log-prob gradient matches finite differences on a tiny model") {
  for (Problem problem : {Problem::tsp, Problem::cvrp}) {
    Model model = Model::init(tiny_config(problem), 43);
    const Instance inst =
        generate_uniform(problem, problem == Problem::tsp ? 6 : 5,
                         CapacityRule::fixed(15), 47);
    const DistanceMatrix dm = distance_matrix(inst);

    // teacher-force an arbitrary feasible order
    std::vector<int> order;
    if (problem == Problem::tsp) {
      order = {0, 3, 1, 5, 2, 4};
    } else {
      int rem = inst.capacity;
      order = {0};
      for (int c = 1; c <= 5; ++c) {
        if (inst.demands[static_cast<std::size_t>(c)] > rem) {
          order.push_back(0);
          rem = inst.capacity;
        }
        order.push_back(c);
        rem -= inst.demands[static_cast<std::size_t>(c)];
      }
      order.push_back(0);
    }

    // analytic gradients through one backward pass on a shared view
    const ParamView pv = model.make_view();
    backward(model.solution_log_prob(pv, inst, dm, order));

    const double h = 1e-5;
    double max_err = 0.0;
    ParameterStore& store = model.params();
    for (std::size_t e = 0; e < store.size(); ++e) {
      const std::string& name = store.entries()[e].first;
      if (name.rfind("config.", 0) == 0) continue;
      auto analytic = pv.ordered[e].grad();
      auto& vals = store.get(name).values_mut();
      // probe a few coordinates per tensor to keep the test quick
      const std::size_t stride = std::max<std::size_t>(1, vals.size() / 3);
      for (std::size_t i = 0; i < vals.size(); i += stride) {
        const double saved = vals[i];
        NoGradGuard no_grad;
        vals[i] = saved + h;
        const double up =
            model.solution_log_prob(model.make_view(), inst, dm, order).item();
        vals[i] = saved - h;
        const double down =
            model.solution_log_prob(model.make_view(), inst, dm, order).item();
        vals[i] = saved;
        const double numeric = (up - down) / (2 * h);
        max_err = std::max(max_err,
                           std::abs(analytic[i] - numeric) /
                               std::max(1.0, std::abs(analytic[i])));
      }
    }
    CHECK(max_err <= 1e-4);
  }
}

TEST_CASE("shared alpha mode: one leaf feeds every bias site") {
  ModelConfig cfg = tiny_config(Problem::tsp);
  cfg.alpha_sharing = AlphaSharing::shared;
  Model model = Model::init(cfg, 53);
  REQUIRE(model.params().has("model.alpha"));
  CHECK(!model.params().has("encoder.layer0.alpha"));
  CHECK(!model.params().has("compat.alpha"));

  const Instance inst = generate_uniform(Problem::tsp, 6, CapacityRule::fixed(0), 59);
  const DistanceMatrix dm = distance_matrix(inst);
  const std::vector<int> order = {0, 2, 4, 1, 3, 5};

  // analytic gradient of the shared scalar accumulates across all sites
  const ParamView pv = model.make_view();
  CHECK(pv.layers[0].alpha.node() == pv.dec_alpha.node());
  CHECK(pv.compat_alpha.node() == pv.dec_alpha.node());
  backward(model.solution_log_prob(pv, inst, dm, order));
  std::size_t alpha_idx = 0;
  for (std::size_t e = 0; e < model.params().size(); ++e) {
    if (model.params().entries()[e].first == "model.alpha") alpha_idx = e;
  }
  const double analytic = pv.ordered[alpha_idx].grad()[0];

  // central difference through the master store
  const double h = 1e-5;
  auto& vals = model.params().get("model.alpha").values_mut();
  NoGradGuard no_grad;
  const double saved = vals[0];
  vals[0] = saved + h;
  const double up =
      model.solution_log_prob(model.make_view(), inst, dm, order).item();
  vals[0] = saved - h;
  const double down =
      model.solution_log_prob(model.make_view(), inst, dm, order).item();
  vals[0] = saved;
  const double numeric = (up - down) / (2 * h);
  CHECK(std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)) <=
        1e-5);
}

TEST_CASE("shared alpha mode survives a checkpoint round trip") {
  ModelConfig cfg = tiny_config(Problem::cvrp);
  cfg.alpha_sharing = AlphaSharing::shared;
  cfg.alpha_init = 0.7;
  const Model model = Model::init(cfg, 61);
  model.save("shared_alpha_test.bin");
  const Model loaded = Model::load("shared_alpha_test.bin");
  CHECK(loaded.config().alpha_sharing == AlphaSharing::shared);
  CHECK(loaded.config().problem == Problem::cvrp);
  CHECK(loaded.alpha_mean() == model.alpha_mean());

  const Instance inst = generate_uniform(Problem::cvrp, 5, CapacityRule::fixed(20), 67);
  const DistanceMatrix dm = distance_matrix(inst);
  NoGradGuard no_grad;
  const Tensor h1 = model.encode(model.make_view(), inst, dm).h;
  const Tensor h2 = loaded.encode(loaded.make_view(), inst, dm).h;
  for (std::size_t i = 0; i < h1.size(); ++i) CHECK(h1.at(i) == h2.at(i));
  std::remove("shared_alpha_test.bin");
}
