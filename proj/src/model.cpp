#include "icam/model.hpp"

#include <cmath>

#include "icam/rng.hpp"

namespace icam {

void ModelConfig::validate() const {
  if (embed_dim <= 0 || ff_dim <= 0 || layers <= 0) {
    throw ArgumentError("model dimensions must be positive");
  }
  if (clip <= 0) throw ArgumentError("clip parameter must be positive");
}

Tensor adaptation_bias(int scale, const DistanceMatrix& d, const Tensor& alpha) {
  if (scale < 2) {
    throw ArgumentError("adaptation bias needs scale >= 2 (log2(1) = 0 would "
                        "erase the signal)");
  }
  const double factor = -std::log2(static_cast<double>(scale));
  std::vector<double> base(d.d.size());
  for (std::size_t i = 0; i < base.size(); ++i) base[i] = factor * d.d[i];
  Tensor base_t = Tensor::from({static_cast<std::size_t>(d.n),
                                static_cast<std::size_t>(d.n)},
                               std::move(base));
  return mul(alpha, base_t);
}

Tensor adaptation_bias_rows(int scale, const DistanceMatrix& d,
                            const std::vector<std::size_t>& origin,
                            const Tensor& alpha) {
  if (scale < 2) {
    throw ArgumentError("adaptation bias needs scale >= 2");
  }
  const double factor = -std::log2(static_cast<double>(scale));
  const std::size_t n = static_cast<std::size_t>(d.n);
  std::vector<double> base(origin.size() * n);
  for (std::size_t t = 0; t < origin.size(); ++t) {
    const double* row = d.d.data() + origin[t] * n;
    for (std::size_t j = 0; j < n; ++j) base[t * n + j] = factor * row[j];
  }
  Tensor base_t = Tensor::from({origin.size(), n}, std::move(base));
  return mul(alpha, base_t);
}

namespace {

Tensor init_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> data(fan_in * fan_out);
  for (auto& x : data) x = rng.uniform(-bound, bound);
  return Tensor::from({fan_in, fan_out}, std::move(data));
}

std::string layer_prefix(int l) {
  return "encoder.layer" + std::to_string(l) + ".";
}

}  // namespace

Model Model::init(ModelConfig cfg, std::uint64_t seed) {
  Model model(std::move(cfg));
  const ModelConfig& c = model.cfg_;
  const auto d = static_cast<std::size_t>(c.embed_dim);
  const auto f = static_cast<std::size_t>(c.ff_dim);
  Rng rng(seed);
  ParameterStore& p = model.params_;

  if (c.problem == Problem::tsp) {
    p.add("embed.w", init_weight(rng, 2, d));
    p.add("embed.b", Tensor::zeros({d}));
  } else {
    p.add("embed.w", init_weight(rng, 3, d));  // (x, y, demand/capacity)
    p.add("embed.b", Tensor::zeros({d}));
    p.add("embed_depot.w", init_weight(rng, 2, d));
    p.add("embed_depot.b", Tensor::zeros({d}));
  }
  if (c.alpha_sharing == AlphaSharing::shared) {
    p.add("model.alpha", Tensor::scalar(c.alpha_init));
  }
  for (int l = 0; l < c.layers; ++l) {
    const std::string pre = layer_prefix(l);
    p.add(pre + "aafm.wq", init_weight(rng, d, d));
    p.add(pre + "aafm.wk", init_weight(rng, d, d));
    p.add(pre + "aafm.wv", init_weight(rng, d, d));
    if (c.alpha_sharing == AlphaSharing::per_layer) {
      p.add(pre + "alpha", Tensor::scalar(c.alpha_init));
    }
    p.add(pre + "norm1.gamma", Tensor::full({d}, 1.0));
    p.add(pre + "norm1.beta", Tensor::zeros({d}));
    p.add(pre + "ff.w1", init_weight(rng, d, f));
    p.add(pre + "ff.b1", Tensor::zeros({f}));
    p.add(pre + "ff.w2", init_weight(rng, f, d));
    p.add(pre + "ff.b2", Tensor::zeros({d}));
    p.add(pre + "norm2.gamma", Tensor::full({d}, 1.0));
    p.add(pre + "norm2.beta", Tensor::zeros({d}));
  }
  const std::size_t ctx_dim = c.problem == Problem::tsp ? 2 * d : d + 1;
  p.add("decoder.aafm.wq", init_weight(rng, ctx_dim, d));
  p.add("decoder.aafm.wk", init_weight(rng, d, d));
  p.add("decoder.aafm.wv", init_weight(rng, d, d));
  if (c.alpha_sharing == AlphaSharing::per_layer) {
    p.add("decoder.alpha", Tensor::scalar(c.alpha_init));
    p.add("compat.alpha", Tensor::scalar(c.alpha_init));
  }

  // Config travels inside the checkpoint as pseudo-parameters so a saved
  // model is self-describing. The optimizer and views skip this prefix.
  p.add("config.problem", Tensor::scalar(c.problem == Problem::tsp ? 0 : 1));
  p.add("config.embed_dim", Tensor::scalar(c.embed_dim));
  p.add("config.ff_dim", Tensor::scalar(c.ff_dim));
  p.add("config.layers", Tensor::scalar(c.layers));
  p.add("config.clip", Tensor::scalar(c.clip));
  p.add("config.alpha_init", Tensor::scalar(c.alpha_init));
  p.add("config.alpha_sharing", Tensor::scalar(
      c.alpha_sharing == AlphaSharing::shared ? 0 : 1));
  return model;
}

Model Model::load(const std::string& path) {
  ParameterStore store = load_checkpoint(path);
  ModelConfig cfg;
  cfg.problem =
      store.get("config.problem").item() == 0 ? Problem::tsp : Problem::cvrp;
  cfg.embed_dim = static_cast<int>(store.get("config.embed_dim").item());
  cfg.ff_dim = static_cast<int>(store.get("config.ff_dim").item());
  cfg.layers = static_cast<int>(store.get("config.layers").item());
  cfg.clip = store.get("config.clip").item();
  cfg.alpha_init = store.get("config.alpha_init").item();
  cfg.alpha_sharing = store.get("config.alpha_sharing").item() == 0
                          ? AlphaSharing::shared
                          : AlphaSharing::per_layer;
  Model model(cfg);
  model.params_ = std::move(store);
  return model;
}

void Model::save(const std::string& path, CheckpointDtype dtype) const {
  save_checkpoint(params_, path, dtype);
}

ParamView Model::make_view(bool copy_values) const {
  ParamView v;
  v.ordered.reserve(params_.size());
  auto leaf = [&](const std::string& name) -> Tensor {
    const Tensor& src = params_.get(name);
    Tensor t = copy_values
                   ? Tensor::from(src.shape(),
                                  std::vector<double>(src.values().begin(),
                                                      src.values().end()))
                   : src;
    t.set_requires_grad(true);
    return t;
  };
  // Views are keyed by store order so gradient extraction lines up.
  std::unordered_map<std::string, Tensor> by_name;
  for (const auto& [name, src] : params_.entries()) {
    if (name.rfind("config.", 0) == 0) {
      v.ordered.push_back(Tensor());  // placeholder, never touched
      continue;
    }
    Tensor t = leaf(name);
    by_name.emplace(name, t);
    v.ordered.push_back(t);
  }
  auto get = [&](const std::string& name) { return by_name.at(name); };

  v.embed_w = get("embed.w");
  v.embed_b = get("embed.b");
  if (cfg_.problem == Problem::cvrp) {
    v.embed_depot_w = get("embed_depot.w");
    v.embed_depot_b = get("embed_depot.b");
  }
  Tensor shared_alpha;
  if (cfg_.alpha_sharing == AlphaSharing::shared) {
    shared_alpha = get("model.alpha");
  }
  v.layers.resize(static_cast<std::size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pre = layer_prefix(l);
    LayerParams& lp = v.layers[static_cast<std::size_t>(l)];
    lp.wq = get(pre + "aafm.wq");
    lp.wk = get(pre + "aafm.wk");
    lp.wv = get(pre + "aafm.wv");
    lp.alpha = cfg_.alpha_sharing == AlphaSharing::shared ? shared_alpha
                                                          : get(pre + "alpha");
    lp.norm1_gamma = get(pre + "norm1.gamma");
    lp.norm1_beta = get(pre + "norm1.beta");
    lp.ff_w1 = get(pre + "ff.w1");
    lp.ff_b1 = get(pre + "ff.b1");
    lp.ff_w2 = get(pre + "ff.w2");
    lp.ff_b2 = get(pre + "ff.b2");
    lp.norm2_gamma = get(pre + "norm2.gamma");
    lp.norm2_beta = get(pre + "norm2.beta");
  }
  v.dec_wq = get("decoder.aafm.wq");
  v.dec_wk = get("decoder.aafm.wk");
  v.dec_wv = get("decoder.aafm.wv");
  if (cfg_.alpha_sharing == AlphaSharing::shared) {
    v.dec_alpha = shared_alpha;
    v.compat_alpha = shared_alpha;
  } else {
    v.dec_alpha = get("decoder.alpha");
    v.compat_alpha = get("compat.alpha");
  }
  return v;
}

EncoderResult Model::encode(const ParamView& pv, const Instance& inst,
                            const DistanceMatrix& dm) const {
  inst.validate();
  if (inst.problem != cfg_.problem) {
    throw ContractError("instance problem does not match the model");
  }
  const std::size_t n = static_cast<std::size_t>(inst.node_count());

  Tensor h;
  if (cfg_.problem == Problem::tsp) {
    std::vector<double> xs(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i * 2] = inst.coords[i][0];
      xs[i * 2 + 1] = inst.coords[i][1];
    }
    h = add_rowvec(matmul(Tensor::from({n, 2}, std::move(xs)), pv.embed_w),
                   pv.embed_b);
  } else {
    std::vector<double> depot = {inst.coords[0][0], inst.coords[0][1]};
    Tensor hd = add_rowvec(
        matmul(Tensor::from({1, 2}, std::move(depot)), pv.embed_depot_w),
        pv.embed_depot_b);
    std::vector<double> xs((n - 1) * 3);
    for (std::size_t i = 1; i < n; ++i) {
      xs[(i - 1) * 3] = inst.coords[i][0];
      xs[(i - 1) * 3 + 1] = inst.coords[i][1];
      xs[(i - 1) * 3 + 2] =
          static_cast<double>(inst.demands[i]) / inst.capacity;
    }
    Tensor hc = add_rowvec(
        matmul(Tensor::from({n - 1, 3}, std::move(xs)), pv.embed_w), pv.embed_b);
    h = concat_rows(hd, hc);
  }

  // The distance term is shared by all layers; each layer applies its own
  // alpha.
  const double factor = -std::log2(static_cast<double>(inst.scale()));
  std::vector<double> base(dm.d.size());
  for (std::size_t i = 0; i < base.size(); ++i) base[i] = factor * dm.d[i];
  Tensor bias_base = Tensor::from({n, n}, std::move(base));

  for (const LayerParams& lp : pv.layers) {
    Tensor a = mul(lp.alpha, bias_base);
    Tensor mixed = aafm(matmul(h, lp.wq), matmul(h, lp.wk), matmul(h, lp.wv), a);
    h = instance_norm(add(h, mixed), lp.norm1_gamma, lp.norm1_beta);
    Tensor ff = add_rowvec(
        matmul(relu(add_rowvec(matmul(h, lp.ff_w1), lp.ff_b1)), lp.ff_w2),
        lp.ff_b2);
    h = instance_norm(add(h, ff), lp.norm2_gamma, lp.norm2_beta);
  }

  EncoderResult enc;
  enc.h = h;
  enc.mean_embed = mean_rows(h);
  enc.dec_k = matmul(h, pv.dec_wk);
  enc.dec_v = matmul(h, pv.dec_wv);
  return enc;
}

Tensor Model::decoder_probs(const ParamView& pv, const EncoderResult& enc,
                            const Instance& inst, const DistanceMatrix& dm,
                            const DecoderStepInput& in) const {
  const std::size_t n = static_cast<std::size_t>(inst.node_count());
  const std::size_t t = in.last.size();
  if (in.mask.size() != t * n) {
    throw ContractError("decoder mask must be (trajectories x nodes)");
  }

  Tensor ctx;
  if (cfg_.problem == Problem::tsp) {
    if (in.first.size() != t) {
      throw ContractError("decoder needs one first-node index per trajectory");
    }
    ctx = concat_cols(rows(enc.h, in.first), rows(enc.h, in.last));
  } else {
    if (in.cap_frac.size() != t) {
      throw ContractError("decoder needs one capacity fraction per trajectory");
    }
    std::vector<double> caps(in.cap_frac.begin(), in.cap_frac.end());
    ctx = concat_cols(rows(enc.h, in.last), Tensor::from({t, 1}, std::move(caps)));
  }
  Tensor q = matmul(ctx, pv.dec_wq);

  Tensor bias_rows = adaptation_bias_rows(inst.scale(), dm, in.last, pv.dec_alpha);
  std::vector<double> sentinel(t * n, 0.0);
  for (std::size_t i = 0; i < t * n; ++i) {
    if (in.mask[i]) sentinel[i] = kMaskSentinel;
  }
  Tensor a = add(bias_rows, Tensor::from({t, n}, std::move(sentinel)));
  Tensor refined = aafm(q, enc.dec_k, enc.dec_v, a);

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));
  Tensor scores = mul_scalar(matmul_nt(refined, enc.h), inv_sqrt_d);
  Tensor compat =
      adaptation_bias_rows(inst.scale(), dm, in.last, pv.compat_alpha);
  Tensor logits = mul_scalar(tanh(add(scores, compat)), cfg_.clip);
  return softmax_masked(logits, in.mask);
}

Tensor Model::solution_log_prob(const ParamView& pv, const Instance& inst,
                                const DistanceMatrix& dm,
                                const std::vector<int>& order) const {
  inst.validate();
  const int n = inst.node_count();
  EncoderResult enc = encode(pv, inst, dm);
  Tensor acc = Tensor::scalar(0.0);

  auto step_term = [&](const DecoderStepInput& in, int chosen) {
    Tensor p = decoder_probs(pv, enc, inst, dm, in);
    if (in.mask[static_cast<std::size_t>(chosen)]) {
      throw ContractError("solution visits an infeasible node " +
                          std::to_string(chosen));
    }
    return log(pick(p, {static_cast<std::size_t>(chosen)}));
  };

  if (cfg_.problem == Problem::tsp) {
    if (static_cast<int>(order.size()) != n) {
      throw ContractError("TSP solution must visit every node exactly once");
    }
    std::vector<std::uint8_t> visited(static_cast<std::size_t>(n), 0);
    const auto start = static_cast<std::size_t>(order[0]);
    visited[start] = 1;
    std::size_t last = start;
    for (int t = 1; t < n; ++t) {
      const int chosen = order[static_cast<std::size_t>(t)];
      if (chosen < 0 || chosen >= n || visited[static_cast<std::size_t>(chosen)]) {
        throw ContractError("infeasible TSP solution at position " +
                            std::to_string(t));
      }
      DecoderStepInput in;
      in.first = {start};
      in.last = {last};
      in.mask = visited;
      acc = add(acc, step_term(in, chosen));
      visited[static_cast<std::size_t>(chosen)] = 1;
      last = static_cast<std::size_t>(chosen);
    }
    return acc;
  }

  // CVRP: order starts and ends at the depot; the first customer is the
  // multi-start anchor and carries no probability, matching rollout.
  const int customers = inst.customer_count();
  if (order.size() < 3 || order.front() != 0 || order.back() != 0) {
    throw ContractError("CVRP solution must start and end at the depot");
  }
  std::vector<std::uint8_t> visited(static_cast<std::size_t>(n), 0);
  int served = 0;
  const int anchor = order[1];
  if (anchor <= 0 || anchor >= n) {
    throw ContractError("CVRP solution must leave the depot first");
  }
  visited[static_cast<std::size_t>(anchor)] = 1;
  served = 1;
  int remaining = inst.capacity - inst.demands[static_cast<std::size_t>(anchor)];
  std::size_t last = static_cast<std::size_t>(anchor);
  std::size_t pos = 2;
  while (served < customers) {
    if (pos >= order.size()) {
      throw ContractError("CVRP solution ends before serving every customer");
    }
    const int chosen = order[pos];
    DecoderStepInput in;
    in.last = {last};
    in.cap_frac = {static_cast<double>(remaining) / inst.capacity};
    in.mask.assign(static_cast<std::size_t>(n), 0);
    in.mask[0] = last == 0 ? 1 : 0;  // no depot-to-depot idling
    for (int j = 1; j < n; ++j) {
      if (visited[static_cast<std::size_t>(j)] ||
          inst.demands[static_cast<std::size_t>(j)] > remaining) {
        in.mask[static_cast<std::size_t>(j)] = 1;
      }
    }
    acc = add(acc, step_term(in, chosen));
    if (chosen == 0) {
      remaining = inst.capacity;
      last = 0;
    } else {
      visited[static_cast<std::size_t>(chosen)] = 1;
      remaining -= inst.demands[static_cast<std::size_t>(chosen)];
      served += 1;
      last = static_cast<std::size_t>(chosen);
    }
    ++pos;
  }
  if (pos != order.size() - 1 || order[pos] != 0) {
    throw ContractError("CVRP solution must close with a single depot return");
  }
  return acc;
}

double Model::alpha_mean() const {
  double total = 0.0;
  int count = 0;
  for (const auto& [name, t] : params_.entries()) {
    if (name.rfind("config.", 0) == 0) continue;
    if (name.ends_with("alpha")) {
      total += t.item();
      count += 1;
    }
  }
  return count > 0 ? total / count : 0.0;
}

}  // namespace icam
