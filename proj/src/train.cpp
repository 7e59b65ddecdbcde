#include "icam/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "icam/rollout.hpp"
#include "icam/threading.hpp"

namespace icam {

int scaled_batch_size(int base, int n) {
  if (base <= 0 || n <= 0) throw ArgumentError("batch rule needs positive base and scale");
  const double ratio = 100.0 / static_cast<double>(n);
  return std::max(1, static_cast<int>(std::floor(base * ratio * ratio)));
}

int StagePlan::sample_scale(Rng& rng) const {
  if (scale_fixed > 0) return scale_fixed;
  return static_cast<int>(rng.uniform_int(scale_lo, scale_hi));
}

int StagePlan::batch_size(int scale) const {
  int bs = batch_fixed > 0 ? batch_fixed : scaled_batch_size(batch_base, scale);
  if (batch_cap > 0) bs = std::min(bs, batch_cap);
  return std::max(1, bs);
}

void TrainingConfig::validate() const {
  model.validate();
  if (stages.empty()) throw ArgumentError("training needs at least one stage");
  if (beta < 0 || beta > 1) throw ArgumentError("beta must be in [0,1]");
  if (k < 1) throw ArgumentError("k must be >= 1");
  if (batches_per_epoch < 1) throw ArgumentError("batches_per_epoch must be >= 1");
  for (const auto& s : stages) {
    if (s.epochs < 1) throw ArgumentError("stage epochs must be >= 1");
    if (s.lr <= 0) throw ArgumentError("learning rate must be positive");
    if (s.scale_fixed <= 0 && (s.scale_lo < 2 || s.scale_hi < s.scale_lo)) {
      throw ArgumentError("stage scale bounds must satisfy 2 <= lo <= hi");
    }
    if (s.batch_fixed <= 0 && s.batch_base <= 0) {
      throw ArgumentError("stage needs a fixed batch size or a batch base");
    }
  }
}

std::vector<std::vector<double>> advantage(
    const std::vector<std::vector<double>>& returns) {
  std::vector<std::vector<double>> out(returns.size());
  for (std::size_t m = 0; m < returns.size(); ++m) {
    const auto& row = returns[m];
    if (row.empty()) throw ArgumentError("advantage: empty trajectory set");
    const double baseline =
        std::accumulate(row.begin(), row.end(), 0.0) /
        static_cast<double>(row.size());
    out[m].resize(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) out[m][i] = row[i] - baseline;
  }
  return out;
}

namespace {

// Shared core of the REINFORCE losses. Computes
//   -(1/(B*k)) sum_m sum_{i in elite_m} G_{m,i} * logp_{m,i}
// where elite_m is the whole trajectory set for the plain loss (k = T) or
// the k best returns per instance. With k = T the selection, accumulation
// order, and normalization are literally the plain loss, which keeps
// topk(k=N) bitwise equal to it.
Tensor elite_weighted_loss(const std::vector<InstanceRollout>& batch, int k,
                           bool subset_baseline) {
  if (batch.empty()) throw ArgumentError("loss: empty batch");
  const double b = static_cast<double>(batch.size());
  Tensor total = Tensor::scalar(0.0);
  for (const auto& inst : batch) {
    const auto t = static_cast<int>(inst.returns.size());
    if (t == 0) throw ArgumentError("loss: instance with no trajectories");
    const int k_inst = k > 0 ? k : t;
    if (k_inst > t) {
      throw ArgumentError("k = " + std::to_string(k_inst) +
                          " exceeds the trajectory count " + std::to_string(t));
    }
    // Pick the k largest returns, ties toward the lower index, then walk
    // them in index order.
    std::vector<int> idx(static_cast<std::size_t>(t));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int c) {
      return inst.returns[static_cast<std::size_t>(a)] >
             inst.returns[static_cast<std::size_t>(c)];
    });
    idx.resize(static_cast<std::size_t>(k_inst));
    std::sort(idx.begin(), idx.end());

    double baseline = 0.0;
    if (subset_baseline) {
      for (int i : idx) baseline += inst.returns[static_cast<std::size_t>(i)];
      baseline /= static_cast<double>(k_inst);
    } else {
      baseline = std::accumulate(inst.returns.begin(), inst.returns.end(), 0.0) /
                 static_cast<double>(t);
    }

    std::vector<double> weights(static_cast<std::size_t>(t), 0.0);
    const double norm = -1.0 / (b * static_cast<double>(k_inst));
    for (int i : idx) {
      weights[static_cast<std::size_t>(i)] =
          norm * (inst.returns[static_cast<std::size_t>(i)] - baseline);
    }
    total = add(total, sum(mul(Tensor::from({static_cast<std::size_t>(t)},
                                            std::move(weights)),
                               inst.logp)));
  }
  return total;
}

}  // namespace

Tensor pomo_loss(const std::vector<InstanceRollout>& batch) {
  return elite_weighted_loss(batch, 0, false);
}

Tensor topk_loss(const std::vector<InstanceRollout>& batch, int k,
                 bool subset_baseline) {
  if (k < 1) throw ArgumentError("k must be >= 1");
  return elite_weighted_loss(batch, k, subset_baseline);
}

Tensor joint_loss(const std::vector<InstanceRollout>& batch, double beta,
                  int k, bool subset_baseline) {
  if (beta < 0 || beta > 1) throw ArgumentError("beta must be in [0,1]");
  Tensor base = pomo_loss(batch);
  if (beta == 0.0) return base;
  return add(base, mul_scalar(topk_loss(batch, k, subset_baseline), beta));
}

// --- Adam -------------------------------------------------------------

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParameterStore& store) {
  if (m_.size() != store.size()) {
    m_.assign(store.size(), {});
    v_.assign(store.size(), {});
  }
  step_count_ += 1;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  std::size_t i = 0;
  for (auto& [name, t] : store.entries_mut()) {
    if (name.rfind("config.", 0) == 0) {
      ++i;
      continue;
    }
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != t.size()) {
      m.assign(t.size(), 0.0);
      v.assign(t.size(), 0.0);
    }
    auto g = t.grad();
    auto& vals = t.values_mut();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      vals[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    ++i;
  }
  store.version += 1;
}

// --- training loop ------------------------------------------------------

namespace {

struct InstanceWork {
  std::vector<std::vector<double>> grads;  // aligned with store order
  double loss = 0.0;
  double mean_length = 0.0;
};

InstanceWork run_instance(const TrainingConfig& cfg, const Model& model,
                          const StagePlan& stage, int scale, int capacity,
                          int batch_size, std::uint64_t inst_seed,
                          std::uint64_t rollout_seed) {
  Instance inst = generate_uniform(cfg.problem, scale,
                                   CapacityRule::fixed(capacity), inst_seed);
  const DistanceMatrix dm = distance_matrix(inst);
  const ParamView pv = model.make_view(true);
  RolloutOptions opts;
  opts.record_grads = true;
  opts.seed = rollout_seed;
  RolloutResult roll =
      rollout(model, pv, inst, dm, RolloutMode::sample, opts);

  InstanceRollout ir;
  ir.logp = roll.logp;
  double length_sum = 0.0;
  for (const Trajectory& t : roll.batch.trajectories) {
    ir.returns.push_back(t.ret);
    length_sum += t.length;
  }
  const int t_count = static_cast<int>(ir.returns.size());

  Tensor loss;
  if (stage.loss == StagePlan::Loss::joint) {
    const int k_eff = std::min(cfg.k, t_count);
    loss = joint_loss({ir}, cfg.beta, k_eff, cfg.topk_subset_baseline);
  } else {
    loss = pomo_loss({ir});
  }
  // The public losses normalize by their own batch size (1 here); rescale
  // so per-instance terms sum to the full-batch loss.
  loss = mul_scalar(loss, 1.0 / static_cast<double>(batch_size));
  backward(loss);

  InstanceWork work;
  work.loss = loss.item();
  work.mean_length = length_sum / static_cast<double>(t_count);
  work.grads.reserve(pv.ordered.size());
  for (const Tensor& t : pv.ordered) {
    if (!t.defined()) {
      work.grads.emplace_back();
      continue;
    }
    auto g = t.grad();
    work.grads.emplace_back(g.begin(), g.end());
  }
  return work;
}

void accumulate(ParameterStore& store,
                const std::vector<std::vector<double>>& grads) {
  std::size_t i = 0;
  for (auto& [name, t] : store.entries_mut()) {
    (void)name;
    if (!grads[i].empty()) {
      auto* node = t.node();
      node->ensure_grad();
      for (std::size_t j = 0; j < grads[i].size(); ++j) {
        node->grad[j] += grads[i][j];
      }
    }
    ++i;
  }
}

}  // namespace

std::vector<EpochMetrics> train(const TrainingConfig& cfg, Model& model,
                                std::uint64_t seed, const std::string& out_dir,
                                const EpochHook& hook) {
  cfg.validate();
  if (model.config().problem != cfg.problem) {
    throw ContractError("model problem does not match the training config");
  }
  const int threads = resolve_threads(cfg.threads);

  std::ofstream metrics_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics_file.open(out_dir + "/metrics.csv");
    metrics_file << "epoch,stage,mean_length,loss,alpha,seconds\n";
  }

  Adam adam(cfg.stages.front().lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::vector<EpochMetrics> history;
  int epoch_global = 0;

  for (std::size_t stage_idx = 0; stage_idx < cfg.stages.size(); ++stage_idx) {
    const StagePlan& stage = cfg.stages[stage_idx];
    adam.set_lr(stage.lr);
    for (int epoch = 0; epoch < stage.epochs; ++epoch) {
      const auto epoch_start = std::chrono::steady_clock::now();
      epoch_global += 1;
      double loss_sum = 0.0, length_sum = 0.0;
      long length_count = 0;

      for (int batch = 0; batch < cfg.batches_per_epoch; ++batch) {
        const std::uint64_t batch_seed = derive_seed(
            derive_seed(seed, static_cast<std::uint64_t>(epoch_global)),
            static_cast<std::uint64_t>(batch));
        Rng brng(batch_seed);
        const int scale = stage.sample_scale(brng);
        int capacity = 0;
        if (cfg.problem == Problem::cvrp) {
          capacity = stage.capacity.kind == CapacityRule::Kind::fixed
                         ? stage.capacity.value
                         : static_cast<int>(brng.uniform_int(
                               stage.capacity.lo, stage.capacity.hi));
        }
        const int bs = stage.batch_size(scale);

        std::vector<InstanceWork> work(static_cast<std::size_t>(bs));
        try {
          parallel_for(static_cast<std::size_t>(bs), threads, [&](std::size_t i) {
            work[i] = run_instance(
                cfg, model, stage, scale, capacity, bs,
                derive_seed(batch_seed, 1000 + i),
                derive_seed(batch_seed, 7000000 + i));
          });
        } catch (const NumericError& e) {
          throw NumericError(
              "aborting training: " + std::string(e.what()) +
              " [batch seed " + std::to_string(batch_seed) +
              ", alpha mean " + std::to_string(model.alpha_mean()) +
              ", grad norm " + std::to_string(model.params().grad_norm()) + "]");
        }

        model.params().zero_grad();
        double batch_loss = 0.0;
        for (const InstanceWork& w : work) {  // fixed order: reproducible
          accumulate(model.params(), w.grads);
          batch_loss += w.loss;
          length_sum += w.mean_length;
          length_count += 1;
        }
        if (!std::isfinite(batch_loss)) {
          throw NumericError(
              "aborting training: non-finite loss [batch seed " +
              std::to_string(batch_seed) + ", alpha mean " +
              std::to_string(model.alpha_mean()) + ", grad norm " +
              std::to_string(model.params().grad_norm()) + "]");
        }
        if (cfg.grad_clip_norm > 0) {
          model.params().clip_grad_norm(cfg.grad_clip_norm);
        }
        adam.step(model.params());
        loss_sum += batch_loss;
      }

      EpochMetrics m;
      m.epoch = epoch_global;
      m.stage = static_cast<int>(stage_idx) + 1;
      m.mean_length = length_sum / static_cast<double>(length_count);
      m.mean_loss = loss_sum / static_cast<double>(cfg.batches_per_epoch);
      m.alpha_mean = model.alpha_mean();
      m.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - epoch_start)
                      .count();
      history.push_back(m);
      if (metrics_file.is_open()) {
        metrics_file << m.epoch << ',' << m.stage << ',' << m.mean_length << ','
                     << m.mean_loss << ',' << m.alpha_mean << ',' << m.seconds
                     << '\n';
        metrics_file.flush();
      }
      if (hook) hook(m);
      if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
          epoch_global % cfg.checkpoint_every == 0) {
        model.save(out_dir + "/ckpt_epoch" + std::to_string(epoch_global) +
                   ".bin");
      }
    }
    if (!out_dir.empty()) {
      model.save(out_dir + "/ckpt_stage" + std::to_string(stage_idx + 1) +
                 ".bin");
    }
  }
  if (!out_dir.empty()) model.save(out_dir + "/model.bin");
  return history;
}

// --- config file ---------------------------------------------------------

namespace {

std::string trim_ws(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct KvFile {
  std::map<std::string, std::string> kv;

  bool has(const std::string& k) const { return kv.count(k) != 0; }
  std::string str(const std::string& k) const { return kv.at(k); }
  double num(const std::string& k) const {
    try {
      return std::stod(kv.at(k));
    } catch (const std::exception&) {
      throw ParseError("config key '" + k + "' is not a number: " + kv.at(k));
    }
  }
  int integer(const std::string& k) const {
    return static_cast<int>(num(k));
  }
};

KvFile parse_kv(const std::string& text) {
  KvFile f;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::string t = trim_ws(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(line_no) +
                       ": expected key = value");
    }
    f.kv[trim_ws(t.substr(0, eq))] = trim_ws(t.substr(eq + 1));
  }
  return f;
}

// "10" -> fixed, "10:50" -> range
void parse_range(const std::string& v, int& fixed, int& lo, int& hi) {
  const auto colon = v.find(':');
  if (colon == std::string::npos) {
    fixed = std::stoi(v);
    lo = hi = 0;
  } else {
    fixed = 0;
    lo = std::stoi(v.substr(0, colon));
    hi = std::stoi(v.substr(colon + 1));
  }
}

void apply_kv(TrainingConfig& cfg, const KvFile& f) {
  if (f.has("problem")) cfg.problem = problem_from_name(f.str("problem"));
  cfg.model.problem = cfg.problem;
  if (f.has("seed")) cfg.seed = static_cast<std::uint64_t>(f.num("seed"));
  if (f.has("batches_per_epoch")) cfg.batches_per_epoch = f.integer("batches_per_epoch");
  if (f.has("beta")) cfg.beta = f.num("beta");
  if (f.has("k")) cfg.k = f.integer("k");
  if (f.has("grad_clip_norm")) cfg.grad_clip_norm = f.num("grad_clip_norm");
  if (f.has("topk_subset_baseline")) {
    const std::string v = f.str("topk_subset_baseline");
    cfg.topk_subset_baseline = v == "1" || v == "true";
  }
  if (f.has("checkpoint_every")) cfg.checkpoint_every = f.integer("checkpoint_every");
  if (f.has("threads")) cfg.threads = f.integer("threads");
  if (f.has("model.embed_dim")) cfg.model.embed_dim = f.integer("model.embed_dim");
  if (f.has("model.ff_dim")) cfg.model.ff_dim = f.integer("model.ff_dim");
  if (f.has("model.layers")) cfg.model.layers = f.integer("model.layers");
  if (f.has("model.clip")) cfg.model.clip = f.num("model.clip");
  if (f.has("model.alpha_init")) cfg.model.alpha_init = f.num("model.alpha_init");
  if (f.has("model.alpha_sharing")) {
    const std::string v = f.str("model.alpha_sharing");
    if (v == "shared") {
      cfg.model.alpha_sharing = AlphaSharing::shared;
    } else if (v == "per_layer") {
      cfg.model.alpha_sharing = AlphaSharing::per_layer;
    } else {
      throw ParseError("model.alpha_sharing must be shared or per_layer");
    }
  }
  if (f.has("adam.beta1")) cfg.adam_beta1 = f.num("adam.beta1");
  if (f.has("adam.beta2")) cfg.adam_beta2 = f.num("adam.beta2");
  if (f.has("adam.eps")) cfg.adam_eps = f.num("adam.eps");

  // Stages: stage<i>.<key>, 1-based contiguous indices.
  for (int s = 1;; ++s) {
    const std::string pre = "stage" + std::to_string(s) + ".";
    bool any = false;
    for (const auto& [k, v] : f.kv) {
      if (k.rfind(pre, 0) == 0) {
        any = true;
        break;
      }
    }
    if (!any) break;
    if (static_cast<int>(cfg.stages.size()) < s) cfg.stages.resize(static_cast<std::size_t>(s));
    StagePlan& st = cfg.stages[static_cast<std::size_t>(s - 1)];
    if (f.has(pre + "epochs")) st.epochs = f.integer(pre + "epochs");
    if (f.has(pre + "scale")) {
      parse_range(f.str(pre + "scale"), st.scale_fixed, st.scale_lo, st.scale_hi);
    }
    if (f.has(pre + "capacity")) {
      int fixed, lo, hi;
      parse_range(f.str(pre + "capacity"), fixed, lo, hi);
      st.capacity = fixed > 0 ? CapacityRule::fixed(fixed)
                              : CapacityRule::uniform(lo, hi);
    }
    if (f.has(pre + "batch_fixed")) st.batch_fixed = f.integer(pre + "batch_fixed");
    if (f.has(pre + "batch_base")) st.batch_base = f.integer(pre + "batch_base");
    if (f.has(pre + "batch_cap")) st.batch_cap = f.integer(pre + "batch_cap");
    if (f.has(pre + "lr")) st.lr = f.num(pre + "lr");
    if (f.has(pre + "loss")) {
      const std::string v = f.str(pre + "loss");
      if (v == "pomo") {
        st.loss = StagePlan::Loss::pomo;
      } else if (v == "joint") {
        st.loss = StagePlan::Loss::joint;
      } else {
        throw ParseError("stage loss must be pomo or joint");
      }
    }
  }
}

}  // namespace

TrainingConfig parse_training_config(const std::string& text) {
  const KvFile f = parse_kv(text);
  TrainingConfig cfg;
  if (f.has("preset")) {
    cfg = training_preset(f.str("preset"));
  }
  apply_kv(cfg, f);
  cfg.validate();
  return cfg;
}

std::string serialize_training_config(const TrainingConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "problem = " << problem_name(cfg.problem) << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "batches_per_epoch = " << cfg.batches_per_epoch << "\n";
  os << "beta = " << cfg.beta << "\n";
  os << "k = " << cfg.k << "\n";
  os << "grad_clip_norm = " << cfg.grad_clip_norm << "\n";
  os << "topk_subset_baseline = " << (cfg.topk_subset_baseline ? 1 : 0) << "\n";
  os << "checkpoint_every = " << cfg.checkpoint_every << "\n";
  os << "threads = " << cfg.threads << "\n";
  os << "model.embed_dim = " << cfg.model.embed_dim << "\n";
  os << "model.ff_dim = " << cfg.model.ff_dim << "\n";
  os << "model.layers = " << cfg.model.layers << "\n";
  os << "model.clip = " << cfg.model.clip << "\n";
  os << "model.alpha_init = " << cfg.model.alpha_init << "\n";
  os << "model.alpha_sharing = "
     << (cfg.model.alpha_sharing == AlphaSharing::shared ? "shared"
                                                         : "per_layer")
     << "\n";
  os << "adam.beta1 = " << cfg.adam_beta1 << "\n";
  os << "adam.beta2 = " << cfg.adam_beta2 << "\n";
  os << "adam.eps = " << cfg.adam_eps << "\n";
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const StagePlan& st = cfg.stages[s];
    const std::string pre = "stage" + std::to_string(s + 1) + ".";
    os << pre << "epochs = " << st.epochs << "\n";
    if (st.scale_fixed > 0) {
      os << pre << "scale = " << st.scale_fixed << "\n";
    } else {
      os << pre << "scale = " << st.scale_lo << ":" << st.scale_hi << "\n";
    }
    if (cfg.problem == Problem::cvrp) {
      if (st.capacity.kind == CapacityRule::Kind::fixed) {
        os << pre << "capacity = " << st.capacity.value << "\n";
      } else {
        os << pre << "capacity = " << st.capacity.lo << ":" << st.capacity.hi
           << "\n";
      }
    }
    if (st.batch_fixed > 0) os << pre << "batch_fixed = " << st.batch_fixed << "\n";
    if (st.batch_base > 0) os << pre << "batch_base = " << st.batch_base << "\n";
    if (st.batch_cap > 0) os << pre << "batch_cap = " << st.batch_cap << "\n";
    os << pre << "lr = " << st.lr << "\n";
    os << pre << "loss = "
       << (st.loss == StagePlan::Loss::joint ? "joint" : "pomo") << "\n";
  }
  return os.str();
}

TrainingConfig training_preset(const std::string& name) {
  TrainingConfig cfg;
  auto stage = [](int epochs, int fixed, int lo, int hi, double lr,
                  StagePlan::Loss loss) {
    StagePlan s;
    s.epochs = epochs;
    s.scale_fixed = fixed;
    s.scale_lo = lo;
    s.scale_hi = hi;
    s.lr = lr;
    s.loss = loss;
    return s;
  };

  if (name == "tsp_paper" || name == "cvrp_paper") {
    const bool tsp = name == "tsp_paper";
    cfg.problem = tsp ? Problem::tsp : Problem::cvrp;
    cfg.model.problem = cfg.problem;
    cfg.model.embed_dim = 128;
    cfg.model.ff_dim = 512;
    cfg.model.layers = 12;
    cfg.model.clip = 50.0;
    cfg.batches_per_epoch = 1000;
    cfg.beta = 0.1;
    cfg.k = 20;
    cfg.grad_clip_norm = tsp ? 0.0 : 5.0;
    StagePlan s1 = stage(100, 100, 0, 0, 1e-4, StagePlan::Loss::pomo);
    s1.batch_fixed = tsp ? 256 : 128;
    s1.capacity = CapacityRule::fixed(50);
    StagePlan s2 = stage(tsp ? 2200 : 700, 0, 100, 500, 1e-4,
                         StagePlan::Loss::pomo);
    s2.batch_base = tsp ? 160 : 128;
    s2.capacity = CapacityRule::uniform(50, 100);
    StagePlan s3 = stage(200, 0, 100, 500, 1e-5, StagePlan::Loss::joint);
    s3.batch_base = s2.batch_base;
    s3.capacity = CapacityRule::uniform(50, 100);
    cfg.stages = {s1, s2, s3};
    return cfg;
  }

  if (name == "tsp_desk" || name == "cvrp_desk") {
    // Scaled-down schedule with the same three-stage structure; runs on a
    // CPU in minutes.
    const bool tsp = name == "tsp_desk";
    cfg.problem = tsp ? Problem::tsp : Problem::cvrp;
    cfg.model.problem = cfg.problem;
    cfg.model.embed_dim = 64;
    cfg.model.ff_dim = 256;
    cfg.model.layers = 3;
    cfg.model.clip = 50.0;
    cfg.batches_per_epoch = 40;
    cfg.beta = 0.1;
    cfg.k = 20;  // the trainer caps k at the trajectory count
    cfg.grad_clip_norm = tsp ? 0.0 : 5.0;
    StagePlan s1 = stage(20, 10, 0, 0, 1e-4, StagePlan::Loss::pomo);
    s1.batch_fixed = 24;
    s1.capacity = CapacityRule::fixed(30);
    StagePlan s2 = stage(60, 0, 10, 50, 1e-4, StagePlan::Loss::pomo);
    s2.batch_fixed = 12;
    s2.capacity = CapacityRule::uniform(30, 60);
    StagePlan s3 = stage(20, 0, 10, 50, 1e-5, StagePlan::Loss::joint);
    s3.batch_fixed = 12;
    s3.capacity = CapacityRule::uniform(30, 60);
    cfg.stages = {s1, s2, s3};
    return cfg;
  }

  throw ArgumentError("unknown preset '" + name + "'; available: tsp_paper, "
                      "cvrp_paper, tsp_desk, cvrp_desk");
}

std::vector<std::string> training_preset_names() {
  return {"tsp_paper", "cvrp_paper", "tsp_desk", "cvrp_desk"};
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace icam
