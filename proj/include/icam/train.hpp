#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "icam/instance.hpp"
#include "icam/model.hpp"
#include "icam/rng.hpp"

namespace icam {

struct StagePlan {
  int epochs = 1;
  // Scale rule: fixed when scale_fixed > 0, otherwise Unif[scale_lo, scale_hi]
  // per batch.
  int scale_fixed = 0;
  int scale_lo = 0, scale_hi = 0;
  CapacityRule capacity = CapacityRule::fixed(50);  // CVRP; sampled per batch
  // Batch size rule: fixed when batch_fixed > 0, otherwise
  // floor(batch_base * (100/N)^2), optionally clamped to batch_cap.
  int batch_fixed = 0;
  int batch_base = 0;
  int batch_cap = 0;
  enum class Loss { pomo, joint };
  Loss loss = Loss::pomo;
  double lr = 1e-4;

  int sample_scale(Rng& rng) const;
  int batch_size(int scale) const;
};

struct TrainingConfig {
  Problem problem = Problem::tsp;
  ModelConfig model;
  std::vector<StagePlan> stages;
  double beta = 0.1;
  int k = 20;
  int batches_per_epoch = 1000;
  double grad_clip_norm = 0.0;  // 0 disables clipping
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  // Ablation: compute the top-k baseline over the selected trajectories
  // instead of reusing the full multi-start baseline.
  bool topk_subset_baseline = false;
  int checkpoint_every = 0;  // extra checkpoints every this many epochs
  int threads = 0;           // 0 = auto
  std::uint64_t seed = 0;

  void validate() const;
};

// floor(base * (100/n)^2), the memory-motivated batch-size rule.
int scaled_batch_size(int base, int n);

// One instance's multi-start rollout, as the losses consume it.
struct InstanceRollout {
  Tensor logp;                  // {T}, tape-linked per-trajectory log-prob
  std::vector<double> returns;  // length T, return = -tour length
};

// G[m][i] = R[m][i] - mean_i R[m][i] (the shared multi-start baseline).
std::vector<std::vector<double>> advantage(
    const std::vector<std::vector<double>>& returns);

// REINFORCE losses, negated for gradient descent.
Tensor pomo_loss(const std::vector<InstanceRollout>& batch);
// Same form restricted to the k best-return trajectories per instance
// (ties -> lower index). The baseline stays the full multi-start mean
// unless subset_baseline is set.
Tensor topk_loss(const std::vector<InstanceRollout>& batch, int k,
                 bool subset_baseline = false);
Tensor joint_loss(const std::vector<InstanceRollout>& batch, double beta,
                  int k, bool subset_baseline = false);

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  // Applies one update from the gradients accumulated in the store;
  // "config.*" pseudo-parameters are skipped.
  void step(ParameterStore& store);

 private:
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochMetrics {
  int epoch = 0;  // global, 1-based
  int stage = 0;  // 1-based
  double mean_length = 0.0;
  double mean_loss = 0.0;
  double alpha_mean = 0.0;
  double seconds = 0.0;
};

using EpochHook = std::function<void(const EpochMetrics&)>;

// Runs the staged schedule. When out_dir is non-empty, writes metrics.csv,
// a checkpoint at every stage boundary (ckpt_stage<i>.bin), optional
// periodic epoch checkpoints, and the final model.bin.
std::vector<EpochMetrics> train(const TrainingConfig& cfg, Model& model,
                                std::uint64_t seed, const std::string& out_dir,
                                const EpochHook& hook = nullptr);

// TOML-like flat key/value config file.
TrainingConfig parse_training_config(const std::string& text);
std::string serialize_training_config(const TrainingConfig& cfg);
TrainingConfig training_preset(const std::string& name);
std::vector<std::string> training_preset_names();

// FNV-1a, used as the stable config digest in run manifests.
std::uint64_t fnv1a64(const std::string& data);

}  // namespace icam
