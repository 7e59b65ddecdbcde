#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icam/instance.hpp"
#include "icam/param_store.hpp"
#include "icam/tensor.hpp"

namespace icam {

enum class AlphaSharing { shared, per_layer };

struct ModelConfig {
  Problem problem = Problem::tsp;
  int embed_dim = 128;
  int ff_dim = 512;
  int layers = 12;
  double clip = 50.0;  // compatibility logit bound
  double alpha_init = 1.0;
  // One alpha per bias site (each encoder layer, the decoder mix, the
  // compatibility term), or a single scalar shared by all of them.
  AlphaSharing alpha_sharing = AlphaSharing::per_layer;

  void validate() const;
};

// Scale- and distance-conditioned bias: A_ij = -alpha * log2(scale) * d_ij,
// linked to the learnable alpha on the tape. Rejects scale < 2, where the
// log2 factor would erase the signal.
Tensor adaptation_bias(int scale, const DistanceMatrix& d, const Tensor& alpha);

// Rows of the same bias for the given origin nodes: out[t][j] =
// -alpha * log2(scale) * d(origin[t], j).
Tensor adaptation_bias_rows(int scale, const DistanceMatrix& d,
                            const std::vector<std::size_t>& origin,
                            const Tensor& alpha);

// Graph-local leaf copies of the parameters. Each forward/backward pass
// works on its own view, so independent instance graphs never share
// mutable state; gradients are read back from `ordered` (store order).
struct LayerParams {
  Tensor wq, wk, wv;
  Tensor alpha;
  Tensor norm1_gamma, norm1_beta;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor norm2_gamma, norm2_beta;
};

struct ParamView {
  Tensor embed_w, embed_b;
  Tensor embed_depot_w, embed_depot_b;  // CVRP only
  std::vector<LayerParams> layers;
  Tensor dec_wq, dec_wk, dec_wv;
  Tensor dec_alpha, compat_alpha;
  std::vector<Tensor> ordered;
};

struct EncoderResult {
  Tensor h;           // (N, d) node embeddings
  Tensor mean_embed;  // (1, d) mean over nodes, cached for CVRP context
  Tensor dec_k, dec_v;  // decoder key/value projections of h
};

// Per-step decoder input for a batch of trajectories advancing in
// lockstep. mask is (T x N) row-major, nonzero = infeasible.
struct DecoderStepInput {
  std::vector<std::size_t> first;  // TSP context only
  std::vector<std::size_t> last;
  std::vector<double> cap_frac;  // CVRP context only, remaining/capacity
  std::vector<std::uint8_t> mask;
};

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  static Model init(ModelConfig cfg, std::uint64_t seed);
  static Model load(const std::string& path);
  void save(const std::string& path,
            CheckpointDtype dtype = CheckpointDtype::f64) const;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // copy_values=true snapshots parameter values into fresh leaves (safe
  // for concurrent graphs); the view always exposes grad-enabled leaves.
  ParamView make_view(bool copy_values = true) const;

  EncoderResult encode(const ParamView& pv, const Instance& inst,
                       const DistanceMatrix& dm) const;

  // Selection probabilities for one construction step, (T x N). Masked
  // nodes come out exactly 0; pre-softmax logits are bounded by the clip
  // parameter.
  Tensor decoder_probs(const ParamView& pv, const EncoderResult& enc,
                       const Instance& inst, const DistanceMatrix& dm,
                       const DecoderStepInput& in) const;

  // Teacher-forced sum of per-step log-probabilities of a complete
  // feasible solution; differentiable w.r.t. the view parameters.
  Tensor solution_log_prob(const ParamView& pv, const Instance& inst,
                           const DistanceMatrix& dm,
                           const std::vector<int>& order) const;

  double alpha_mean() const;

 private:
  ModelConfig cfg_;
  ParameterStore params_;
};

}  // namespace icam
