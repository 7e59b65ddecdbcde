#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "icam/instance.hpp"
#include "icam/model.hpp"

namespace icam {

enum class RolloutMode { greedy_single, greedy_multi, sample, augmented_x8 };

std::string rollout_mode_name(RolloutMode mode);
RolloutMode rollout_mode_from_name(const std::string& s);

// One constructed solution. TSP: a permutation of the nodes, implicitly
// closed. CVRP: the full visit sequence including depot returns, starting
// and ending at the depot.
struct Trajectory {
  std::vector<int> order;
  std::vector<double> step_logps;  // one entry per decision
  double length = 0.0;
  double ret = 0.0;  // -length, so maximizing return shortens tours
};

struct RolloutBatch {
  std::string instance_id;
  RolloutMode mode = RolloutMode::greedy_multi;
  std::vector<Trajectory> trajectories;
};

struct RolloutOptions {
  // 0 = one trajectory per start node (TSP: N, CVRP: customer count);
  // larger requests cycle through the available starts.
  int trajectories = 0;
  std::uint64_t seed = 0;   // sample mode only
  bool record_grads = false;
  // Re-checks that every masked node has probability exactly 0 at every
  // step (used by the feasibility fuzzer).
  bool validate_probs = false;
};

struct RolloutResult {
  RolloutBatch batch;
  Tensor logp;  // {T} per-trajectory log-probability, set when record_grads
};

RolloutResult rollout(const Model& model, const ParamView& pv,
                      const Instance& inst, const DistanceMatrix& dm,
                      RolloutMode mode, const RolloutOptions& opts = {});
RolloutResult rollout(const Model& model, const Instance& inst,
                      RolloutMode mode, const RolloutOptions& opts = {});

// Total Euclidean length of a feasible visit order (validates first and
// names the first violation otherwise).
double tour_length(const Instance& inst, const std::vector<int>& order);
void validate_order(const Instance& inst, const std::vector<int>& order);

struct AugmentedSolve {
  Trajectory best;                      // length measured on the original
  int best_image = 0;
  std::array<double, 8> image_lengths{};  // best per dihedral image
  double seconds = 0.0;
};

// Greedy multi-start rollout on all eight dihedral images, keeping the
// best tour; lengths are reported on the original instance.
AugmentedSolve solve_augmented(const Model& model, const Instance& inst,
                               int trajectories_per_image = 0);

}  // namespace icam
