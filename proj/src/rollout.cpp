#include "icam/rollout.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>

#include "icam/rng.hpp"

namespace icam {

std::string rollout_mode_name(RolloutMode mode) {
  switch (mode) {
    case RolloutMode::greedy_single: return "greedy-single";
    case RolloutMode::greedy_multi: return "greedy-multi";
    case RolloutMode::sample: return "sample";
    case RolloutMode::augmented_x8: return "augmented×8";
  }
  return "?";
}

RolloutMode rollout_mode_from_name(const std::string& s) {
  if (s == "greedy-single" || s == "single") return RolloutMode::greedy_single;
  if (s == "greedy-multi" || s == "multi") return RolloutMode::greedy_multi;
  if (s == "sample") return RolloutMode::sample;
  if (s == "augmented×8" || s == "aug8" || s == "augx8") {
    return RolloutMode::augmented_x8;
  }
  throw ArgumentError("unknown rollout mode '" + s + "'");
}

namespace {

// Lockstep construction state for one trajectory.
struct TrajState {
  std::vector<std::uint8_t> visited;
  std::size_t first = 0;
  std::size_t last = 0;
  int served = 0;     // CVRP customers served
  int remaining = 0;  // CVRP remaining capacity
  bool done = false;
  std::vector<int> order;
  std::vector<double> step_logps;
};

// Greedy pick with ties broken toward the lowest index.
std::size_t argmax_row(const Tensor& p, std::size_t row) {
  const std::size_t n = p.cols();
  std::size_t best = 0;
  double best_v = -1.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = p.at(row, j);
    if (v > best_v) {
      best_v = v;
      best = j;
    }
  }
  return best;
}

std::size_t sample_row(const Tensor& p, std::size_t row, Rng& rng) {
  const std::size_t n = p.cols();
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  bool seen = false;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = p.at(row, j);
    if (v > 0.0) {
      last_positive = j;
      seen = true;
      acc += v;
      if (u < acc) return j;
    }
  }
  if (!seen) throw InfeasibleError("sample: no positive probability");
  return last_positive;  // u landed in the rounding tail
}

}  // namespace

void validate_order(const Instance& inst, const std::vector<int>& order) {
  const int n = inst.node_count();
  if (inst.problem == Problem::tsp) {
    if (static_cast<int>(order.size()) != n) {
      throw ContractError("order length " + std::to_string(order.size()) +
                          " does not match node count " + std::to_string(n));
    }
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(n), 0);
    for (int node : order) {
      if (node < 0 || node >= n) {
        throw ContractError("order contains out-of-range node " +
                            std::to_string(node));
      }
      if (seen[static_cast<std::size_t>(node)]) {
        throw ContractError("order visits node " + std::to_string(node) +
                            " twice");
      }
      seen[static_cast<std::size_t>(node)] = 1;
    }
    return;
  }
  if (order.size() < 3 || order.front() != 0) {
    throw ContractError("CVRP order must start at the depot");
  }
  if (order.back() != 0) {
    throw ContractError("CVRP order must end at the depot");
  }
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(n), 0);
  int remaining = inst.capacity;
  for (std::size_t i = 1; i < order.size(); ++i) {
    const int node = order[i];
    if (node < 0 || node >= n) {
      throw ContractError("order contains out-of-range node " +
                          std::to_string(node));
    }
    if (node == 0) {
      if (order[i - 1] == 0) {
        throw ContractError("CVRP order has an idle depot-to-depot leg at "
                            "position " + std::to_string(i));
      }
      remaining = inst.capacity;
      continue;
    }
    if (seen[static_cast<std::size_t>(node)]) {
      throw ContractError("order visits customer " + std::to_string(node) +
                          " twice");
    }
    seen[static_cast<std::size_t>(node)] = 1;
    remaining -= inst.demands[static_cast<std::size_t>(node)];
    if (remaining < 0) {
      throw ContractError("capacity violated at customer " +
                          std::to_string(node));
    }
  }
  for (int j = 1; j < n; ++j) {
    if (!seen[static_cast<std::size_t>(j)]) {
      throw ContractError("customer " + std::to_string(j) + " is never served");
    }
  }
}

double tour_length(const Instance& inst, const std::vector<int>& order) {
  validate_order(inst, order);
  auto leg = [&](int a, int b) {
    const double dx = inst.coords[static_cast<std::size_t>(a)][0] -
                      inst.coords[static_cast<std::size_t>(b)][0];
    const double dy = inst.coords[static_cast<std::size_t>(a)][1] -
                      inst.coords[static_cast<std::size_t>(b)][1];
    return std::sqrt(dx * dx + dy * dy);
  };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    total += leg(order[i], order[i + 1]);
  }
  if (inst.problem == Problem::tsp) total += leg(order.back(), order.front());
  return total;
}

RolloutResult rollout(const Model& model, const ParamView& pv,
                      const Instance& inst, const DistanceMatrix& dm,
                      RolloutMode mode, const RolloutOptions& opts) {
  if (mode == RolloutMode::augmented_x8) {
    throw ArgumentError("augmented rollout goes through solve_augmented");
  }
  inst.validate();
  const int n = inst.node_count();
  const int starts = inst.problem == Problem::tsp ? n : inst.customer_count();

  int t_count = opts.trajectories;
  if (mode == RolloutMode::greedy_single) t_count = 1;
  if (t_count <= 0) t_count = starts;

  std::unique_ptr<NoGradGuard> no_grad;
  if (!opts.record_grads) no_grad = std::make_unique<NoGradGuard>();

  EncoderResult enc = model.encode(pv, inst, dm);
  Rng rng(opts.seed);

  std::vector<TrajState> states(static_cast<std::size_t>(t_count));
  for (int t = 0; t < t_count; ++t) {
    TrajState& st = states[static_cast<std::size_t>(t)];
    st.visited.assign(static_cast<std::size_t>(n), 0);
    if (inst.problem == Problem::tsp) {
      const auto start = static_cast<std::size_t>(t % starts);
      st.first = st.last = start;
      st.visited[start] = 1;
      st.order.push_back(static_cast<int>(start));
    } else {
      // Start at the depot; the anchor customer is forced, so it carries
      // no probability, mirroring the forced start node of TSP.
      const auto anchor = static_cast<std::size_t>(1 + t % starts);
      st.first = st.last = anchor;
      st.visited[anchor] = 1;
      st.served = 1;
      st.remaining = inst.capacity - inst.demands[anchor];
      st.order.push_back(0);
      st.order.push_back(static_cast<int>(anchor));
    }
  }

  Tensor logp_total;
  if (opts.record_grads) logp_total = Tensor::zeros({static_cast<std::size_t>(t_count)});

  auto finished = [&](const TrajState& st) {
    return inst.problem == Problem::tsp
               ? static_cast<int>(st.order.size()) == n
               : st.served == inst.customer_count();
  };

  while (true) {
    std::vector<std::size_t> active;
    for (std::size_t t = 0; t < states.size(); ++t) {
      if (!states[t].done) {
        if (finished(states[t])) {
          if (inst.problem == Problem::cvrp) states[t].order.push_back(0);
          states[t].done = true;
        } else {
          active.push_back(t);
        }
      }
    }
    if (active.empty()) break;

    DecoderStepInput in;
    const std::size_t ta = active.size();
    in.mask.assign(ta * static_cast<std::size_t>(n), 0);
    for (std::size_t r = 0; r < ta; ++r) {
      const TrajState& st = states[active[r]];
      in.first.push_back(st.first);
      in.last.push_back(st.last);
      std::uint8_t* mask_row = in.mask.data() + r * static_cast<std::size_t>(n);
      if (inst.problem == Problem::tsp) {
        for (int j = 0; j < n; ++j) mask_row[j] = st.visited[static_cast<std::size_t>(j)];
      } else {
        in.cap_frac.push_back(static_cast<double>(st.remaining) / inst.capacity);
        mask_row[0] = st.last == 0 ? 1 : 0;
        for (int j = 1; j < n; ++j) {
          mask_row[j] = (st.visited[static_cast<std::size_t>(j)] ||
                         inst.demands[static_cast<std::size_t>(j)] > st.remaining)
                            ? 1
                            : 0;
        }
      }
    }

    Tensor p = model.decoder_probs(pv, enc, inst, dm, in);
    if (opts.validate_probs) {
      for (std::size_t r = 0; r < ta; ++r) {
        for (int j = 0; j < n; ++j) {
          if (in.mask[r * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)] &&
              p.at(r, static_cast<std::size_t>(j)) != 0.0) {
            throw ContractError("masked node received nonzero probability");
          }
        }
      }
    }

    std::vector<std::size_t> chosen(ta);
    for (std::size_t r = 0; r < ta; ++r) {
      chosen[r] = mode == RolloutMode::sample ? sample_row(p, r, rng)
                                              : argmax_row(p, r);
    }

    if (opts.record_grads) {
      Tensor step_logp = log(pick(p, chosen));
      logp_total = add(logp_total, expand_to(step_logp, active,
                                             static_cast<std::size_t>(t_count)));
      for (std::size_t r = 0; r < ta; ++r) {
        states[active[r]].step_logps.push_back(step_logp.at(r));
      }
    } else {
      for (std::size_t r = 0; r < ta; ++r) {
        states[active[r]].step_logps.push_back(
            std::log(p.at(r, chosen[r])));
      }
    }

    for (std::size_t r = 0; r < ta; ++r) {
      TrajState& st = states[active[r]];
      const std::size_t node = chosen[r];
      st.order.push_back(static_cast<int>(node));
      if (inst.problem == Problem::tsp) {
        st.visited[node] = 1;
        st.last = node;
      } else if (node == 0) {
        st.remaining = inst.capacity;
        st.last = 0;
      } else {
        st.visited[node] = 1;
        st.remaining -= inst.demands[node];
        st.served += 1;
        st.last = node;
      }
    }
  }

  RolloutResult out;
  out.batch.instance_id = inst.id;
  out.batch.mode = mode;
  out.batch.trajectories.reserve(states.size());
  for (TrajState& st : states) {
    Trajectory traj;
    traj.order = std::move(st.order);
    traj.step_logps = std::move(st.step_logps);
    traj.length = tour_length(inst, traj.order);
    traj.ret = -traj.length;
    out.batch.trajectories.push_back(std::move(traj));
  }
  out.logp = logp_total;
  return out;
}

RolloutResult rollout(const Model& model, const Instance& inst,
                      RolloutMode mode, const RolloutOptions& opts) {
  const DistanceMatrix dm = distance_matrix(inst);
  const ParamView pv = model.make_view(true);
  return rollout(model, pv, inst, dm, mode, opts);
}

AugmentedSolve solve_augmented(const Model& model, const Instance& inst,
                               int trajectories_per_image) {
  const auto start_time = std::chrono::steady_clock::now();
  const std::array<Instance, 8> images = augment_x8(inst);
  AugmentedSolve best;
  bool have_best = false;
  for (int k = 0; k < 8; ++k) {
    RolloutOptions opts;
    opts.trajectories = trajectories_per_image;
    RolloutResult res =
        rollout(model, images[static_cast<std::size_t>(k)],
                RolloutMode::greedy_multi, opts);
    double image_best = 0.0;
    bool image_first = true;
    for (const Trajectory& traj : res.batch.trajectories) {
      // Node identity is preserved by the reflections, so the order maps
      // straight back; report the length on the original coordinates.
      const double len = tour_length(inst, traj.order);
      if (image_first || len < image_best) {
        image_best = len;
        image_first = false;
      }
      if (!have_best || len < best.best.length) {
        best.best = traj;
        best.best.length = len;
        best.best.ret = -len;
        best.best_image = k;
        have_best = true;
      }
    }
    best.image_lengths[static_cast<std::size_t>(k)] = image_best;
  }
  best.seconds = std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - start_time)
                     .count();
  return best;
}

}  // namespace icam
