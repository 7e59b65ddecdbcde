#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>

#include "icam/cvrplib.hpp"
#include "icam/evalbench.hpp"
#include "icam/instance.hpp"
#include "icam/model.hpp"
#include "icam/rng.hpp"
#include "icam/rollout.hpp"
#include "icam/train.hpp"

namespace py = pybind11;
using namespace icam;

namespace {

Instance make_instance(const std::string& problem,
                       const std::vector<std::array<double, 2>>& coords,
                       const std::vector<int>& demands, int capacity,
                       const std::string& id) {
  Instance inst;
  inst.problem = problem_from_name(problem);
  inst.coords = coords;
  inst.demands = demands;
  inst.capacity = capacity;
  inst.id = id;
  inst.validate();
  return inst;
}

py::dict trajectory_dict(const Trajectory& t) {
  py::dict d;
  d["order"] = t.order;
  d["length"] = t.length;
  d["step_logps"] = t.step_logps;
  return d;
}

}  // namespace

PYBIND11_MODULE(_icam, m) {
  m.doc() = "Instance-conditioned constructive solver for TSP/CVRP";

  // translators run newest-first, so the base class goes first
  py::register_exception<Error>(m, "IcamError", PyExc_RuntimeError);
  py::register_exception<SizeError>(m, "SizeError", PyExc_ValueError);

  py::class_<Instance>(m, "Instance")
      .def(py::init(&make_instance), py::arg("problem"), py::arg("coords"),
           py::arg("demands") = std::vector<int>{}, py::arg("capacity") = 0,
           py::arg("id") = "")
      .def_property_readonly(
          "problem", [](const Instance& i) { return problem_name(i.problem); })
      .def_readonly("id", &Instance::id)
      .def_readonly("coords", &Instance::coords)
      .def_readonly("demands", &Instance::demands)
      .def_readonly("capacity", &Instance::capacity)
      .def_readonly("coord_scale", &Instance::coord_scale)
      .def_property_readonly("n", &Instance::node_count)
      .def("to_json", &instance_to_json)
      .def("__repr__", [](const Instance& i) {
        return "<Instance " + i.id + " n=" + std::to_string(i.node_count()) +
               ">";
      });

  m.def(
      "generate",
      [](const std::string& problem, int n, std::uint64_t seed, int capacity) {
        const Problem p = problem_from_name(problem);
        const CapacityRule rule = CapacityRule::fixed(
            capacity > 0 ? capacity : default_test_capacity(n));
        return generate_uniform(p, n, rule, seed);
      },
      py::arg("problem"), py::arg("n"), py::arg("seed") = 0,
      py::arg("capacity") = 0);
  m.def("instance_from_json", &instance_from_json);
  m.def("parse_cvrplib", &parse_cvrplib);
  m.def("serialize_cvrplib", &serialize_cvrplib);
  m.def("scale_cvrplib", &scale_cvrplib);
  m.def("augment_x8", [](const Instance& inst) {
    const auto images = augment_x8(inst);
    return std::vector<Instance>(images.begin(), images.end());
  });
  m.def("distance_matrix", [](const Instance& inst) {
    const DistanceMatrix dm = distance_matrix(inst);
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(dm.n));
    for (int i = 0; i < dm.n; ++i) {
      rows[static_cast<std::size_t>(i)].assign(
          dm.d.begin() + static_cast<std::ptrdiff_t>(i) * dm.n,
          dm.d.begin() + static_cast<std::ptrdiff_t>(i + 1) * dm.n);
    }
    return rows;
  });

  m.def("exact_tsp", [](const Instance& inst) {
    const TourResult r = exact_tsp(inst);
    return py::make_tuple(r.length, r.order);
  });
  m.def("exact_cvrp", &exact_cvrp);
  m.def("nn_two_opt", [](const Instance& inst) {
    const TourResult r = nn_two_opt(inst);
    return py::make_tuple(r.length, r.order);
  });
  m.def("gap", &gap_percent, py::arg("objective"), py::arg("reference"));
  m.def("tour_length", &tour_length);

  py::enum_<CheckpointDtype>(m, "CheckpointDtype")
      .value("f32", CheckpointDtype::f32)
      .value("f64", CheckpointDtype::f64);

  py::class_<Model>(m, "Model")
      .def_static(
          "init",
          [](const std::string& problem, int embed_dim, int ff_dim, int layers,
             double clip, double alpha_init, const std::string& alpha_sharing,
             std::uint64_t seed) {
            ModelConfig cfg;
            cfg.problem = problem_from_name(problem);
            cfg.embed_dim = embed_dim;
            cfg.ff_dim = ff_dim;
            cfg.layers = layers;
            cfg.clip = clip;
            cfg.alpha_init = alpha_init;
            cfg.alpha_sharing = alpha_sharing == "shared"
                                    ? AlphaSharing::shared
                                    : AlphaSharing::per_layer;
            return Model::init(cfg, seed);
          },
          py::arg("problem"), py::arg("embed_dim") = 64, py::arg("ff_dim") = 256,
          py::arg("layers") = 3, py::arg("clip") = 50.0,
          py::arg("alpha_init") = 1.0, py::arg("alpha_sharing") = "per_layer",
          py::arg("seed") = 0)
      .def_static("load", &Model::load)
      .def("save", &Model::save, py::arg("path"),
           py::arg("dtype") = CheckpointDtype::f64)
      .def_property_readonly("problem",
                             [](const Model& m) {
                               return problem_name(m.config().problem);
                             })
      .def_property_readonly("alpha_mean", &Model::alpha_mean)
      .def(
          "solve",
          [](const Model& model, const Instance& inst, const std::string& mode,
             int trajectories, std::uint64_t seed) {
            const RolloutMode rm = rollout_mode_from_name(mode);
            py::dict out;
            if (rm == RolloutMode::augmented_x8) {
              const AugmentedSolve aug =
                  solve_augmented(model, inst, trajectories);
              out = trajectory_dict(aug.best);
            } else {
              RolloutOptions opts;
              opts.trajectories = trajectories;
              opts.seed = seed;
              const auto res = rollout(model, inst, rm, opts);
              const Trajectory* best = &res.batch.trajectories.front();
              for (const auto& t : res.batch.trajectories) {
                if (t.length < best->length) best = &t;
              }
              out = trajectory_dict(*best);
            }
            out["mode"] = rollout_mode_name(rm);
            return out;
          },
          py::arg("instance"), py::arg("mode") = "multi",
          py::arg("trajectories") = 0, py::arg("seed") = 0)
      .def(
          "rollout",
          [](const Model& model, const Instance& inst, const std::string& mode,
             int trajectories, std::uint64_t seed) {
            RolloutOptions opts;
            opts.trajectories = trajectories;
            opts.seed = seed;
            const auto res =
                rollout(model, inst, rollout_mode_from_name(mode), opts);
            std::vector<py::dict> out;
            out.reserve(res.batch.trajectories.size());
            for (const auto& t : res.batch.trajectories) {
              out.push_back(trajectory_dict(t));
            }
            return out;
          },
          py::arg("instance"), py::arg("mode") = "multi",
          py::arg("trajectories") = 0, py::arg("seed") = 0)
      .def("log_prob",
           [](const Model& model, const Instance& inst,
              const std::vector<int>& order) {
             NoGradGuard no_grad;
             return model
                 .solution_log_prob(model.make_view(), inst,
                                    distance_matrix(inst), order)
                 .item();
           });

  m.def("training_presets", &training_preset_names);
  m.def(
      "train",
      [](const std::string& config_text, const std::string& out_dir,
         std::uint64_t seed, int threads) {
        TrainingConfig cfg = parse_training_config(config_text);
        if (seed != 0) cfg.seed = seed;
        if (threads > 0) cfg.threads = threads;
        Model model = Model::init(cfg.model, derive_seed(cfg.seed, 0xC0FFEE));
        const auto history = train(cfg, model, cfg.seed, out_dir);
        std::vector<py::dict> out;
        for (const auto& e : history) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["stage"] = e.stage;
          d["mean_length"] = e.mean_length;
          d["loss"] = e.mean_loss;
          d["alpha"] = e.alpha_mean;
          d["seconds"] = e.seconds;
          out.push_back(std::move(d));
        }
        return out;
      },
      py::arg("config"), py::arg("out_dir") = "", py::arg("seed") = 0,
      py::arg("threads") = 0,
      "Run the staged trainer from a config string (use 'preset = tsp_desk' "
      "etc.); returns per-epoch metrics.");

  m.def(
      "bench_attention",
      [](const std::vector<std::size_t>& ns, std::size_t d, int repeats) {
        std::vector<py::dict> out;
        for (const auto& r : bench_attention(ns, d, repeats)) {
          py::dict rec;
          rec["mechanism"] = r.mechanism;
          rec["n"] = r.n;
          rec["d"] = r.d;
          rec["seconds"] = r.seconds;
          rec["peak_bytes"] = r.peak_bytes;
          out.push_back(std::move(rec));
        }
        return out;
      },
      py::arg("ns"), py::arg("d") = 128, py::arg("repeats") = 1);

  m.attr("__version__") = "0.1.0";
}
