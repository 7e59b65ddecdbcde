#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "icam/cvrplib.hpp"
#include "icam/evalbench.hpp"
#include "icam/instance.hpp"
#include "icam/model.hpp"
#include "icam/rng.hpp"
#include "icam/rollout.hpp"
#include "icam/threading.hpp"
#include "icam/train.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Written beside the outputs before work starts, finalized after. The
// digest is a stable hash of the fully resolved configuration, so a run
// can be reproduced exactly from its manifest.
class RunManifest {
 public:
  RunManifest(std::string command, const std::string& resolved_config,
              std::uint64_t seed, std::vector<std::string> outputs)
      : path_(manifest_path(outputs)),
        command_(std::move(command)),
        digest_(icam::fnv1a64(resolved_config)),
        seed_(seed),
        outputs_(std::move(outputs)),
        started_(iso_timestamp()) {
    write(false);
  }

  void finalize() { write(true); }

 private:
  static std::string manifest_path(const std::vector<std::string>& outputs) {
    if (outputs.empty()) return "icam.manifest.json";
    const std::string& first = outputs.front();
    if (std::filesystem::is_directory(first)) return first + "/manifest.json";
    return first + ".manifest.json";
  }

  void write(bool finished) const {
    nlohmann::json j;
    j["command"] = command_;
    char digest_hex[24];
    std::snprintf(digest_hex, sizeof(digest_hex), "%016llx",
                  static_cast<unsigned long long>(digest_));
    j["config_digest"] = digest_hex;
    j["seed"] = seed_;
    j["code_version"] = kVersion;
    j["started"] = started_;
    j["finished"] = finished ? iso_timestamp() : "";
    j["outputs"] = outputs_;
    std::ofstream os(path_);
    os << j.dump(2) << '\n';
  }

  std::string path_;
  std::string command_;
  std::uint64_t digest_;
  std::uint64_t seed_;
  std::vector<std::string> outputs_;
  std::string started_;
};

int run_gen(const std::string& problem, int n, int count, std::uint64_t seed,
            const std::string& out, int capacity, int cap_lo, int cap_hi) {
  const icam::Problem p = icam::problem_from_name(problem);
  icam::CapacityRule rule = icam::CapacityRule::fixed(
      capacity > 0 ? capacity : icam::default_test_capacity(n));
  if (cap_lo > 0 && cap_hi >= cap_lo) {
    rule = icam::CapacityRule::uniform(cap_lo, cap_hi);
  }
  std::ostringstream resolved;
  resolved << "gen problem=" << problem << " n=" << n << " count=" << count
           << " seed=" << seed << " capacity=" << capacity << " cap_lo="
           << cap_lo << " cap_hi=" << cap_hi;
  RunManifest manifest("gen", resolved.str(), seed, {out});
  std::vector<icam::Instance> insts;
  insts.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    insts.push_back(icam::generate_uniform(
        p, n, rule, icam::derive_seed(seed, static_cast<std::uint64_t>(i))));
  }
  icam::save_instances(insts, out);
  manifest.finalize();
  std::cout << "wrote " << count << " instances to " << out << "\n";
  return 0;
}

std::vector<icam::Instance> load_any(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".vrp") {
    return {icam::scale_cvrplib(icam::load_cvrplib(path))};
  }
  return icam::load_instances(path);
}

int run_solve(const std::string& ckpt, const std::string& instances,
              const std::string& mode_name, const std::string& out,
              int trajectories, std::uint64_t seed, int threads) {
  const icam::RolloutMode mode = icam::rollout_mode_from_name(mode_name);
  RunManifest manifest("solve",
                       "solve ckpt=" + ckpt + " instances=" + instances +
                           " mode=" + mode_name +
                           " trajectories=" + std::to_string(trajectories) +
                           " seed=" + std::to_string(seed),
                       seed, {out});
  const icam::Model model = icam::Model::load(ckpt);
  const std::vector<icam::Instance> insts = load_any(instances);
  std::vector<std::string> lines(insts.size());
  icam::parallel_for(insts.size(), icam::resolve_threads(threads), [&](std::size_t i) {
    const icam::Instance& inst = insts[i];
    const auto t0 = std::chrono::steady_clock::now();
    icam::Trajectory best;
    if (mode == icam::RolloutMode::augmented_x8) {
      best = icam::solve_augmented(model, inst, trajectories).best;
    } else {
      icam::RolloutOptions opts;
      opts.trajectories = trajectories;
      opts.seed = icam::derive_seed(seed, i);
      const auto res = icam::rollout(model, inst, mode, opts);
      best = res.batch.trajectories.front();
      for (const auto& t : res.batch.trajectories) {
        if (t.length < best.length) best = t;
      }
    }
    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
    nlohmann::json j;
    j["id"] = inst.id;
    j["order"] = best.order;
    // Report in the source units when the instance was normalized.
    j["length"] = best.length * inst.coord_scale;
    j["mode"] = icam::rollout_mode_name(mode);
    j["seconds"] = secs;
    lines[i] = j.dump();
  });
  std::ofstream os(out);
  if (!os) throw icam::Error("cannot open output: " + out);
  for (const auto& line : lines) os << line << '\n';
  manifest.finalize();
  std::cout << "solved " << insts.size() << " instances -> " << out << "\n";
  return 0;
}

int run_eval(const std::string& instances, const std::string& method,
             const std::string& ref, const std::string& ckpt,
             const std::string& mode_name, const std::string& out,
             const std::string& markdown, int trajectories, int threads) {
  RunManifest manifest("eval",
                       "eval instances=" + instances + " method=" + method +
                           " ref=" + ref + " ckpt=" + ckpt +
                           " mode=" + mode_name,
                       0, {out});
  const std::vector<icam::Instance> insts = load_any(instances);

  std::unique_ptr<icam::Model> model;
  if (method == "icam") {
    if (ckpt.empty()) throw icam::ArgumentError("--ckpt is required for icam");
    model = std::make_unique<icam::Model>(icam::Model::load(ckpt));
  } else if (method != "nn2opt" && method != "exact") {
    throw icam::ArgumentError("unknown method '" + method + "'");
  }

  // Reference objectives from a JSONL {"id","length"} file when given.
  std::unordered_map<std::string, double> ref_file;
  if (ref.rfind("file:", 0) == 0) {
    std::ifstream is(ref.substr(5));
    if (!is) throw icam::Error("cannot open reference file " + ref.substr(5));
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      ref_file[j.at("id").get<std::string>()] = j.at("length").get<double>();
    }
  }

  const icam::RolloutMode mode = icam::rollout_mode_from_name(mode_name);
  icam::GapReport report;
  report.rows.resize(insts.size());
  icam::parallel_for(insts.size(), icam::resolve_threads(threads), [&](std::size_t i) {
    const icam::Instance& inst = insts[i];
    const auto t0 = std::chrono::steady_clock::now();
    double obj = 0.0;
    if (method == "icam") {
      if (mode == icam::RolloutMode::augmented_x8) {
        obj = icam::solve_augmented(*model, inst, trajectories).best.length;
      } else {
        icam::RolloutOptions opts;
        opts.trajectories = trajectories;
        const auto res = icam::rollout(*model, inst, mode, opts);
        obj = res.batch.trajectories.front().length;
        for (const auto& t : res.batch.trajectories) obj = std::min(obj, t.length);
      }
    } else if (method == "nn2opt") {
      obj = icam::nn_two_opt(inst).length;
    } else {
      obj = inst.problem == icam::Problem::tsp ? icam::exact_tsp(inst).length
                                               : icam::exact_cvrp(inst);
    }
    double reference = 0.0;
    std::string ref_source;
    if (ref.rfind("file:", 0) == 0) {
      const auto it = ref_file.find(inst.id);
      if (it == ref_file.end()) {
        throw icam::ArgumentError("no reference objective for instance " +
                                  inst.id);
      }
      reference = it->second;
      ref_source = "file";
    } else if (ref == "exact") {
      reference = inst.problem == icam::Problem::tsp
                      ? icam::exact_tsp(inst).length
                      : icam::exact_cvrp(inst);
      ref_source = "exact";
    } else if (ref == "nn2opt") {
      reference = icam::nn_two_opt(inst).length;
      ref_source = "nn2opt";
    } else {  // auto: exact when the oracle can take it, else nn2opt
      try {
        reference = inst.problem == icam::Problem::tsp
                        ? icam::exact_tsp(inst).length
                        : icam::exact_cvrp(inst);
        ref_source = "exact";
      } catch (const icam::SizeError&) {
        if (inst.problem != icam::Problem::tsp) {
          throw icam::SizeError(
              "instance " + inst.id +
              " is too large for the exact CVRP oracle; supply --ref file:...");
        }
        reference = icam::nn_two_opt(inst).length;
        ref_source = "nn2opt";
      }
    }
    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
    const double scale = inst.coord_scale;
    report.rows[i] = {inst.id,
                      method,
                      ref_source,
                      obj * scale,
                      reference * scale,
                      icam::gap_percent(obj, reference),
                      secs};
  });
  icam::write_report_csv(report, out);
  if (!markdown.empty()) {
    std::ofstream os(markdown);
    os << icam::report_markdown(report);
  }
  manifest.finalize();
  std::printf("%zu instances: mean objective %.4f, mean gap %.3f%%, %.2fs\n",
              report.rows.size(), report.mean_objective(), report.mean_gap(),
              report.total_seconds());
  return 0;
}

int run_train(const std::string& config_path, const std::string& preset,
              const std::string& out_dir, std::uint64_t seed, int threads,
              int batches) {
  icam::TrainingConfig cfg;
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw icam::Error("cannot open config: " + config_path);
    std::ostringstream buf;
    buf << is.rdbuf();
    cfg = icam::parse_training_config(buf.str());
  } else if (!preset.empty()) {
    cfg = icam::training_preset(preset);
  } else {
    throw icam::ArgumentError("train needs --config or --preset");
  }
  // Flags override the file, file overrides preset defaults.
  if (seed != 0) cfg.seed = seed;
  if (threads > 0) cfg.threads = threads;
  if (batches > 0) cfg.batches_per_epoch = batches;

  const std::string resolved = icam::serialize_training_config(cfg);
  std::filesystem::create_directories(out_dir);
  RunManifest manifest("train", resolved, cfg.seed, {out_dir});
  {
    std::ofstream os(out_dir + "/resolved_config.txt");
    os << resolved;
  }
  icam::Model model =
      icam::Model::init(cfg.model, icam::derive_seed(cfg.seed, 0xC0FFEE));
  icam::train(cfg, model, cfg.seed, out_dir, [](const icam::EpochMetrics& m) {
    std::printf("epoch %d stage %d mean_length %.4f loss %.6f alpha %.4f %.1fs\n",
                m.epoch, m.stage, m.mean_length, m.mean_loss, m.alpha_mean,
                m.seconds);
    std::fflush(stdout);
  });
  manifest.finalize();
  std::cout << "final checkpoint: " << out_dir << "/model.bin\n";
  return 0;
}

int run_bench(const std::string& mechanism, const std::string& dims,
              std::size_t d, int repeats, const std::string& out) {
  std::vector<std::size_t> ns;
  std::stringstream ss(dims);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) ns.push_back(static_cast<std::size_t>(std::stoul(tok)));
  }
  if (ns.empty()) throw icam::ArgumentError("--dims must list at least one N");
  RunManifest manifest("bench",
                       "bench mechanism=" + mechanism + " dims=" + dims +
                           " d=" + std::to_string(d) +
                           " repeats=" + std::to_string(repeats),
                       0, {out});
  auto records = icam::bench_attention(ns, d, repeats);
  if (mechanism != "both") {
    std::erase_if(records, [&](const icam::BenchRecord& r) {
      return r.mechanism != mechanism;
    });
  }
  icam::write_bench_csv(records, out);
  for (const auto& r : records) {
    std::printf("%-5s n=%-5zu d=%zu  %.4fs  peak %zu bytes\n",
                r.mechanism.c_str(), r.n, r.d, r.seconds, r.peak_bytes);
  }
  // Growth exponents per mechanism over the N ladder.
  for (const std::string mech : {"mha", "aafm"}) {
    std::vector<double> xs, bytes, secs;
    for (const auto& r : records) {
      if (r.mechanism != mech) continue;
      xs.push_back(static_cast<double>(r.n));
      bytes.push_back(static_cast<double>(r.peak_bytes));
      secs.push_back(r.seconds);
    }
    if (xs.size() >= 2) {
      std::printf("%-5s space slope %.3f, time slope %.3f\n", mech.c_str(),
                  icam::fit_loglog_slope(xs, bytes),
                  icam::fit_loglog_slope(xs, secs));
    }
  }
  manifest.finalize();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instance-conditioned constructive solver for TSP/CVRP"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate random instances (JSONL)");
  std::string gen_problem = "tsp", gen_out = "instances.jsonl";
  int gen_n = 100, gen_count = 1, gen_capacity = 0, gen_cap_lo = 0,
      gen_cap_hi = 0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--problem", gen_problem, "tsp or cvrp");
  gen->add_option("--n", gen_n, "nodes (tsp) or customers (cvrp)")->required();
  gen->add_option("--count", gen_count, "number of instances");
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--out", gen_out, "output JSONL path")->required();
  gen->add_option("--capacity", gen_capacity, "fixed CVRP capacity");
  gen->add_option("--capacity-lo", gen_cap_lo, "uniform capacity lower bound");
  gen->add_option("--capacity-hi", gen_cap_hi, "uniform capacity upper bound");

  // train
  auto* train = app.add_subcommand("train", "Run the staged training schedule");
  std::string train_config, train_preset, train_out = "run";
  std::uint64_t train_seed = 0;
  int train_threads = 0, train_batches = 0;
  train->add_option("--config", train_config, "key = value config file");
  train->add_option("--preset", train_preset,
                    "tsp_paper | cvrp_paper | tsp_desk | cvrp_desk");
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--threads", train_threads, "worker threads (0 = auto)");
  train->add_option("--batches-per-epoch", train_batches,
                    "override batches per epoch");

  // solve
  auto* solve = app.add_subcommand("solve", "Construct tours with a checkpoint");
  std::string solve_ckpt, solve_instances, solve_mode = "multi",
              solve_out = "solutions.jsonl";
  int solve_traj = 0, solve_threads = 0;
  std::uint64_t solve_seed = 0;
  solve->add_option("--ckpt", solve_ckpt, "model checkpoint")->required();
  solve->add_option("--instances", solve_instances, "instance JSONL or .vrp")
      ->required();
  solve->add_option("--mode", solve_mode, "single | multi | sample | aug8");
  solve->add_option("--out", solve_out, "solution JSONL path");
  solve->add_option("--trajectories", solve_traj, "starts per instance");
  solve->add_option("--seed", solve_seed, "sampling seed");
  solve->add_option("--threads", solve_threads, "worker threads (0 = auto)");

  // eval
  auto* eval = app.add_subcommand("eval", "Objective/gap report");
  std::string eval_instances, eval_method = "nn2opt", eval_ref = "auto",
              eval_ckpt, eval_mode = "multi", eval_out = "report.csv",
              eval_md;
  int eval_traj = 0, eval_threads = 0;
  eval->add_option("--instances", eval_instances, "instance JSONL or .vrp")
      ->required();
  eval->add_option("--method", eval_method, "icam | nn2opt | exact");
  eval->add_option("--ref", eval_ref, "auto | exact | nn2opt | file:PATH");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint for --method icam");
  eval->add_option("--mode", eval_mode, "rollout mode for icam");
  eval->add_option("--out", eval_out, "CSV report path");
  eval->add_option("--markdown", eval_md, "optional markdown table path");
  eval->add_option("--trajectories", eval_traj, "starts per instance");
  eval->add_option("--threads", eval_threads, "worker threads (0 = auto)");

  // bench
  auto* bench = app.add_subcommand("bench", "Attention mechanism micro-bench");
  std::string bench_mech = "both", bench_dims = "128,256,512,1024,2048",
              bench_out = "bench.csv";
  std::size_t bench_d = 128;
  int bench_repeats = 3;
  bench->add_option("--mechanism", bench_mech, "aafm | mha | both");
  bench->add_option("--dims", bench_dims, "comma-separated N ladder");
  bench->add_option("--d", bench_d, "feature dimension");
  bench->add_option("--repeats", bench_repeats, "repeats per point");
  bench->add_option("--out", bench_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      return run_gen(gen_problem, gen_n, gen_count, gen_seed, gen_out,
                     gen_capacity, gen_cap_lo, gen_cap_hi);
    }
    if (train->parsed()) {
      return run_train(train_config, train_preset, train_out, train_seed,
                       train_threads, train_batches);
    }
    if (solve->parsed()) {
      return run_solve(solve_ckpt, solve_instances, solve_mode, solve_out,
                       solve_traj, solve_seed, solve_threads);
    }
    if (eval->parsed()) {
      return run_eval(eval_instances, eval_method, eval_ref, eval_ckpt,
                      eval_mode, eval_out, eval_md, eval_traj, eval_threads);
    }
    if (bench->parsed()) {
      return run_bench(bench_mech, bench_dims, bench_d, bench_repeats,
                       bench_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
