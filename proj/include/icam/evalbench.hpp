#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icam/instance.hpp"

namespace icam {

struct TourResult {
  double length = 0.0;
  std::vector<int> order;
};

// Held-Karp dynamic program; provably optimal closed tour. N <= 15.
TourResult exact_tsp(const Instance& inst);

// Optimal CVRP total length via per-route exact tours and a set-partition
// dynamic program over customer subsets. Customers <= 8.
double exact_cvrp(const Instance& inst);

// Nearest neighbor from node 0 followed by first-improvement 2-opt to a
// local optimum. Deterministic. TSP with N <= 2000.
TourResult nn_two_opt(const Instance& inst);

// (obj - ref) / ref * 100.
double gap_percent(double obj, double ref);

struct GapRow {
  std::string id;
  std::string method;
  std::string ref_source;  // exact | file | nn2opt
  double objective = 0.0;
  double reference = 0.0;
  double gap = 0.0;  // percent
  double seconds = 0.0;
};

struct GapReport {
  std::vector<GapRow> rows;
  double mean_objective() const;
  double mean_gap() const;
  double total_seconds() const;
};

void write_report_csv(const GapReport& report, const std::string& path);
// Markdown table with one row per method: Obj., Gap, Time.
std::string report_markdown(const GapReport& report);

struct BenchRecord {
  std::string mechanism;  // "mha" or "aafm"
  std::size_t n = 0;
  std::size_t d = 0;
  double seconds = 0.0;
  std::size_t peak_bytes = 0;  // largest single transient allocation
};

// Runs both mechanisms on identical random inputs per n. The attention
// reference materializes the (n x n) score matrix; the attention-free mix
// streams the bias from coordinates and never allocates an n x n buffer.
std::vector<BenchRecord> bench_attention(const std::vector<std::size_t>& ns,
                                         std::size_t d, int repeats,
                                         std::uint64_t seed = 0);

void write_bench_csv(const std::vector<BenchRecord>& records,
                     const std::string& path);

// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(const std::vector<double>& x,
                        const std::vector<double>& y);

}  // namespace icam
