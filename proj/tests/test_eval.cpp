#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "icam/evalbench.hpp"
#include "icam/rng.hpp"
#include "oracles.hpp"

using namespace icam;

TEST_CASE("exact_tsp: unit square and the 3-node cycle") {
  Instance square;
  square.problem = Problem::tsp;
  square.coords = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const TourResult r = exact_tsp(square);
  CHECK(r.length == doctest::Approx(4.0));
  CHECK(r.order.size() == 4);

  Instance tri;
  tri.problem = Problem::tsp;
  tri.coords = {{0, 0}, {1, 0}, {0.5, 1}};
  const double expect = test_oracles::leg(tri, 0, 1) +
                        test_oracles::leg(tri, 1, 2) +
                        test_oracles::leg(tri, 2, 0);
  CHECK(exact_tsp(tri).length == doctest::Approx(expect));
}

TEST_CASE("exact_tsp equals permutation brute force up to N = 9") {
  Rng seeds(71);
  for (int n = 5; n <= 9; ++n) {
    for (int trial = 0; trial < 8; ++trial) {
      const Instance inst =
          generate_uniform(Problem::tsp, n, CapacityRule::fixed(0), seeds.next_u64());
      const TourResult solved = exact_tsp(inst);
      const double brute = test_oracles::brute_force_tsp(inst);
      CHECK(std::abs(solved.length - brute) <= 1e-9);
      // the reported order realizes the reported length
      double realized = 0.0;
      for (std::size_t i = 0; i < solved.order.size(); ++i) {
        realized += test_oracles::leg(
            inst, solved.order[i],
            solved.order[(i + 1) % solved.order.size()]);
      }
      CHECK(std::abs(realized - solved.length) <= 1e-9);
    }
  }
}

TEST_CASE("exact_tsp rejects oversized instances") {
  const Instance inst =
      generate_uniform(Problem::tsp, 16, CapacityRule::fixed(0), 5);
  CHECK_THROWS_AS(exact_tsp(inst), SizeError);
}

TEST_CASE("exact_cvrp: out-and-back singletons and forced splits") {
  Instance one;
  one.problem = Problem::cvrp;
  one.coords = {{0.5, 0.5}, {0.9, 0.5}};
  one.demands = {0, 4};
  one.capacity = 10;
  // single customer cannot form a CVRP instance per the invariants, so add
  // a second far customer with zero-ish interaction instead
  Instance two;
  two.problem = Problem::cvrp;
  two.coords = {{0.5, 0.5}, {0.9, 0.5}, {0.9, 0.6}};
  two.demands = {0, 6, 6};
  two.capacity = 10;
  // joint demand 12 > 10: two out-and-back routes
  const double expect = 2 * test_oracles::leg(two, 0, 1) +
                        2 * test_oracles::leg(two, 0, 2);
  CHECK(exact_cvrp(two) == doctest::Approx(expect));

  Instance pooled = two;
  pooled.capacity = 20;  // now one route can serve both
  CHECK(exact_cvrp(pooled) < expect);
}

TEST_CASE("exact_cvrp equals ordered-partition brute force") {
  Rng seeds(73);
  for (int trial = 0; trial < 12; ++trial) {
    const Instance inst = generate_uniform(
        Problem::cvrp, 6, CapacityRule::fixed(static_cast<int>(seeds.uniform_int(10, 25))),
        seeds.next_u64());
    const double solved = exact_cvrp(inst);
    const double brute = test_oracles::brute_force_cvrp(inst);
    CHECK(std::abs(solved - brute) <= 1e-9);
  }
  const Instance big =
      generate_uniform(Problem::cvrp, 9, CapacityRule::fixed(30), 3);
  CHECK_THROWS_AS(exact_cvrp(big), SizeError);
}

TEST_CASE("nn_two_opt: never beats the exact oracle, always a local optimum") {
  Rng seeds(79);
  for (int trial = 0; trial < 10; ++trial) {
    const Instance inst = generate_uniform(
        Problem::tsp, static_cast<int>(seeds.uniform_int(5, 12)),
        CapacityRule::fixed(0), seeds.next_u64());
    const TourResult heur = nn_two_opt(inst);
    const TourResult exact = exact_tsp(inst);
    CHECK(heur.length >= exact.length - 1e-9);

    // 2-opt local optimality: no single reversal improves the tour
    const DistanceMatrix dm = distance_matrix(inst);
    const int n = inst.node_count();
    for (int i = 0; i < n - 1; ++i) {
      for (int j = i + 2; j < n; ++j) {
        if (i == 0 && j == n - 1) continue;
        const int a = heur.order[static_cast<std::size_t>(i)];
        const int b = heur.order[static_cast<std::size_t>(i + 1)];
        const int c = heur.order[static_cast<std::size_t>(j)];
        const int d = heur.order[static_cast<std::size_t>((j + 1) % n)];
        CHECK(dm(a, c) + dm(b, d) - dm(a, b) - dm(c, d) >= -1e-12);
      }
    }
  }
}

TEST_CASE("nn_two_opt: pinned mean length on the fixed N=50 fleet") {
  // Regression pin: mean over 100 seeded N=50 instances, computed once
  // from this implementation. Guards against silent heuristic changes.
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Instance inst =
        generate_uniform(Problem::tsp, 50, CapacityRule::fixed(0), seed);
    total += nn_two_opt(inst).length;
  }
  const double mean = total / 100.0;
  CHECK(mean == doctest::Approx(5.9451493750).epsilon(1e-6));
}

TEST_CASE("gap arithmetic, including the published anchor values") {
  CHECK(gap_percent(10.0, 10.0) == 0.0);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", gap_percent(7.7747, 7.7632));
  CHECK(std::string(buf) == "0.148");
  std::snprintf(buf, sizeof(buf), "%.3f", gap_percent(23.5608, 23.1199));
  CHECK(std::string(buf) == "1.907");
  CHECK_THROWS_AS(gap_percent(1.0, 0.0), ArgumentError);
  CHECK_THROWS_AS(gap_percent(1.0, -2.0), ArgumentError);
}

TEST_CASE("gap report aggregates equal recomputation from rows") {
  GapReport report;
  report.rows = {
      {"a", "icam", "exact", 10.0, 9.5, gap_percent(10.0, 9.5), 0.5},
      {"b", "icam", "exact", 8.0, 8.0, 0.0, 0.25},
      {"c", "nn2opt", "exact", 12.0, 9.0, gap_percent(12.0, 9.0), 0.125},
  };
  double obj = 0, gap = 0, secs = 0;
  for (const auto& r : report.rows) {
    obj += r.objective;
    gap += r.gap;
    secs += r.seconds;
  }
  CHECK(report.mean_objective() == doctest::Approx(obj / 3));
  CHECK(report.mean_gap() == doctest::Approx(gap / 3));
  CHECK(report.total_seconds() == doctest::Approx(secs));

  write_report_csv(report, "report_test.csv");
  std::ifstream is("report_test.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "id,method,objective,reference,gap_percent,seconds,ref_source");
  int data_lines = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] != '#') data_lines += 1;
  }
  CHECK(data_lines == 3);
  std::remove("report_test.csv");

  const std::string md = report_markdown(report);
  CHECK(md.find("| icam |") != std::string::npos);
  CHECK(md.find("| nn2opt |") != std::string::npos);
}

TEST_CASE("bench: byte growth separates the two mechanisms") {
  const std::vector<std::size_t> ladder = {64, 128, 256};
  const auto records = bench_attention(ladder, 32, 1);
  std::vector<double> ns, mha_bytes, aafm_bytes;
  for (const auto& r : records) {
    if (r.mechanism == "mha") {
      ns.push_back(static_cast<double>(r.n));
      mha_bytes.push_back(static_cast<double>(r.peak_bytes));
    } else {
      aafm_bytes.push_back(static_cast<double>(r.peak_bytes));
    }
  }
  REQUIRE(ns.size() == 3);
  // doubling N quadruples the attention matrix and doubles the mix buffers
  for (std::size_t i = 0; i + 1 < ns.size(); ++i) {
    const double mha_ratio = mha_bytes[i + 1] / mha_bytes[i];
    const double aafm_ratio = aafm_bytes[i + 1] / aafm_bytes[i];
    CHECK(mha_ratio >= 4.0 * 0.75);
    CHECK(mha_ratio <= 4.0 * 1.25);
    CHECK(aafm_ratio >= 2.0 * 0.75);
    CHECK(aafm_ratio <= 2.0 * 1.25);
  }
  const double mha_slope = fit_loglog_slope(ns, mha_bytes);
  const double aafm_slope = fit_loglog_slope(ns, aafm_bytes);
  CHECK(mha_slope >= 1.8);
  CHECK(mha_slope <= 2.2);
  CHECK(aafm_slope >= 0.8);
  CHECK(aafm_slope <= 1.2);
  // the attention-free mechanism never allocates an N x N buffer
  for (const auto& r : records) {
    if (r.mechanism == "aafm") {
      CHECK(r.peak_bytes < r.n * r.n * sizeof(double));
    }
  }
}

TEST_CASE("slope fit recovers exact power laws") {
  CHECK(fit_loglog_slope({2, 4, 8}, {4, 16, 64}) == doctest::Approx(2.0));
  CHECK(fit_loglog_slope({2, 4, 8}, {6, 12, 24}) == doctest::Approx(1.0));
}
