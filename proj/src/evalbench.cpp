#include "icam/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "icam/rng.hpp"

namespace icam {

namespace {

double euclid(const Instance& inst, int a, int b) {
  const double dx = inst.coords[static_cast<std::size_t>(a)][0] -
                    inst.coords[static_cast<std::size_t>(b)][0];
  const double dy = inst.coords[static_cast<std::size_t>(a)][1] -
                    inst.coords[static_cast<std::size_t>(b)][1];
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

TourResult exact_tsp(const Instance& inst) {
  if (inst.problem != Problem::tsp) {
    throw ArgumentError("exact_tsp expects a TSP instance");
  }
  inst.validate();
  const int n = inst.node_count();
  if (n > 15) {
    throw SizeError("exact_tsp handles N <= 15 (got " + std::to_string(n) +
                    "); use the nn2opt heuristic baseline instead");
  }
  const DistanceMatrix dm = distance_matrix(inst);
  if (n == 2) {
    return {2.0 * dm(0, 1), {0, 1}};
  }

  // Held-Karp over subsets of {1..n-1} with tours anchored at node 0.
  const int m = n - 1;  // free nodes
  const std::size_t full = std::size_t{1} << m;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> cost(full * static_cast<std::size_t>(m), inf);
  std::vector<std::int8_t> parent(full * static_cast<std::size_t>(m), -1);
  for (int j = 0; j < m; ++j) {
    cost[(std::size_t{1} << j) * static_cast<std::size_t>(m) +
         static_cast<std::size_t>(j)] = dm(0, j + 1);
  }
  for (std::size_t s = 1; s < full; ++s) {
    for (int j = 0; j < m; ++j) {
      if (!(s >> j & 1)) continue;
      const double cj =
          cost[s * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)];
      if (cj == inf) continue;
      for (int k = 0; k < m; ++k) {
        if (s >> k & 1) continue;
        const std::size_t ns = s | (std::size_t{1} << k);
        const double cand = cj + dm(j + 1, k + 1);
        double& slot =
            cost[ns * static_cast<std::size_t>(m) + static_cast<std::size_t>(k)];
        if (cand < slot) {
          slot = cand;
          parent[ns * static_cast<std::size_t>(m) +
                 static_cast<std::size_t>(k)] = static_cast<std::int8_t>(j);
        }
      }
    }
  }
  double best = inf;
  int best_end = 0;
  for (int j = 0; j < m; ++j) {
    const double total =
        cost[(full - 1) * static_cast<std::size_t>(m) +
             static_cast<std::size_t>(j)] +
        dm(j + 1, 0);
    if (total < best) {
      best = total;
      best_end = j;
    }
  }
  std::vector<int> order;
  std::size_t s = full - 1;
  int j = best_end;
  while (j >= 0) {
    order.push_back(j + 1);
    const auto p = parent[s * static_cast<std::size_t>(m) +
                          static_cast<std::size_t>(j)];
    s ^= std::size_t{1} << j;
    j = p;
  }
  order.push_back(0);
  std::reverse(order.begin(), order.end());
  return {best, std::move(order)};
}

double exact_cvrp(const Instance& inst) {
  if (inst.problem != Problem::cvrp) {
    throw ArgumentError("exact_cvrp expects a CVRP instance");
  }
  inst.validate();
  const int customers = inst.customer_count();
  if (customers > 8) {
    throw SizeError("exact_cvrp handles <= 8 customers (got " +
                    std::to_string(customers) + ")");
  }
  const std::size_t full = std::size_t{1} << customers;

  // Optimal single-route cost for every capacity-feasible customer subset:
  // brute force over within-route orders (subsets are tiny).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> route_cost(full, inf);
  std::vector<int> members;
  for (std::size_t s = 1; s < full; ++s) {
    int demand = 0;
    members.clear();
    for (int c = 0; c < customers; ++c) {
      if (s >> c & 1) {
        members.push_back(c + 1);
        demand += inst.demands[static_cast<std::size_t>(c + 1)];
      }
    }
    if (demand > inst.capacity) continue;
    std::sort(members.begin(), members.end());
    double best = inf;
    do {
      double len = euclid(inst, 0, members.front());
      for (std::size_t i = 0; i + 1 < members.size(); ++i) {
        len += euclid(inst, members[i], members[i + 1]);
      }
      len += euclid(inst, members.back(), 0);
      best = std::min(best, len);
    } while (std::next_permutation(members.begin(), members.end()));
    route_cost[s] = best;
  }

  // Partition the customer set into feasible routes.
  std::vector<double> best(full, inf);
  best[0] = 0.0;
  for (std::size_t s = 1; s < full; ++s) {
    // Fix the lowest set customer into the candidate route to avoid
    // enumerating each partition once per route ordering.
    const std::size_t lowest = s & (~s + 1);
    for (std::size_t sub = s; sub != 0; sub = (sub - 1) & s) {
      if (!(sub & lowest)) continue;
      if (route_cost[sub] == inf || best[s ^ sub] == inf) continue;
      best[s] = std::min(best[s], best[s ^ sub] + route_cost[sub]);
    }
  }
  return best[full - 1];
}

TourResult nn_two_opt(const Instance& inst) {
  if (inst.problem != Problem::tsp) {
    throw ArgumentError("nn_two_opt expects a TSP instance");
  }
  inst.validate();
  const int n = inst.node_count();
  if (n > 2000) {
    throw SizeError("nn_two_opt handles N <= 2000 (got " + std::to_string(n) +
                    ")");
  }
  const DistanceMatrix dm = distance_matrix(inst);

  // Nearest neighbor from node 0, ties toward the lower index.
  std::vector<int> tour;
  tour.reserve(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> used(static_cast<std::size_t>(n), 0);
  int current = 0;
  used[0] = 1;
  tour.push_back(0);
  for (int step = 1; step < n; ++step) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (!used[static_cast<std::size_t>(j)] && dm(current, j) < best_d) {
        best_d = dm(current, j);
        best = j;
      }
    }
    used[static_cast<std::size_t>(best)] = 1;
    tour.push_back(best);
    current = best;
  }

  // First-improvement 2-opt sweeps until a full pass finds nothing.
  bool improved = true;
  while (improved) {
    improved = false;
    for (int i = 0; i < n - 1; ++i) {
      const int a = tour[static_cast<std::size_t>(i)];
      const int b = tour[static_cast<std::size_t>(i + 1)];
      for (int j = i + 2; j < n; ++j) {
        if (i == 0 && j == n - 1) continue;  // same edge pair
        const int c = tour[static_cast<std::size_t>(j)];
        const int d = tour[static_cast<std::size_t>((j + 1) % n)];
        const double delta = dm(a, c) + dm(b, d) - dm(a, b) - dm(c, d);
        if (delta < -1e-12) {
          std::reverse(tour.begin() + i + 1, tour.begin() + j + 1);
          improved = true;
          break;  // tour changed under this i; the outer pass rescans
        }
      }
    }
  }

  double length = 0.0;
  for (int i = 0; i < n; ++i) {
    length += dm(tour[static_cast<std::size_t>(i)],
                 tour[static_cast<std::size_t>((i + 1) % n)]);
  }
  return {length, std::move(tour)};
}

double gap_percent(double obj, double ref) {
  if (ref <= 0) throw ArgumentError("gap needs a positive reference objective");
  return (obj - ref) / ref * 100.0;
}

double GapReport::mean_objective() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.objective;
  return s / static_cast<double>(rows.size());
}

double GapReport::mean_gap() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.gap;
  return s / static_cast<double>(rows.size());
}

double GapReport::total_seconds() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.seconds;
  return s;
}

void write_report_csv(const GapReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open report for writing: " + path);
  os.precision(12);
  os << "id,method,objective,reference,gap_percent,seconds,ref_source\n";
  for (const auto& r : report.rows) {
    os << r.id << ',' << r.method << ',' << r.objective << ',' << r.reference
       << ',' << r.gap << ',' << r.seconds << ',' << r.ref_source << '\n';
  }
  os << "# mean_objective=" << report.mean_objective()
     << " mean_gap=" << report.mean_gap()
     << " total_seconds=" << report.total_seconds() << '\n';
}

std::string report_markdown(const GapReport& report) {
  // Aggregate per method, Table-1 style columns.
  std::vector<std::string> methods;
  for (const auto& r : report.rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
      methods.push_back(r.method);
    }
  }
  std::ostringstream os;
  os << "| Method | Obj. | Gap | Time |\n|---|---|---|---|\n";
  for (const auto& m : methods) {
    double obj = 0, gap = 0, secs = 0;
    int count = 0;
    for (const auto& r : report.rows) {
      if (r.method != m) continue;
      obj += r.objective;
      gap += r.gap;
      secs += r.seconds;
      count += 1;
    }
    obj /= count;
    gap /= count;
    char gap_s[32];
    std::snprintf(gap_s, sizeof(gap_s), "%.3f%%", gap);
    char obj_s[32];
    std::snprintf(obj_s, sizeof(obj_s), "%.4f", obj);
    char sec_s[32];
    std::snprintf(sec_s, sizeof(sec_s), "%.2fs", secs);
    os << "| " << m << " | " << obj_s << " | " << gap_s << " | " << sec_s
       << " |\n";
  }
  return os.str();
}

// --- attention mechanism bench ------------------------------------------

namespace {

// Tracks the largest single buffer a mechanism allocates.
struct AllocTracker {
  std::size_t peak_bytes = 0;
  std::vector<double> take(std::size_t count) {
    peak_bytes = std::max(peak_bytes, count * sizeof(double));
    return std::vector<double>(count);
  }
};

// Reference scaled dot-product attention with a materialized (n x n)
// score matrix, single head.
double mha_forward(const std::vector<double>& q, const std::vector<double>& k,
                   const std::vector<double>& v, std::size_t n, std::size_t d,
                   AllocTracker& tracker) {
  std::vector<double> scores = tracker.take(n * n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += q[i * d + t] * k[j * d + t];
      scores[i * n + j] = acc * scale;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double mx = scores[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, scores[i * n + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      scores[i * n + j] = std::exp(scores[i * n + j] - mx);
      denom += scores[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) scores[i * n + j] /= denom;
  }
  std::vector<double> out = tracker.take(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double w = scores[i * n + j];
      if (w == 0.0) continue;
      for (std::size_t t = 0; t < d; ++t) out[i * d + t] += w * v[j * d + t];
    }
  }
  double checksum = 0.0;
  for (double x : out) checksum += x;
  return checksum;
}

// Attention-free mix with the distance bias computed on the fly from the
// coordinates; largest transient is O(n*d). Key columns are shifted by
// their max; the bias is nonpositive, so the weights stay in (0, 1].
double aafm_forward(const std::vector<double>& q, const std::vector<double>& k,
                    const std::vector<double>& v,
                    const std::vector<std::array<double, 2>>& coords,
                    double alpha, std::size_t n, std::size_t d,
                    AllocTracker& tracker) {
  const double factor = -alpha * std::log2(static_cast<double>(n));
  std::vector<double> expk = tracker.take(n * d);
  {
    std::vector<double> colmax = tracker.take(d);
    for (std::size_t t = 0; t < d; ++t) {
      colmax[t] = -std::numeric_limits<double>::infinity();
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t t = 0; t < d; ++t) {
        colmax[t] = std::max(colmax[t], k[j * d + t]);
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t t = 0; t < d; ++t) {
        expk[j * d + t] = std::exp(k[j * d + t] - colmax[t]);
      }
    }
  }
  std::vector<double> out = tracker.take(n * d);
  std::vector<double> num = tracker.take(d);
  std::vector<double> den = tracker.take(d);
  std::vector<double> bias_w = tracker.take(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = coords[i][0] - coords[j][0];
      const double dy = coords[i][1] - coords[j][1];
      bias_w[j] = std::exp(factor * std::sqrt(dx * dx + dy * dy));
    }
    std::fill(num.begin(), num.end(), 0.0);
    std::fill(den.begin(), den.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double bw = bias_w[j];
      const double* ek = expk.data() + j * d;
      const double* vj = v.data() + j * d;
      for (std::size_t t = 0; t < d; ++t) {
        const double w = bw * ek[t];
        num[t] += w * vj[t];
        den[t] += w;
      }
    }
    for (std::size_t t = 0; t < d; ++t) {
      const double qx = q[i * d + t];
      const double sig = qx >= 0 ? 1.0 / (1.0 + std::exp(-qx))
                                 : std::exp(qx) / (1.0 + std::exp(qx));
      out[i * d + t] = sig * num[t] / den[t];
    }
  }
  double checksum = 0.0;
  for (double x : out) checksum += x;
  return checksum;
}

}  // namespace

std::vector<BenchRecord> bench_attention(const std::vector<std::size_t>& ns,
                                         std::size_t d, int repeats,
                                         std::uint64_t seed) {
  if (repeats < 1) throw ArgumentError("bench needs repeats >= 1");
  std::vector<BenchRecord> records;
  volatile double sink = 0.0;  // defeats dead-code elimination
  for (std::size_t n : ns) {
    Rng rng(derive_seed(seed, n));
    std::vector<double> q(n * d), k(n * d), v(n * d);
    for (auto& x : q) x = rng.uniform(-1, 1);
    for (auto& x : k) x = rng.uniform(-1, 1);
    for (auto& x : v) x = rng.uniform(-1, 1);
    std::vector<std::array<double, 2>> coords(n);
    for (auto& c : coords) c = {rng.uniform(), rng.uniform()};

    for (const std::string mech : {"mha", "aafm"}) {
      AllocTracker tracker;
      double best = std::numeric_limits<double>::infinity();
      for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        if (mech == "mha") {
          sink = sink + mha_forward(q, k, v, n, d, tracker);
        } else {
          sink = sink + aafm_forward(q, k, v, coords, 1.0, n, d, tracker);
        }
        best = std::min(best, std::chrono::duration<double>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count());
      }
      records.push_back({mech, n, d, best, tracker.peak_bytes});
    }
  }
  return records;
}

void write_bench_csv(const std::vector<BenchRecord>& records,
                     const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open bench output: " + path);
  os << "mechanism,n,d,seconds,peak_bytes\n";
  os.precision(9);
  for (const auto& r : records) {
    os << r.mechanism << ',' << r.n << ',' << r.d << ',' << r.seconds << ','
       << r.peak_bytes << '\n';
  }
}

double fit_loglog_slope(const std::vector<double>& x,
                        const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ArgumentError("slope fit needs >= 2 points");
  }
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace icam
