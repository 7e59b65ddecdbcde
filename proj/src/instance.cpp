#include "icam/instance.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "icam/rng.hpp"

namespace icam {

std::string problem_name(Problem p) {
  return p == Problem::tsp ? "tsp" : "cvrp";
}

Problem problem_from_name(const std::string& s) {
  if (s == "tsp") return Problem::tsp;
  if (s == "cvrp") return Problem::cvrp;
  throw ArgumentError("unknown problem '" + s + "' (expected tsp or cvrp)");
}

void Instance::validate() const {
  if (problem == Problem::tsp) {
    if (node_count() < 2) throw ArgumentError("TSP instance needs >= 2 nodes");
    if (!demands.empty()) throw ArgumentError("TSP instance with demands");
  } else {
    if (customer_count() < 2) {
      throw ArgumentError("CVRP instance needs >= 2 customers plus the depot");
    }
    if (static_cast<int>(demands.size()) != node_count()) {
      throw ArgumentError("CVRP demand count must match node count");
    }
    if (demands[0] != 0) throw ArgumentError("depot demand must be 0");
    if (capacity <= 0) throw ArgumentError("CVRP capacity must be positive");
    for (std::size_t i = 1; i < demands.size(); ++i) {
      if (demands[i] < 0) throw ArgumentError("negative demand");
      if (demands[i] > capacity) {
        throw ArgumentError("demand " + std::to_string(demands[i]) +
                            " exceeds capacity " + std::to_string(capacity));
      }
    }
  }
  for (const auto& c : coords) {
    if (!std::isfinite(c[0]) || !std::isfinite(c[1])) {
      throw ArgumentError("non-finite coordinate");
    }
  }
}

DistanceMatrix distance_matrix(const Instance& inst) {
  const int n = inst.node_count();
  DistanceMatrix dm;
  dm.n = n;
  dm.d.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double dx = inst.coords[i][0] - inst.coords[j][0];
      const double dy = inst.coords[i][1] - inst.coords[j][1];
      const double dist = std::sqrt(dx * dx + dy * dy);
      dm.d[static_cast<std::size_t>(i) * n + j] = dist;
      dm.d[static_cast<std::size_t>(j) * n + i] = dist;
    }
  }
  return dm;
}

int default_test_capacity(int customers) {
  if (customers <= 100) return 50;
  if (customers <= 200) return 80;
  if (customers <= 500) return 100;
  return 250;
}

Instance generate_uniform(Problem problem, int n, const CapacityRule& rule,
                          std::uint64_t seed) {
  if (n < 2) throw ArgumentError("instance scale must be >= 2");
  Rng rng(seed);
  Instance inst;
  inst.problem = problem;
  if (problem == Problem::tsp) {
    inst.id = "tsp" + std::to_string(n) + "-" + std::to_string(seed);
    inst.coords.resize(static_cast<std::size_t>(n));
    for (auto& c : inst.coords) {
      c[0] = rng.uniform();
      c[1] = rng.uniform();
    }
  } else {
    inst.id = "cvrp" + std::to_string(n) + "-" + std::to_string(seed);
    inst.coords.resize(static_cast<std::size_t>(n) + 1);
    for (auto& c : inst.coords) {
      c[0] = rng.uniform();
      c[1] = rng.uniform();
    }
    inst.demands.resize(static_cast<std::size_t>(n) + 1);
    inst.demands[0] = 0;
    for (int i = 1; i <= n; ++i) {
      inst.demands[static_cast<std::size_t>(i)] =
          static_cast<int>(rng.uniform_int(1, 9));
    }
    inst.capacity = rule.kind == CapacityRule::Kind::fixed
                        ? rule.value
                        : static_cast<int>(rng.uniform_int(rule.lo, rule.hi));
  }
  inst.validate();
  return inst;
}

std::array<Instance, 8> augment_x8(const Instance& inst) {
  for (const auto& c : inst.coords) {
    if (c[0] < 0 || c[0] > 1 || c[1] < 0 || c[1] > 1) {
      throw ArgumentError(
          "augment_x8 requires coordinates in the unit square");
    }
  }
  std::array<Instance, 8> out;
  // The dihedral group of the unit square, identity first.
  const std::array<std::array<double, 2> (*)(double, double), 8> maps = {
      +[](double x, double y) { return std::array<double, 2>{x, y}; },
      +[](double x, double y) { return std::array<double, 2>{y, x}; },
      +[](double x, double y) { return std::array<double, 2>{x, 1 - y}; },
      +[](double x, double y) { return std::array<double, 2>{1 - y, x}; },
      +[](double x, double y) { return std::array<double, 2>{1 - x, y}; },
      +[](double x, double y) { return std::array<double, 2>{y, 1 - x}; },
      +[](double x, double y) { return std::array<double, 2>{1 - x, 1 - y}; },
      +[](double x, double y) { return std::array<double, 2>{1 - y, 1 - x}; },
  };
  for (std::size_t k = 0; k < 8; ++k) {
    out[k] = inst;
    for (std::size_t i = 0; i < inst.coords.size(); ++i) {
      out[k].coords[i] = maps[k](inst.coords[i][0], inst.coords[i][1]);
    }
  }
  return out;
}

std::string instance_to_json(const Instance& inst) {
  nlohmann::json j;
  j["problem"] = problem_name(inst.problem);
  j["id"] = inst.id;
  auto coords = nlohmann::json::array();
  for (const auto& c : inst.coords) coords.push_back({c[0], c[1]});
  j["coords"] = std::move(coords);
  if (inst.problem == Problem::cvrp) {
    j["demands"] = inst.demands;
    j["capacity"] = inst.capacity;
  }
  return j.dump();
}

Instance instance_from_json(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad instance JSON: ") + e.what());
  }
  Instance inst;
  inst.problem = problem_from_name(j.at("problem").get<std::string>());
  inst.id = j.value("id", "");
  for (const auto& c : j.at("coords")) {
    inst.coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
  }
  if (inst.problem == Problem::cvrp) {
    inst.demands = j.at("demands").get<std::vector<int>>();
    inst.capacity = j.at("capacity").get<int>();
  }
  inst.validate();
  return inst;
}

std::vector<Instance> load_instances(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open instance file: " + path);
  std::vector<Instance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(instance_from_json(line));
    } catch (const Error& e) {
      throw ParseError(path + " line " + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  return out;
}

void save_instances(const std::vector<Instance>& insts,
                    const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open instance file for writing: " + path);
  for (const auto& inst : insts) os << instance_to_json(inst) << '\n';
}

}  // namespace icam
