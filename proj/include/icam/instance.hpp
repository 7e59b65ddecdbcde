#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "icam/errors.hpp"

namespace icam {

enum class Problem { tsp, cvrp };

std::string problem_name(Problem p);
Problem problem_from_name(const std::string& s);

// One routing problem. For CVRP, index 0 is the depot and demands[0] == 0.
struct Instance {
  Problem problem = Problem::tsp;
  std::string id;
  std::vector<std::array<double, 2>> coords;
  std::vector<int> demands;  // CVRP only
  int capacity = 0;          // CVRP only
  // Lengths in the instance's coordinates times coord_scale give lengths in
  // the source file's original units (used after CVRPLib normalization).
  double coord_scale = 1.0;

  int node_count() const { return static_cast<int>(coords.size()); }
  int customer_count() const {
    return problem == Problem::cvrp ? node_count() - 1 : node_count();
  }
  // The "N" the adaptation bias conditions on: nodes for TSP, customers for
  // CVRP (so tsp100 and cvrp100 share the scale label 100).
  int scale() const { return customer_count(); }

  void validate() const;  // throws ArgumentError on a broken invariant
};

// Symmetric Euclidean distances, flat row-major.
struct DistanceMatrix {
  int n = 0;
  std::vector<double> d;
  double operator()(int i, int j) const { return d[static_cast<std::size_t>(i) * n + j]; }
};

DistanceMatrix distance_matrix(const Instance& inst);

struct CapacityRule {
  enum class Kind { fixed, uniform_range };
  Kind kind = Kind::fixed;
  int value = 50;
  int lo = 50, hi = 100;

  static CapacityRule fixed(int v) { return {Kind::fixed, v, 0, 0}; }
  static CapacityRule uniform(int lo, int hi) {
    return {Kind::uniform_range, 0, lo, hi};
  }
};

// Standard test capacity for a CVRP of the given customer count
// (100 -> 50, 200 -> 80, 500 -> 100, larger -> 250).
int default_test_capacity(int customers);

// Coordinates i.i.d. Unif[0,1]^2; CVRP demands integer Unif[1,9]. n counts
// nodes for TSP and customers for CVRP. Deterministic under seed.
Instance generate_uniform(Problem problem, int n, const CapacityRule& rule,
                          std::uint64_t seed);

// The eight dihedral images of the unit square; image 0 is the input.
std::array<Instance, 8> augment_x8(const Instance& inst);

// JSON-lines persistence: {"problem","id","coords":[[x,y],...],
// "demands":[...]?, "capacity":?}
std::string instance_to_json(const Instance& inst);
Instance instance_from_json(const std::string& line);
std::vector<Instance> load_instances(const std::string& path);
void save_instances(const std::vector<Instance>& insts, const std::string& path);

}  // namespace icam
