#include "icam/cvrplib.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace icam {

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ParseError("line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Instance parse_cvrplib(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;

  std::string name = "cvrplib";
  int dimension = -1, capacity = -1;
  bool euc2d = false;
  std::vector<std::array<double, 2>> coords;
  std::vector<int> demands;
  std::vector<bool> have_coord, have_demand;
  int depot_id = -1;
  bool saw_coords = false, saw_demands = false, saw_depot = false;

  enum class Section { header, coords, demands, depot, done };
  Section section = Section::header;

  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t == "EOF") break;

    if (t == "NODE_COORD_SECTION") {
      if (dimension <= 0) fail(line_no, "NODE_COORD_SECTION before DIMENSION");
      section = Section::coords;
      coords.assign(static_cast<std::size_t>(dimension), {0, 0});
      have_coord.assign(static_cast<std::size_t>(dimension), false);
      saw_coords = true;
      continue;
    }
    if (t == "DEMAND_SECTION") {
      if (dimension <= 0) fail(line_no, "DEMAND_SECTION before DIMENSION");
      section = Section::demands;
      demands.assign(static_cast<std::size_t>(dimension), 0);
      have_demand.assign(static_cast<std::size_t>(dimension), false);
      saw_demands = true;
      continue;
    }
    if (t == "DEPOT_SECTION") {
      section = Section::depot;
      saw_depot = true;
      continue;
    }

    if (section == Section::header) {
      const auto colon = t.find(':');
      if (colon == std::string::npos) fail(line_no, "expected KEY : VALUE");
      const std::string key = trim(t.substr(0, colon));
      const std::string value = trim(t.substr(colon + 1));
      if (key == "NAME") {
        name = value;
      } else if (key == "DIMENSION") {
        dimension = std::stoi(value);
        if (dimension < 3) fail(line_no, "DIMENSION must be >= 3");
      } else if (key == "CAPACITY") {
        capacity = std::stoi(value);
        if (capacity <= 0) fail(line_no, "CAPACITY must be positive");
      } else if (key == "EDGE_WEIGHT_TYPE") {
        if (value != "EUC_2D") {
          fail(line_no, "unsupported EDGE_WEIGHT_TYPE '" + value +
                            "' (only EUC_2D)");
        }
        euc2d = true;
      }
      // TYPE / COMMENT and any other keys are accepted and ignored.
      continue;
    }

    std::istringstream ls(t);
    if (section == Section::coords) {
      int id;
      double x, y;
      if (!(ls >> id >> x >> y)) fail(line_no, "bad NODE_COORD_SECTION entry");
      if (id < 1 || id > dimension) fail(line_no, "node id out of range");
      coords[static_cast<std::size_t>(id - 1)] = {x, y};
      have_coord[static_cast<std::size_t>(id - 1)] = true;
    } else if (section == Section::demands) {
      int id, dem;
      if (!(ls >> id >> dem)) fail(line_no, "bad DEMAND_SECTION entry");
      if (id < 1 || id > dimension) fail(line_no, "node id out of range");
      if (dem < 0) fail(line_no, "negative demand");
      if (capacity > 0 && dem > capacity) {
        fail(line_no, "demand " + std::to_string(dem) + " exceeds capacity " +
                          std::to_string(capacity));
      }
      demands[static_cast<std::size_t>(id - 1)] = dem;
      have_demand[static_cast<std::size_t>(id - 1)] = true;
    } else if (section == Section::depot) {
      int id;
      if (!(ls >> id)) fail(line_no, "bad DEPOT_SECTION entry");
      if (id == -1) {
        section = Section::done;
      } else {
        if (depot_id != -1) fail(line_no, "multiple depots are not supported");
        if (id < 1 || id > dimension) fail(line_no, "depot id out of range");
        depot_id = id;
      }
    }
  }

  if (dimension <= 0) throw ParseError("missing DIMENSION section");
  if (capacity <= 0) throw ParseError("missing CAPACITY section");
  if (!euc2d) throw ParseError("missing EDGE_WEIGHT_TYPE: EUC_2D");
  if (!saw_coords) throw ParseError("missing NODE_COORD_SECTION");
  if (!saw_demands) throw ParseError("missing DEMAND_SECTION");
  if (!saw_depot || depot_id == -1) throw ParseError("missing DEPOT_SECTION");
  for (int i = 0; i < dimension; ++i) {
    if (!have_coord[static_cast<std::size_t>(i)]) {
      throw ParseError("no coordinates for node " + std::to_string(i + 1));
    }
    if (!have_demand[static_cast<std::size_t>(i)]) {
      throw ParseError("no demand for node " + std::to_string(i + 1));
    }
  }
  if (demands[static_cast<std::size_t>(depot_id - 1)] != 0) {
    throw ParseError("depot demand must be 0");
  }

  Instance inst;
  inst.problem = Problem::cvrp;
  inst.id = name;
  inst.capacity = capacity;
  inst.coords.reserve(static_cast<std::size_t>(dimension));
  inst.demands.reserve(static_cast<std::size_t>(dimension));
  // Depot first, then the remaining nodes in file order.
  inst.coords.push_back(coords[static_cast<std::size_t>(depot_id - 1)]);
  inst.demands.push_back(0);
  for (int i = 0; i < dimension; ++i) {
    if (i == depot_id - 1) continue;
    inst.coords.push_back(coords[static_cast<std::size_t>(i)]);
    inst.demands.push_back(demands[static_cast<std::size_t>(i)]);
  }
  inst.validate();
  return inst;
}

std::string serialize_cvrplib(const Instance& inst) {
  if (inst.problem != Problem::cvrp) {
    throw ArgumentError("serialize_cvrplib expects a CVRP instance");
  }
  std::ostringstream os;
  os << "NAME : " << inst.id << "\n";
  os << "TYPE : CVRP\n";
  os << "DIMENSION : " << inst.node_count() << "\n";
  os << "EDGE_WEIGHT_TYPE : EUC_2D\n";
  os << "CAPACITY : " << inst.capacity << "\n";
  os << "NODE_COORD_SECTION\n";
  os.precision(17);
  for (int i = 0; i < inst.node_count(); ++i) {
    os << (i + 1) << ' ' << inst.coords[static_cast<std::size_t>(i)][0] << ' '
       << inst.coords[static_cast<std::size_t>(i)][1] << "\n";
  }
  os << "DEMAND_SECTION\n";
  for (int i = 0; i < inst.node_count(); ++i) {
    os << (i + 1) << ' ' << inst.demands[static_cast<std::size_t>(i)] << "\n";
  }
  os << "DEPOT_SECTION\n1\n-1\nEOF\n";
  return os.str();
}

Instance scale_cvrplib(const Instance& inst) {
  double min_x = inst.coords[0][0], max_x = min_x;
  double min_y = inst.coords[0][1], max_y = min_y;
  for (const auto& c : inst.coords) {
    min_x = std::min(min_x, c[0]);
    max_x = std::max(max_x, c[0]);
    min_y = std::min(min_y, c[1]);
    max_y = std::max(max_y, c[1]);
  }
  const double extent = std::max(max_x - min_x, max_y - min_y);
  if (extent <= 0) throw ArgumentError("degenerate instance: zero extent");
  Instance scaled = inst;
  for (auto& c : scaled.coords) {
    c[0] = (c[0] - min_x) / extent;
    c[1] = (c[1] - min_y) / extent;
  }
  scaled.coord_scale = inst.coord_scale * extent;
  return scaled;
}

Instance load_cvrplib(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_cvrplib(buf.str());
}

}  // namespace icam
