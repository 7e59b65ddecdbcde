#pragma once

#include <string>

#include "icam/instance.hpp"

namespace icam {

// Reads a TSPLIB-style .vrp file (EUC_2D only). The depot is moved to
// index 0; coordinates stay in the file's original units.
Instance parse_cvrplib(const std::string& text);

// Writes the sections parse_cvrplib reads back; parse(serialize(parse(t)))
// is a fixed point.
std::string serialize_cvrplib(const Instance& inst);

// Affine map of the coordinates into [0,1]^2 by the bounding square. The
// larger extent maps to exactly [0,1]; aspect ratio is preserved. Records
// the extent in coord_scale so lengths convert back to original units.
Instance scale_cvrplib(const Instance& inst);

Instance load_cvrplib(const std::string& path);

}  // namespace icam
