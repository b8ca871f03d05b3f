#pragma once

#include <array>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dunet/common.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// .pts landmark files
// ---------------------------------------------------------------------------
//
//   version: 1
//   n_points: 68
//   {
//   x0 y0
//   ...
//   }
//
// Coordinates are pixel positions in the image frame.

inline std::vector<std::array<double, 2>> parse_pts(std::istream& is) {
  std::string line;
  int lineno = 0;
  int n_points = -1;
  bool in_body = false;
  std::vector<std::array<double, 2>> pts;
  while (std::getline(is, line)) {
    ++lineno;
    // Trim whitespace.
    const auto b = line.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r\n");
    const std::string s = line.substr(b, e - b + 1);
    if (s.empty()) continue;
    if (!in_body) {
      if (s.rfind("version:", 0) == 0) continue;
      if (s.rfind("n_points:", 0) == 0) {
        try {
          n_points = std::stoi(s.substr(9));
        } catch (const std::exception&) {
          throw ParseError("pts: bad n_points value", lineno);
        }
        if (n_points <= 0) throw ParseError("pts: non-positive n_points", lineno);
        continue;
      }
      if (s == "{") {
        if (n_points < 0) throw ParseError("pts: missing n_points header", lineno);
        in_body = true;
        continue;
      }
      throw ParseError("pts: unexpected header line '" + s + "'", lineno);
    }
    if (s == "}") {
      if (static_cast<int>(pts.size()) != n_points) {
        throw ParseError("pts: expected " + std::to_string(n_points) + " points, got " +
                             std::to_string(pts.size()),
                         lineno);
      }
      return pts;
    }
    std::istringstream ls(s);
    double x, y;
    if (!(ls >> x >> y)) throw ParseError("pts: malformed point line", lineno);
    pts.push_back({x, y});
    if (static_cast<int>(pts.size()) > n_points) {
      throw ParseError("pts: more points than declared", lineno);
    }
  }
  throw ParseError(in_body ? "pts: missing closing brace" : "pts: missing point block",
                   lineno);
}

inline std::vector<std::array<double, 2>> read_pts(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("pts: cannot open " + path);
  return parse_pts(is);
}

inline void write_pts(std::ostream& os, const std::vector<std::array<double, 2>>& pts) {
  os << "version: 1\n";
  os << "n_points: " << pts.size() << "\n";
  os << "{\n";
  os << std::setprecision(6) << std::fixed;
  for (const auto& p : pts) {
    os << p[0] << " " << p[1] << "\n";
  }
  os << "}\n";
}

inline void write_pts(const std::string& path, const std::vector<std::array<double, 2>>& pts) {
  std::ofstream os(path);
  if (!os) throw IoError("pts: cannot open " + path + " for writing");
  write_pts(os, pts);
}

}  // namespace dunet
