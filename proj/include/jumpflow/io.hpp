#pragma once

// CSV output. Every file gets a header row; doubles are printed with 17
// significant digits so a reader recovers the exact binary value.

#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jumpflow/engine.hpp"

namespace jumpflow::io {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(const std::string& path,
                      std::span<const std::string> header,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path, std::ios::binary);  // binary: LF everywhere
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (std::size_t c = 0; c < header.size(); ++c)
    out << (c ? "," : "") << header[c];
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw std::runtime_error("csv row width mismatch: " + path);
    for (std::size_t c = 0; c < row.size(); ++c)
      out << (c ? "," : "") << fmt(row[c]);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

// One file for a batch of paths: path index, time, state, then flattened
// Jacobians when they were recorded.
inline void write_paths_csv(const std::string& path,
                            std::span<const engine::Path> paths) {
  if (paths.empty()) throw std::runtime_error("no paths to write");
  const int e = paths.front().e;
  const bool jac = !paths.front().J_fwd.empty();
  std::vector<std::string> header{"path", "t"};
  for (int i = 1; i <= e; ++i) header.push_back("x" + std::to_string(i));
  if (jac) {
    for (int i = 1; i <= e; ++i)
      for (int j = 1; j <= e; ++j)
        header.push_back("Jf" + std::to_string(i) + std::to_string(j));
    for (int i = 1; i <= e; ++i)
      for (int j = 1; j <= e; ++j)
        header.push_back("Ji" + std::to_string(i) + std::to_string(j));
  }
  std::vector<std::vector<double>> rows;
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const auto& pp = paths[p];
    for (std::size_t k = 0; k < pp.points(); ++k) {
      std::vector<double> row{static_cast<double>(p), pp.grid[k]};
      const auto x = pp.state(k);
      row.insert(row.end(), x.begin(), x.end());
      if (jac) {
        const auto jf = pp.jac_fwd(k);
        const auto ji = pp.jac_inv(k);
        row.insert(row.end(), jf.begin(), jf.end());
        row.insert(row.end(), ji.begin(), ji.end());
      }
      rows.push_back(std::move(row));
    }
  }
  write_csv(path, header, rows);
}

}  // namespace jumpflow::io
