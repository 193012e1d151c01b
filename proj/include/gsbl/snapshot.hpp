#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "gsbl/channel_sim.hpp"
#include "gsbl/vbi.hpp"

namespace gsbl {

inline void write_elbo_trace_csv(std::ostream& os, const std::vector<double>& trace) {
  os << "iteration,elbo\n";
  char buf[32];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", trace[i]);
    os << i << ',' << buf << '\n';
  }
}

// Long format (row, column, value) so heatmaps need no reshaping downstream.
inline void write_matrix_csv(std::ostream& os, const RMat& m, const std::string& row_name,
                             const std::string& col_name) {
  os << row_name << ',' << col_name << ",value\n";
  char buf[32];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      os << r << ',' << c << ',' << buf << '\n';
    }
  }
}

/// Writes elbo.csv, gamma_common.csv (G x L), gamma_individual.csv (K x L),
/// assignment.csv (K x G), offsets.csv and, when given, realization.csv.
inline std::vector<std::filesystem::path> write_snapshot(const std::filesystem::path& dir,
                                                         const InferenceResult& result,
                                                         const ChannelRealization* realization = nullptr,
                                                         int subpaths_per_cluster = 1) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto open = [&](const char* name) {
    written.push_back(dir / name);
    std::ofstream f(written.back());
    if (!f) throw std::runtime_error("cannot write " + written.back().string());
    return f;
  };
  const auto& s = result.state;
  {
    auto f = open("elbo.csv");
    write_elbo_trace_csv(f, result.elbo_trace);
  }
  {
    auto f = open("gamma_common.csv");
    write_matrix_csv(f, s.common_mean(), "group", "grid");
  }
  {
    auto f = open("gamma_individual.csv");
    write_matrix_csv(f, s.individual_mean(), "user", "grid");
  }
  {
    auto f = open("assignment.csv");
    write_matrix_csv(f, s.assignment, "user", "group");
  }
  {
    auto f = open("offsets.csv");
    f << "user,grid,beta,elevation\n";
    f.precision(17);
    for (int k = 0; k < s.n_users(); ++k) {
      const auto& off = s.offsets[static_cast<std::size_t>(k)];
      for (Eigen::Index l = 0; l < off.beta.size(); ++l) {
        f << k << ',' << l << ',' << off.beta[l] << ',' << off.elevation[l] << '\n';
      }
    }
  }
  if (realization) {
    auto f = open("realization.csv");
    write_realization_csv(f, *realization, subpaths_per_cluster);
  }
  return written;
}

}  // namespace gsbl
