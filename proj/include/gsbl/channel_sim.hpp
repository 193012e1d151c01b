#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

#include "gsbl/array_steering.hpp"
#include "gsbl/common.hpp"

namespace gsbl {

enum class CenterPlacement {
  uniform,      // cluster centers uniform over the azimuth span
  on_grid,      // centers snapped to distinct grid points
  grid_offset,  // distinct grid points plus a uniform offset in +-interval/2
};

/// Ground-truth generator settings.
struct GroupScenario {
  int n_groups_true = 1;
  int n_users = 1;
  int shared_clusters = 0;
  int individual_clusters = 1;
  int subpaths_per_cluster = 20;
  double angular_spread_deg = 10.0;
  CenterPlacement placement = CenterPlacement::uniform;
  int grid_size = 0;                // used by grid placements; 0 means one point per antenna
  double max_elevation_deg = 45.0;  // planar arrays: cluster elevations uniform in [0, max]
  std::uint64_t seed = 0;

  int clusters() const { return shared_clusters + individual_clusters; }

  void validate() const {
    if (n_groups_true < 1) throw config_error("n_groups_true must be >= 1");
    if (n_users < 1) throw config_error("n_users must be >= 1");
    if (n_groups_true > n_users) throw config_error("more true groups than users");
    if (shared_clusters < 0 || individual_clusters < 0) throw config_error("negative cluster count");
    if (clusters() < 1) throw config_error("scenario needs at least one cluster");
    if (subpaths_per_cluster < 1) throw config_error("subpaths_per_cluster must be >= 1");
    if (!(angular_spread_deg >= 0.0)) throw config_error("angular spread must be >= 0");
    if (!(max_elevation_deg >= 0.0 && max_elevation_deg <= 90.0)) {
      throw config_error("max elevation must lie in [0, 90] degrees");
    }
  }
};

struct PathSet {
  std::vector<double> azimuth;
  std::vector<double> elevation;
  std::vector<cplx> gain;

  std::size_t size() const { return gain.size(); }
};

struct ClusterCenter {
  double azimuth = 0.0;
  double elevation = 0.0;
  int grid_index = -1;  // set by grid placements
};

struct ChannelRealization {
  std::vector<PathSet> paths;  // per user, clusters in order shared then individual
  std::vector<int> group_label;  // 0-based
  std::vector<std::vector<ClusterCenter>> shared_centers;      // per group
  std::vector<std::vector<ClusterCenter>> individual_centers;  // per user

  int n_users() const { return static_cast<int>(paths.size()); }
};

struct ObservationSet {
  CMat pilots;                // T x N
  std::vector<CVec> received;  // K vectors of length T
  double noise_variance = 0.0;
  double snr_db = 0.0;
  double power = 1.0;

  int n_users() const { return static_cast<int>(received.size()); }
  int n_pilots() const { return static_cast<int>(pilots.rows()); }

  // FNV-1a over the raw bytes; equal sets hash equal.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* data, std::size_t bytes) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
      }
    };
    feed(pilots.data(), sizeof(cplx) * static_cast<std::size_t>(pilots.size()));
    for (const auto& y : received) feed(y.data(), sizeof(cplx) * static_cast<std::size_t>(y.size()));
    feed(&noise_variance, sizeof(double));
    return h;
  }
};

inline cplx complex_normal(std::mt19937_64& rng, double variance = 1.0) {
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5 * variance));
  const double re = normal(rng);
  const double im = normal(rng);
  return {re, im};
}

// Maps an azimuth into the span of the geometry. For a ULA the reflection
// theta -> pi - theta preserves sin(theta) and hence the steering vector.
inline double fold_azimuth(const ArrayGeometry& geometry, double azimuth) {
  if (geometry.is_ula()) {
    azimuth = std::remainder(azimuth, 2.0 * kPi);
    if (azimuth > 0.5 * kPi) azimuth = kPi - azimuth;
    if (azimuth < -0.5 * kPi) azimuth = -kPi - azimuth;
    return azimuth;
  }
  return std::remainder(azimuth, 2.0 * kPi);
}

inline double fold_elevation(double elevation) {
  elevation = std::abs(std::remainder(elevation, 2.0 * kPi));
  if (elevation > 0.5 * kPi) elevation = kPi - elevation;
  return elevation;
}

/// Draws group labels, cluster centers and sub-paths for every user.
///
/// Users are shuffled and dealt round-robin into groups so every group is
/// non-empty. Users in one group reuse the group's shared centers; each user
/// adds its own individual centers. Sub-paths are uniform within +-spread/2
/// of their cluster center, with CN(0, 1/(Nc Ns)) gains.
inline ChannelRealization draw_scenario(const GroupScenario& spec, const ArrayGeometry& geometry) {
  spec.validate();
  std::mt19937_64 rng = make_rng(spec.seed);
  const int n_users = spec.n_users;
  const int n_groups = spec.n_groups_true;
  const double span = geometry.azimuth_span();
  const AngleGrid grid =
      AngleGrid::uniform(geometry, spec.grid_size > 0 ? spec.grid_size : geometry.size());

  ChannelRealization out;
  out.group_label.assign(static_cast<std::size_t>(n_users), 0);
  {
    std::vector<int> order(static_cast<std::size_t>(n_users));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < n_users; ++i) {
      out.group_label[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i % n_groups;
    }
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double max_el = spec.max_elevation_deg * kPi / 180.0;

  auto draw_index = [&](std::vector<int>& used) {
    if (static_cast<int>(used.size()) >= grid.size()) {
      throw config_error("more clusters than grid points for grid placement");
    }
    std::uniform_int_distribution<int> pick(0, grid.size() - 1);
    int idx = pick(rng);
    while (std::find(used.begin(), used.end(), idx) != used.end()) idx = pick(rng);
    used.push_back(idx);
    return idx;
  };

  auto draw_center = [&](std::vector<int>& used) {
    ClusterCenter c;
    switch (spec.placement) {
      case CenterPlacement::uniform:
        c.azimuth = -0.5 * span + span * unit(rng);
        break;
      case CenterPlacement::on_grid:
        c.grid_index = draw_index(used);
        c.azimuth = grid.points[c.grid_index];
        break;
      case CenterPlacement::grid_offset:
        c.grid_index = draw_index(used);
        c.azimuth = grid.points[c.grid_index] + (unit(rng) - 0.5) * grid.interval;
        break;
    }
    c.elevation = geometry.is_ula() ? 0.0 : max_el * unit(rng);
    return c;
  };

  std::vector<int> used_shared;
  out.shared_centers.resize(static_cast<std::size_t>(n_groups));
  for (auto& centers : out.shared_centers) {
    for (int c = 0; c < spec.shared_clusters; ++c) centers.push_back(draw_center(used_shared));
  }

  out.individual_centers.resize(static_cast<std::size_t>(n_users));
  for (int k = 0; k < n_users; ++k) {
    std::vector<int> used;
    for (const auto& c : out.shared_centers[static_cast<std::size_t>(out.group_label[static_cast<std::size_t>(k)])]) {
      used.push_back(c.grid_index);
    }
    for (int c = 0; c < spec.individual_clusters; ++c) {
      out.individual_centers[static_cast<std::size_t>(k)].push_back(draw_center(used));
    }
  }

  const double spread = spec.angular_spread_deg * kPi / 180.0;
  const double gain_var = 1.0 / (spec.clusters() * spec.subpaths_per_cluster);
  out.paths.resize(static_cast<std::size_t>(n_users));
  for (int k = 0; k < n_users; ++k) {
    auto& p = out.paths[static_cast<std::size_t>(k)];
    std::vector<ClusterCenter> centers =
        out.shared_centers[static_cast<std::size_t>(out.group_label[static_cast<std::size_t>(k)])];
    const auto& own = out.individual_centers[static_cast<std::size_t>(k)];
    centers.insert(centers.end(), own.begin(), own.end());
    for (const auto& c : centers) {
      for (int s = 0; s < spec.subpaths_per_cluster; ++s) {
        const double az_off = spread > 0.0 ? (unit(rng) - 0.5) * spread : 0.0;
        const double el_off = spread > 0.0 && !geometry.is_ula() ? (unit(rng) - 0.5) * spread : 0.0;
        p.azimuth.push_back(fold_azimuth(geometry, c.azimuth + az_off));
        p.elevation.push_back(geometry.is_ula() ? 0.0 : fold_elevation(c.elevation + el_off));
        p.gain.push_back(complex_normal(rng, gain_var));
      }
    }
  }
  return out;
}

inline CVec synthesize_channel(const PathSet& paths, const ArrayGeometry& geometry) {
  CVec h = CVec::Zero(geometry.size());
  for (std::size_t i = 0; i < paths.size(); ++i) {
    h += paths.gain[i] * steering(geometry, paths.azimuth[i], paths.elevation[i]);
  }
  return h;
}

inline std::vector<CVec> synthesize_channels(const ChannelRealization& realization,
                                             const ArrayGeometry& geometry) {
  std::vector<CVec> out;
  out.reserve(realization.paths.size());
  for (const auto& p : realization.paths) out.push_back(synthesize_channel(p, geometry));
  return out;
}

// i.i.d. CN(0,1) entries rescaled so that trace(X X^H) = P T N.
inline CMat generate_pilots(int n_pilots, int n_antennas, double power, std::uint64_t seed) {
  if (n_pilots < 1 || n_antennas < 1) throw config_error("pilot dimensions must be >= 1");
  if (!(power > 0.0)) throw config_error("pilot power must be positive");
  std::mt19937_64 rng = make_rng(seed);
  CMat x(n_pilots, n_antennas);
  for (int c = 0; c < n_antennas; ++c) {
    for (int r = 0; r < n_pilots; ++r) x(r, c) = complex_normal(rng);
  }
  const double target = power * n_pilots * n_antennas;
  x *= std::sqrt(target / x.squaredNorm());
  return x;
}

inline double noise_variance_for(double snr_db, double power) {
  if (std::isinf(snr_db) && snr_db > 0.0) return 0.0;
  return power / std::pow(10.0, snr_db / 10.0);
}

struct Observation {
  CVec y;
  double noise_variance = 0.0;
};

// y = X h + n with n ~ CN(0, sigma^2 I), sigma^2 = P / 10^(snr/10).
// snr_db = +infinity gives the noiseless observation.
inline Observation observe(const CMat& pilots, const CVec& h, double snr_db, double power,
                           std::mt19937_64& rng) {
  if (pilots.cols() != h.size()) throw shape_error("pilot columns must match channel length");
  Observation out;
  out.noise_variance = noise_variance_for(snr_db, power);
  out.y = pilots * h;
  if (out.noise_variance > 0.0) {
    for (Eigen::Index t = 0; t < out.y.size(); ++t) out.y[t] += complex_normal(rng, out.noise_variance);
  }
  return out;
}

inline ObservationSet make_observations(const CMat& pilots, const std::vector<CVec>& channels,
                                        double snr_db, double power, std::uint64_t noise_seed) {
  std::mt19937_64 rng = make_rng(noise_seed);
  ObservationSet set;
  set.pilots = pilots;
  set.snr_db = snr_db;
  set.power = power;
  set.noise_variance = noise_variance_for(snr_db, power);
  set.received.reserve(channels.size());
  for (const auto& h : channels) set.received.push_back(observe(pilots, h, snr_db, power, rng).y);
  return set;
}

// One row per sub-path: user,group,cluster,subpath,azimuth,elevation,gain_re,gain_im
inline void write_realization_csv(std::ostream& os, const ChannelRealization& realization,
                                  int subpaths_per_cluster) {
  os << "user,group,cluster,subpath,azimuth,elevation,gain_re,gain_im\n";
  os.precision(17);
  for (int k = 0; k < realization.n_users(); ++k) {
    const auto& p = realization.paths[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < p.size(); ++i) {
      os << k << ',' << realization.group_label[static_cast<std::size_t>(k)] << ','
         << static_cast<int>(i) / subpaths_per_cluster << ','
         << static_cast<int>(i) % subpaths_per_cluster << ',' << p.azimuth[i] << ','
         << p.elevation[i] << ',' << p.gain[i].real() << ',' << p.gain[i].imag() << '\n';
    }
  }
}

}  // namespace gsbl
