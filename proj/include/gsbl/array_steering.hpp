#pragma once

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gsbl/common.hpp"

namespace gsbl {

enum class ArrayKind { ula, planar };

// Sensor position in polar form relative to the first sensor, in wavelengths.
struct Sensor {
  double radius = 0.0;   // d_n / lambda
  double bearing = 0.0;  // psi_n, radians
};

/// Antenna layout at the base station.
///
/// A ULA is stored as a planar layout with all bearings equal to zero, which
/// reproduces exp(-j 2 pi d_n sin(theta)) exactly. The kind tag decides the
/// azimuth span and whether elevation is meaningful.
class ArrayGeometry {
 public:
  static ArrayGeometry ula(int n_antennas, double spacing_over_wavelength) {
    if (n_antennas < 2) throw config_error("ULA needs at least 2 antennas");
    if (!(spacing_over_wavelength > 0.0)) throw config_error("ULA spacing must be positive");
    ArrayGeometry g;
    g.kind_ = ArrayKind::ula;
    g.spacing_ = spacing_over_wavelength;
    g.sensors_.resize(static_cast<std::size_t>(n_antennas));
    for (int n = 0; n < n_antennas; ++n) {
      g.sensors_[static_cast<std::size_t>(n)] = {n * spacing_over_wavelength, 0.0};
    }
    g.cache_positions();
    return g;
  }

  static ArrayGeometry planar(std::vector<Sensor> sensors) {
    if (sensors.size() < 2) throw config_error("planar array needs at least 2 sensors");
    if (sensors.front().radius != 0.0) {
      throw config_error("first planar sensor must sit at the origin (radius 0)");
    }
    for (const auto& s : sensors) {
      if (!(s.radius >= 0.0) || !std::isfinite(s.bearing)) {
        throw config_error("planar sensor radius must be non-negative and bearing finite");
      }
    }
    ArrayGeometry g;
    g.kind_ = ArrayKind::planar;
    g.sensors_ = std::move(sensors);
    g.cache_positions();
    return g;
  }

  // Rectangular rows x cols lattice in the horizontal plane, converted to
  // polar coordinates around element (0, 0).
  static ArrayGeometry planar_lattice(int rows, int cols, double spacing_over_wavelength) {
    if (rows < 1 || cols < 1 || rows * cols < 2) throw config_error("lattice needs >= 2 elements");
    if (!(spacing_over_wavelength > 0.0)) throw config_error("lattice spacing must be positive");
    std::vector<Sensor> sensors;
    sensors.reserve(static_cast<std::size_t>(rows * cols));
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const double x = c * spacing_over_wavelength;
        const double y = r * spacing_over_wavelength;
        const double radius = std::hypot(x, y);
        sensors.push_back({radius, radius == 0.0 ? 0.0 : std::atan2(y, x)});
      }
    }
    return planar(std::move(sensors));
  }

  ArrayKind kind() const { return kind_; }
  bool is_ula() const { return kind_ == ArrayKind::ula; }
  int size() const { return static_cast<int>(sensors_.size()); }
  const std::vector<Sensor>& sensors() const { return sensors_; }
  double spacing() const { return spacing_; }
  // Cartesian sensor positions in wavelengths: radius * (cos, sin)(bearing).
  const RVec& x() const { return x_; }
  const RVec& y() const { return y_; }

  // [-pi/2, pi/2) for a ULA, [-pi, pi) for a planar array.
  double azimuth_span() const { return is_ula() ? kPi : 2.0 * kPi; }

 private:
  ArrayGeometry() = default;

  void cache_positions() {
    x_.resize(size());
    y_.resize(size());
    for (int n = 0; n < size(); ++n) {
      const auto& s = sensors_[static_cast<std::size_t>(n)];
      x_[n] = s.bearing == 0.0 ? s.radius : s.radius * std::cos(s.bearing);
      y_[n] = s.bearing == 0.0 ? 0.0 : s.radius * std::sin(s.bearing);
    }
  }

  ArrayKind kind_ = ArrayKind::ula;
  double spacing_ = 0.0;
  std::vector<Sensor> sensors_;
  RVec x_;
  RVec y_;
};

enum class GridKind {
  angle,  // uniform in azimuth
  sine,   // uniform in sin(azimuth), ULA only; with size N this is the DFT basis
};

/// Azimuth sampling grid. The angle kind has points[l] = -span/2 + l * interval
/// with interval = span/size; the right end of the span is excluded since it
/// aliases the left end. The sine kind has sin(points[l]) = -1 + 2l/size and
/// reports the mean spacing as its interval.
struct AngleGrid {
  RVec points;
  double interval = 0.0;
  GridKind kind = GridKind::angle;

  static AngleGrid uniform(const ArrayGeometry& geometry, int size) {
    if (size < 1) throw config_error("grid size must be >= 1");
    AngleGrid grid;
    const double span = geometry.azimuth_span();
    grid.interval = span / size;
    grid.points.resize(size);
    for (int l = 0; l < size; ++l) grid.points[l] = -0.5 * span + l * grid.interval;
    return grid;
  }

  static AngleGrid sine_uniform(const ArrayGeometry& geometry, int size) {
    if (size < 1) throw config_error("grid size must be >= 1");
    if (!geometry.is_ula()) throw config_error("a sine-spaced grid needs a ULA");
    AngleGrid grid;
    grid.kind = GridKind::sine;
    grid.interval = kPi / size;
    grid.points.resize(size);
    for (int l = 0; l < size; ++l) grid.points[l] = std::asin(-1.0 + 2.0 * l / size);
    return grid;
  }

  static AngleGrid make(const ArrayGeometry& geometry, int size, GridKind kind) {
    return kind == GridKind::sine ? sine_uniform(geometry, size) : uniform(geometry, size);
  }

  int size() const { return static_cast<int>(points.size()); }

  // Index of the closest grid point; distances wrap around the full circle.
  int nearest(double azimuth) const {
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int l = 0; l < size(); ++l) {
      const double d = std::abs(std::remainder(azimuth - points[l], 2.0 * kPi));
      if (d < best_dist) {
        best_dist = d;
        best = l;
      }
    }
    return best;
  }
};

// Per-user off-grid parameters: azimuth gaps and elevations, one per grid point.
struct GridOffsets {
  RVec beta;
  RVec elevation;

  static GridOffsets zeros(int size) { return {RVec::Zero(size), RVec::Zero(size)}; }
};

enum class AngleParam { azimuth_gap, elevation };

inline double steering_phase_scale(const ArrayGeometry& geometry, double elevation) {
  return geometry.is_ula() ? 1.0 : std::cos(elevation);
}

// d_n sin(azimuth - psi_n) written in Cartesian form: sin(az) x_n - cos(az) y_n.
inline CVec steering(const ArrayGeometry& geometry, double azimuth, double elevation) {
  const double scale = -2.0 * kPi * steering_phase_scale(geometry, elevation);
  const double sa = std::sin(azimuth);
  const double ca = std::cos(azimuth);
  const RVec& x = geometry.x();
  const RVec& y = geometry.y();
  CVec a(geometry.size());
  for (int n = 0; n < geometry.size(); ++n) a[n] = std::polar(1.0, scale * (sa * x[n] - ca * y[n]));
  return a;
}

// Derivative of the phase of element n w.r.t. azimuth (equivalently the
// azimuth gap) or elevation.
inline double steering_phase_grad(const ArrayGeometry& geometry, double sa, double ca, double elevation,
                                  AngleParam wrt, int n) {
  const double x = geometry.x()[n];
  const double y = geometry.y()[n];
  if (wrt == AngleParam::azimuth_gap) {
    return -2.0 * kPi * steering_phase_scale(geometry, elevation) * (ca * x + sa * y);
  }
  if (geometry.is_ula()) return 0.0;
  return 2.0 * kPi * std::sin(elevation) * (sa * x - ca * y);
}

// Elementwise derivative of steering() w.r.t. azimuth (equivalently the
// azimuth gap) or elevation. Elevation derivatives vanish for a ULA.
inline CVec steering_grad(const ArrayGeometry& geometry, double azimuth, double elevation,
                          AngleParam wrt) {
  CVec out(geometry.size());
  if (wrt == AngleParam::elevation && geometry.is_ula()) {
    out.setZero();
    return out;
  }
  const CVec a = steering(geometry, azimuth, elevation);
  const double sa = std::sin(azimuth);
  const double ca = std::cos(azimuth);
  for (int n = 0; n < geometry.size(); ++n) {
    out[n] = kJ * steering_phase_grad(geometry, sa, ca, elevation, wrt, n) * a[n];
  }
  return out;
}

// Column l = steering(points_l + beta_l, elevation_l).
inline CMat build_dictionary(const ArrayGeometry& geometry, const AngleGrid& grid,
                             const GridOffsets& offsets) {
  if (offsets.beta.size() != grid.size() || offsets.elevation.size() != grid.size()) {
    throw shape_error("offset vectors must match the grid size");
  }
  CMat a(geometry.size(), grid.size());
  for (int l = 0; l < grid.size(); ++l) {
    a.col(l) = steering(geometry, grid.points[l] + offsets.beta[l], offsets.elevation[l]);
  }
  return a;
}

inline CMat build_dictionary(const ArrayGeometry& geometry, const AngleGrid& grid) {
  return build_dictionary(geometry, grid, GridOffsets::zeros(grid.size()));
}

inline CMat build_dictionary_grad(const ArrayGeometry& geometry, const AngleGrid& grid,
                                  const GridOffsets& offsets, AngleParam wrt) {
  CMat d(geometry.size(), grid.size());
  for (int l = 0; l < grid.size(); ++l) {
    d.col(l) = steering_grad(geometry, grid.points[l] + offsets.beta[l], offsets.elevation[l], wrt);
  }
  return d;
}

struct EffectiveSensing {
  CMat phi;      // X A, T x L
  CMat stacked;  // [phi, phi], T x 2L
};

inline EffectiveSensing effective_sensing(const CMat& pilots, const CMat& dictionary) {
  if (pilots.cols() != dictionary.rows()) {
    throw shape_error("pilot columns (" + std::to_string(pilots.cols()) +
                      ") != dictionary rows (" + std::to_string(dictionary.rows()) + ")");
  }
  EffectiveSensing out;
  out.phi = pilots * dictionary;
  out.stacked.resize(out.phi.rows(), 2 * out.phi.cols());
  out.stacked << out.phi, out.phi;
  return out;
}

/// Reads a geometry description.
///
/// Blank lines and '#' comments are ignored; fields may be separated by
/// whitespace or commas. Either a single shorthand record
///     ula <n_antennas> <spacing_over_wavelength>
/// or one record per sensor
///     <radius_over_wavelength> <bearing_radians>
/// with the first sensor at radius 0.
inline ArrayGeometry parse_geometry(std::istream& in) {
  std::vector<Sensor> sensors;
  std::string line;
  int line_no = 0;
  bool have_ula = false;
  ArrayGeometry ula_geometry = ArrayGeometry::ula(2, 0.5);
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::istringstream fields(line);
    std::string first;
    if (!(fields >> first)) continue;
    if (first == "ula") {
      int n = 0;
      double spacing = 0.0;
      if (!(fields >> n >> spacing)) {
        throw config_error("geometry line " + std::to_string(line_no) + ": expected 'ula <n> <d>'");
      }
      if (have_ula || !sensors.empty()) throw config_error("geometry: ula record must stand alone");
      ula_geometry = ArrayGeometry::ula(n, spacing);
      have_ula = true;
      continue;
    }
    if (have_ula) throw config_error("geometry: ula record must stand alone");
    Sensor s;
    std::istringstream rest(line);
    if (!(rest >> s.radius >> s.bearing)) {
      throw config_error("geometry line " + std::to_string(line_no) +
                         ": expected '<radius> <bearing>'");
    }
    sensors.push_back(s);
  }
  if (have_ula) return ula_geometry;
  return ArrayGeometry::planar(std::move(sensors));
}

inline ArrayGeometry load_geometry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open geometry file: " + path);
  return parse_geometry(in);
}

}  // namespace gsbl
