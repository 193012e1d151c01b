#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gsbl/array_steering.hpp"
#include "gsbl/baselines.hpp"
#include "gsbl/channel_sim.hpp"
#include "gsbl/config.hpp"
#include "gsbl/metrics.hpp"
#include "gsbl/vbi.hpp"

namespace gsbl {

enum class Method { proposed, group_only, common, individual_sbl, joint_omp, genie };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::proposed: return "proposed";
    case Method::group_only: return "group_only";
    case Method::common: return "common";
    case Method::individual_sbl: return "individual_sbl";
    case Method::joint_omp: return "joint_omp";
    case Method::genie: return "genie";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::proposed, Method::group_only, Method::common, Method::individual_sbl,
                   Method::joint_omp, Method::genie}) {
    if (s == method_name(m)) return m;
  }
  throw config_error("unknown method: " + s);
}

enum class SweepVariable { none, pilots, snr_db, groups, angular_spread };

inline const char* sweep_name(SweepVariable v) {
  switch (v) {
    case SweepVariable::none: return "none";
    case SweepVariable::pilots: return "T";
    case SweepVariable::snr_db: return "snr_db";
    case SweepVariable::groups: return "G";
    case SweepVariable::angular_spread: return "angular_spread";
  }
  return "?";
}

inline SweepVariable parse_sweep(const std::string& s) {
  for (SweepVariable v : {SweepVariable::none, SweepVariable::pilots, SweepVariable::snr_db, SweepVariable::groups,
                          SweepVariable::angular_spread}) {
    if (s == sweep_name(v)) return v;
  }
  throw config_error("unknown sweep variable: " + s + " (expected none, T, snr_db, G, angular_spread)");
}

struct GeometrySpec {
  std::string kind = "ula";  // ula | lattice | file
  int antennas = 32;
  double spacing = 0.5;
  int rows = 0;
  int cols = 0;
  std::string file;

  ArrayGeometry build() const {
    if (kind == "ula") return ArrayGeometry::ula(antennas, spacing);
    if (kind == "lattice") return ArrayGeometry::planar_lattice(rows, cols, spacing);
    if (kind == "file") return load_geometry(file);
    throw config_error("unknown array kind: " + kind + " (expected ula, lattice, file)");
  }
};

struct ExperimentConfig {
  GeometrySpec geometry;
  GroupScenario scenario;  // seed is overwritten per trial
  int pilots = 24;
  double snr_db = 10.0;
  double power = 1.0;
  Hyperparams hyper;  // mode, seed and offgrid_enabled are set per method/trial
  bool offgrid = true;  // for proposed, group_only and common
  GridKind individual_sbl_grid = GridKind::angle;
  int omp_common_budget = -1;  // -1: derived from the scenario
  int omp_individual_budget = -1;
  std::vector<Method> methods{Method::proposed, Method::group_only, Method::individual_sbl};
  SweepVariable sweep = SweepVariable::none;
  std::vector<double> values{0.0};
  int trials = 200;
  std::uint64_t base_seed = 1;
  int threads = 1;
  std::string output = "out";

  void validate() const {
    if (methods.empty()) throw config_error("method list is empty");
    if (values.empty()) throw config_error("sweep value list is empty");
    if (trials < 1) throw config_error("trials must be >= 1");
    if (threads < 1) throw config_error("threads must be >= 1");
    if (pilots < 1) throw config_error("pilots must be >= 1");
    if (!(power > 0.0)) throw config_error("power must be positive");
    scenario.validate();
    hyper.validate();
  }
};

inline GridKind parse_grid_kind(const std::string& s) {
  if (s == "angle") return GridKind::angle;
  if (s == "sine") return GridKind::sine;
  throw config_error("unknown grid kind: " + s + " (expected angle, sine)");
}

inline CenterPlacement parse_placement(const std::string& s) {
  if (s == "uniform") return CenterPlacement::uniform;
  if (s == "on_grid") return CenterPlacement::on_grid;
  if (s == "grid_offset") return CenterPlacement::grid_offset;
  throw config_error("unknown placement: " + s + " (expected uniform, on_grid, grid_offset)");
}

inline const char* placement_name(CenterPlacement p) {
  switch (p) {
    case CenterPlacement::uniform: return "uniform";
    case CenterPlacement::on_grid: return "on_grid";
    case CenterPlacement::grid_offset: return "grid_offset";
  }
  return "?";
}

/// Builds an experiment from a key-value file; see README for the keys.
/// Unknown keys are rejected.
inline ExperimentConfig experiment_from_config(const KeyValueConfig& kv) {
  ExperimentConfig c;
  c.geometry.kind = kv.get_string("array", c.geometry.kind);
  c.geometry.antennas = static_cast<int>(kv.get_int("antennas", c.geometry.antennas));
  c.geometry.spacing = kv.get_double("spacing", c.geometry.spacing);
  c.geometry.rows = static_cast<int>(kv.get_int("lattice_rows", c.geometry.rows));
  c.geometry.cols = static_cast<int>(kv.get_int("lattice_cols", c.geometry.cols));
  c.geometry.file = kv.get_string("geometry_file", c.geometry.file);

  auto& s = c.scenario;
  s.n_users = static_cast<int>(kv.get_int("users", 12));
  s.n_groups_true = static_cast<int>(kv.get_int("true_groups", 2));
  s.shared_clusters = static_cast<int>(kv.get_int("shared_clusters", 3));
  s.individual_clusters = static_cast<int>(kv.get_int("individual_clusters", 0));
  s.subpaths_per_cluster = static_cast<int>(kv.get_int("subpaths", s.subpaths_per_cluster));
  s.angular_spread_deg = kv.get_double("angular_spread_deg", s.angular_spread_deg);
  s.placement = parse_placement(kv.get_string("placement", "uniform"));
  s.max_elevation_deg = kv.get_double("max_elevation_deg", s.max_elevation_deg);

  c.pilots = static_cast<int>(kv.get_int("pilots", c.pilots));
  c.snr_db = kv.get_double("snr_db", c.snr_db);
  c.power = kv.get_double("power", c.power);

  auto& h = c.hyper;
  h.groups = static_cast<int>(kv.get_int("groups", 2));
  h.grid_size = static_cast<int>(kv.get_int("grid_size", h.grid_size));
  h.grid_kind = parse_grid_kind(kv.get_string("grid", "angle"));
  h.a = kv.get_double("a", h.a);
  h.b = kv.get_double("b", h.b);
  h.rho = kv.get_double("rho", h.rho);
  h.max_iters = static_cast<int>(kv.get_int("max_iters", h.max_iters));
  h.tol = kv.get_double("tol", h.tol);
  const std::string shape = kv.get_string("gamma_v_shape", "all_users");
  if (shape == "all_users") {
    h.gamma_v_shape = GammaVShape::all_users;
  } else if (shape == "per_user") {
    h.gamma_v_shape = GammaVShape::per_user;
  } else {
    throw config_error("unknown gamma_v_shape: " + shape + " (expected all_users, per_user)");
  }
  h.support_threshold = kv.get_double("support_threshold", h.support_threshold);
  h.precision_cap = kv.get_double("precision_cap", h.precision_cap);
  h.offgrid.beta_step_fraction = kv.get_double("offgrid_beta_step_fraction", h.offgrid.beta_step_fraction);
  h.offgrid.phi_step_base = kv.get_double("offgrid_phi_step_base", h.offgrid.phi_step_base);
  h.offgrid.decay = kv.get_double("offgrid_decay", h.offgrid.decay);
  h.offgrid.phi_step_floor = kv.get_double("offgrid_phi_step_floor", h.offgrid.phi_step_floor);
  c.offgrid = kv.get_bool("offgrid", c.offgrid);
  c.individual_sbl_grid = parse_grid_kind(kv.get_string("individual_sbl_grid", "angle"));
  c.omp_common_budget = static_cast<int>(kv.get_int("omp_common_budget", c.omp_common_budget));
  c.omp_individual_budget = static_cast<int>(kv.get_int("omp_individual_budget", c.omp_individual_budget));

  c.methods.clear();
  for (const auto& m : kv.get_list("methods", {"proposed", "group_only", "individual_sbl"})) {
    c.methods.push_back(parse_method(m));
  }
  c.sweep = parse_sweep(kv.get_string("sweep", "none"));
  c.values = kv.get_double_list("values", {0.0});
  c.trials = static_cast<int>(kv.get_int("trials", c.trials));
  c.base_seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  c.threads = static_cast<int>(kv.get_int("threads", c.threads));
  c.output = kv.get_string("output", c.output);

  const auto unused = kv.unused_keys();
  if (!unused.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unused) msg += " " + k;
    throw config_error(msg);
  }
  c.validate();
  return c;
}

// Config text for an experiment, readable back by experiment_from_config.
inline std::string experiment_to_config(const ExperimentConfig& c) {
  std::ostringstream o;
  o << std::setprecision(17);
  auto list = [](const auto& items, auto name) {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", " : "") + std::string(name(items[i]));
    return s;
  };
  o << "array = " << c.geometry.kind << "\n";
  if (c.geometry.kind == "ula") o << "antennas = " << c.geometry.antennas << "\n";
  if (c.geometry.kind == "lattice") o << "lattice_rows = " << c.geometry.rows << "\nlattice_cols = " << c.geometry.cols << "\n";
  if (c.geometry.kind == "file") o << "geometry_file = " << c.geometry.file << "\n";
  if (c.geometry.kind != "file") o << "spacing = " << c.geometry.spacing << "\n";
  o << "users = " << c.scenario.n_users << "\n"
    << "true_groups = " << c.scenario.n_groups_true << "\n"
    << "shared_clusters = " << c.scenario.shared_clusters << "\n"
    << "individual_clusters = " << c.scenario.individual_clusters << "\n"
    << "subpaths = " << c.scenario.subpaths_per_cluster << "\n"
    << "angular_spread_deg = " << c.scenario.angular_spread_deg << "\n"
    << "placement = " << placement_name(c.scenario.placement) << "\n"
    << "max_elevation_deg = " << c.scenario.max_elevation_deg << "\n"
    << "pilots = " << c.pilots << "\n"
    << "snr_db = " << c.snr_db << "\n"
    << "power = " << c.power << "\n"
    << "groups = " << c.hyper.groups << "\n"
    << "grid_size = " << c.hyper.grid_size << "\n"
    << "grid = " << (c.hyper.grid_kind == GridKind::sine ? "sine" : "angle") << "\n"
    << "a = " << c.hyper.a << "\n"
    << "b = " << c.hyper.b << "\n"
    << "rho = " << c.hyper.rho << "\n"
    << "max_iters = " << c.hyper.max_iters << "\n"
    << "tol = " << c.hyper.tol << "\n"
    << "gamma_v_shape = " << (c.hyper.gamma_v_shape == GammaVShape::per_user ? "per_user" : "all_users") << "\n"
    << "support_threshold = " << c.hyper.support_threshold << "\n"
    << "offgrid = " << (c.offgrid ? "true" : "false") << "\n"
    << "offgrid_beta_step_fraction = " << c.hyper.offgrid.beta_step_fraction << "\n"
    << "offgrid_phi_step_base = " << c.hyper.offgrid.phi_step_base << "\n"
    << "offgrid_decay = " << c.hyper.offgrid.decay << "\n"
    << "offgrid_phi_step_floor = " << c.hyper.offgrid.phi_step_floor << "\n"
    << "individual_sbl_grid = " << (c.individual_sbl_grid == GridKind::sine ? "sine" : "angle") << "\n"
    << "omp_common_budget = " << c.omp_common_budget << "\n"
    << "omp_individual_budget = " << c.omp_individual_budget << "\n"
    << "methods = " << list(c.methods, method_name) << "\n"
    << "sweep = " << sweep_name(c.sweep) << "\n"
    << "values = ";
  for (std::size_t i = 0; i < c.values.size(); ++i) o << (i ? ", " : "") << c.values[i];
  o << "\ntrials = " << c.trials << "\n"
    << "seed = " << c.base_seed << "\n"
    << "threads = " << c.threads << "\n"
    << "output = " << c.output << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline std::vector<std::string> preset_names() { return {"fig2a", "fig2b", "fig3a", "fig3b", "fig6"}; }

/// Large-scale sweeps on an 80-element (100 for fig6) half-wavelength ULA.
inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.geometry = {"ula", 80, 0.5, 0, 0, ""};
  c.scenario.subpaths_per_cluster = 20;
  c.scenario.angular_spread_deg = 10.0;
  c.power = 1.0;
  c.hyper.gamma_v_shape = GammaVShape::per_user;
  c.offgrid = true;
  c.methods = {Method::proposed, Method::group_only, Method::common,
               Method::individual_sbl, Method::joint_omp, Method::genie};
  c.trials = 200;
  c.output = name;
  if (name == "fig2a" || name == "fig2b") {
    c.scenario.n_users = 60;
    c.scenario.n_groups_true = 3;
    c.hyper.groups = 3;
    c.scenario.shared_clusters = name == "fig2a" ? 4 : 2;
    c.scenario.individual_clusters = name == "fig2a" ? 0 : 2;
    c.snr_db = 0.0;
    c.pilots = 60;
    c.sweep = SweepVariable::pilots;
    c.values = {30, 35, 40, 45, 50, 55, 60, 65, 70};
  } else if (name == "fig3a" || name == "fig3b") {
    c.scenario.n_users = 50;
    c.scenario.n_groups_true = 4;
    c.hyper.groups = 4;
    c.scenario.shared_clusters = name == "fig3a" ? 3 : 2;
    c.scenario.individual_clusters = name == "fig3a" ? 0 : 1;
    c.pilots = 60;
    c.snr_db = 0.0;
    c.sweep = SweepVariable::snr_db;
    c.values = {-10, -6, -2, 2, 6, 10};
  } else if (name == "fig6") {
    c.geometry.antennas = 100;
    c.scenario.n_users = 50;
    c.scenario.n_groups_true = 4;
    c.hyper.groups = 4;
    c.scenario.shared_clusters = 2;
    c.scenario.individual_clusters = 1;
    c.pilots = 60;
    c.snr_db = 0.0;
    c.sweep = SweepVariable::groups;
    c.values = {1, 2, 4, 6, 8, 10};
  } else {
    throw config_error("unknown preset: " + name);
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Trials
// ---------------------------------------------------------------------------

struct ExperimentRecord {
  std::string method;
  double sweep_value = 0.0;
  int trial = 0;
  std::uint64_t trial_seed = 0;
  double nmse = std::numeric_limits<double>::quiet_NaN();
  double grouping_accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN: method does not group
  int nonempty_groups = -1;
  int iterations = 0;
  bool converged = false;
  std::string status = "ok";
  std::uint64_t observation_checksum = 0;
  double wall_time_s = 0.0;

  bool ok() const { return status == "ok"; }
};

inline std::uint64_t trial_seed(std::uint64_t base_seed, double value, int trial) {
  return derive_seed(derive_seed(base_seed, std::bit_cast<std::uint64_t>(value)), static_cast<std::uint64_t>(trial));
}

// Config with the sweep variable set to `value`.
inline ExperimentConfig apply_sweep(ExperimentConfig c, double value) {
  switch (c.sweep) {
    case SweepVariable::none: break;
    case SweepVariable::pilots: c.pilots = static_cast<int>(std::lround(value)); break;
    case SweepVariable::snr_db: c.snr_db = value; break;
    case SweepVariable::groups: c.hyper.groups = static_cast<int>(std::lround(value)); break;
    case SweepVariable::angular_spread: c.scenario.angular_spread_deg = value; break;
  }
  return c;
}

/// Everything a method sees in one trial, generated once.
struct TrialData {
  ArrayGeometry geometry;
  ChannelRealization realization;
  std::vector<CVec> channels;
  ObservationSet observations;
  std::uint64_t inference_seed = 0;
};

inline TrialData make_trial_data(const ExperimentConfig& c, std::uint64_t seed) {
  GroupScenario scenario = c.scenario;
  scenario.seed = derive_seed(seed, 1);
  const ArrayGeometry geometry = c.geometry.build();
  scenario.grid_size = c.hyper.grid_size > 0 ? c.hyper.grid_size : geometry.size();
  ChannelRealization realization = draw_scenario(scenario, geometry);
  std::vector<CVec> channels = synthesize_channels(realization, geometry);
  const CMat pilots = generate_pilots(c.pilots, geometry.size(), c.power, derive_seed(seed, 2));
  ObservationSet obs = make_observations(pilots, channels, c.snr_db, c.power, derive_seed(seed, 3));
  return {geometry, std::move(realization), std::move(channels), std::move(obs), derive_seed(seed, 4)};
}

struct MethodOutput {
  std::vector<CVec> channels;
  std::vector<int> labels;  // empty when the method does not group users
  int iterations = 0;
  bool converged = true;
};

inline MethodOutput run_method(Method m, const ExperimentConfig& c, const TrialData& d) {
  MethodOutput out;
  const auto& obs = d.observations;
  if (m == Method::proposed || m == Method::group_only || m == Method::common) {
    Hyperparams h = c.hyper;
    h.mode = m == Method::proposed ? InferenceMode::general
             : m == Method::group_only ? InferenceMode::group_only
                                       : InferenceMode::common;
    h.offgrid_enabled = c.offgrid;
    h.seed = d.inference_seed;
    InferenceResult r = run_inference(h, obs, d.geometry);
    out.channels = std::move(r.summary.channels);
    out.labels = std::move(r.summary.labels);
    out.iterations = r.summary.iterations;
    out.converged = r.summary.converged;
    return out;
  }

  const int grid_size = c.hyper.grid_size > 0 ? c.hyper.grid_size : d.geometry.size();
  if (m == Method::individual_sbl) {
    Hyperparams h = c.hyper;
    h.mode = InferenceMode::group_only;
    h.offgrid_enabled = false;
    h.grid_kind = c.individual_sbl_grid;
    const AngleGrid grid = AngleGrid::make(d.geometry, grid_size, c.individual_sbl_grid);
    const CMat dict = build_dictionary(d.geometry, grid);
    const CMat phi = obs.pilots * dict;
    for (const auto& y : obs.received) {
      SblResult r = individual_sbl(y, phi, dict, h);
      out.channels.push_back(std::move(r.channel));
      out.iterations = std::max(out.iterations, r.iterations);
      out.converged = out.converged && r.converged;
    }
    return out;
  }
  if (m == Method::joint_omp) {
    const AngleGrid grid = AngleGrid::uniform(d.geometry, grid_size);
    const CMat dict = build_dictionary(d.geometry, grid);
    const CMat phi = obs.pilots * dict;
    const int width = cluster_width_atoms(c.scenario.angular_spread_deg, grid.interval);
    const int s_c = c.omp_common_budget >= 0 ? c.omp_common_budget : c.scenario.shared_clusters * width;
    const int s_v = c.omp_individual_budget >= 0 ? c.omp_individual_budget : c.scenario.individual_clusters * width;
    for (auto& r : joint_omp(obs.received, phi, dict, s_c, s_v)) out.channels.push_back(std::move(r.channel));
    return out;
  }
  // genie
  for (int k = 0; k < obs.n_users(); ++k) {
    out.channels.push_back(genie_ls(obs.received[static_cast<std::size_t>(k)], obs.pilots,
                                    d.realization.paths[static_cast<std::size_t>(k)], d.geometry));
  }
  return out;
}

/// Runs every method of `c` on one generated trial.
inline std::vector<ExperimentRecord> run_trial(const ExperimentConfig& base, double value, int trial) {
  const ExperimentConfig c = apply_sweep(base, value);
  const std::uint64_t seed = trial_seed(base.base_seed, value, trial);
  std::vector<ExperimentRecord> records;
  std::optional<TrialData> data;
  std::string setup_error;
  try {
    c.validate();
    data = make_trial_data(c, seed);
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  for (Method m : c.methods) {
    ExperimentRecord r;
    r.method = method_name(m);
    r.sweep_value = value;
    r.trial = trial;
    r.trial_seed = seed;
    if (!setup_error.empty()) {
      r.status = "failed: " + setup_error;
      records.push_back(r);
      continue;
    }
    r.observation_checksum = data->observations.checksum();
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const MethodOutput out = run_method(m, c, *data);
      r.nmse = nmse(out.channels, data->channels);
      if (!out.labels.empty()) {
        r.grouping_accuracy = grouping_accuracy(out.labels, data->realization.group_label);
        r.nonempty_groups = nonempty_groups(out.labels);
      }
      r.iterations = out.iterations;
      r.converged = out.converged;
    } catch (const std::exception& e) {
      r.status = std::string("failed: ") + e.what();
    }
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    records.push_back(r);
  }
  return records;
}

/// All sweep values x trials, each trial in its own job on a pool of
/// c.threads workers. Records come back ordered by (value, trial, method)
/// regardless of scheduling.
inline std::vector<ExperimentRecord> run_monte_carlo(const ExperimentConfig& c,
                                                     std::ostream* progress = nullptr) {
  c.validate();
  struct Job {
    double value;
    int trial;
  };
  std::vector<Job> jobs;
  for (double v : c.values) {
    for (int t = 0; t < c.trials; ++t) jobs.push_back({v, t});
  }
  std::vector<std::vector<ExperimentRecord>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      results[i] = run_trial(c, jobs[i].value, jobs[i].trial);
      const std::size_t n = ++done;
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        *progress << "\r" << n << "/" << jobs.size() << " trials" << std::flush;
      }
    }
  };
  const int n_workers = std::min<int>(c.threads, static_cast<int>(jobs.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  }
  if (progress) *progress << "\n";
  std::vector<ExperimentRecord> out;
  for (auto& r : results) out.insert(out.end(), r.begin(), r.end());
  return out;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline const char* raw_csv_header() {
  return "method,sweep_value,trial,trial_seed,nmse,grouping_accuracy,nonempty_groups,iterations,converged,"
         "status,observation_checksum";
}

// Raw per-record rows. Wall time lives in the timing file so that this one
// is reproducible byte for byte.
inline void write_raw_csv(std::ostream& os, const std::vector<ExperimentRecord>& records) {
  os << raw_csv_header() << "\n";
  for (const auto& r : records) {
    os << r.method << ',' << format_double(r.sweep_value) << ',' << r.trial << ',' << r.trial_seed << ','
       << format_double(r.nmse) << ',' << format_double(r.grouping_accuracy) << ',' << r.nonempty_groups << ','
       << r.iterations << ',' << (r.converged ? 1 : 0) << ',' << csv_quote(r.status) << ','
       << r.observation_checksum << "\n";
  }
}

inline void write_timing_csv(std::ostream& os, const std::vector<ExperimentRecord>& records) {
  os << "method,sweep_value,trial,wall_time_s\n";
  for (const auto& r : records) {
    os << r.method << ',' << format_double(r.sweep_value) << ',' << r.trial << ',' << format_double(r.wall_time_s)
       << "\n";
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_csv_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::stod(s);
}

}  // namespace detail

inline std::vector<ExperimentRecord> read_raw_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != raw_csv_header()) throw config_error("raw CSV: unexpected header");
  std::vector<ExperimentRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 11) throw config_error("raw CSV: expected 11 fields, got " + std::to_string(f.size()));
    ExperimentRecord r;
    r.method = f[0];
    r.sweep_value = detail::parse_csv_double(f[1]);
    r.trial = std::stoi(f[2]);
    r.trial_seed = std::stoull(f[3]);
    r.nmse = detail::parse_csv_double(f[4]);
    r.grouping_accuracy = detail::parse_csv_double(f[5]);
    r.nonempty_groups = std::stoi(f[6]);
    r.iterations = std::stoi(f[7]);
    r.converged = f[8] == "1";
    r.status = f[9];
    r.observation_checksum = std::stoull(f[10]);
    out.push_back(r);
  }
  return out;
}

struct AggregateRow {
  std::string method;
  double sweep_value = 0.0;
  int n = 0;
  int failed = 0;
  double nmse_mean = std::numeric_limits<double>::quiet_NaN();
  double nmse_stderr = std::numeric_limits<double>::quiet_NaN();
  double accuracy_mean = std::numeric_limits<double>::quiet_NaN();
  double accuracy_stderr = std::numeric_limits<double>::quiet_NaN();
  double iterations_mean = std::numeric_limits<double>::quiet_NaN();
};

// Mean and standard error (sample standard deviation / sqrt(n)); the error
// is NaN below two samples.
inline std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (xs.empty()) return {nan, nan};
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, nan};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return {mean, sd / std::sqrt(static_cast<double>(xs.size()))};
}

/// One row per (method, sweep value), in first-appearance order. Failed
/// records are counted but excluded from the statistics.
inline std::vector<AggregateRow> aggregate(const std::vector<ExperimentRecord>& records) {
  std::vector<std::pair<std::string, double>> keys;
  std::map<std::pair<std::string, double>, std::vector<const ExperimentRecord*>> groups;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.method, r.sweep_value);
    if (!groups.count(key)) keys.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const auto& key : keys) {
    AggregateRow row;
    row.method = key.first;
    row.sweep_value = key.second;
    std::vector<double> nmses, accs, iters;
    for (const auto* r : groups[key]) {
      if (!r->ok()) {
        ++row.failed;
        continue;
      }
      nmses.push_back(r->nmse);
      if (!std::isnan(r->grouping_accuracy)) accs.push_back(r->grouping_accuracy);
      iters.push_back(r->iterations);
    }
    row.n = static_cast<int>(nmses.size());
    std::tie(row.nmse_mean, row.nmse_stderr) = mean_stderr(nmses);
    std::tie(row.accuracy_mean, row.accuracy_stderr) = mean_stderr(accs);
    row.iterations_mean = mean_stderr(iters).first;
    out.push_back(row);
  }
  return out;
}

inline void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << "method,sweep_value,n,failed,nmse_mean,nmse_stderr,accuracy_mean,accuracy_stderr,iterations_mean\n";
  for (const auto& r : rows) {
    os << r.method << ',' << format_double(r.sweep_value) << ',' << r.n << ',' << r.failed << ','
       << format_double(r.nmse_mean) << ',' << format_double(r.nmse_stderr) << ',' << format_double(r.accuracy_mean)
       << ',' << format_double(r.accuracy_stderr) << ',' << format_double(r.iterations_mean) << "\n";
  }
}

// Plain-text table: one line per sweep value, mean NMSE per method.
inline void write_summary(std::ostream& os, const ExperimentConfig& c, const std::vector<AggregateRow>& rows) {
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(method_name(m));
  os << "mean NMSE over " << c.trials << " trials (sweep: " << sweep_name(c.sweep) << ")\n";
  os << std::left << std::setw(12) << sweep_name(c.sweep);
  for (const auto& m : methods) os << std::right << std::setw(16) << m;
  os << "\n";
  int failed = 0;
  for (double v : c.values) {
    os << std::left << std::setw(12) << format_double(v);
    for (const auto& m : methods) {
      double mean = std::numeric_limits<double>::quiet_NaN();
      for (const auto& r : rows) {
        if (r.method == m && r.sweep_value == v) {
          mean = r.nmse_mean;
          failed += r.failed;
        }
      }
      std::ostringstream cell;
      cell << std::setprecision(4) << mean;
      os << std::right << std::setw(16) << cell.str();
    }
    os << "\n";
  }
  bool any_grouping = false;
  for (const auto& r : rows) any_grouping = any_grouping || !std::isnan(r.accuracy_mean);
  if (any_grouping) {
    os << "\nmean grouping accuracy\n";
    for (const auto& r : rows) {
      if (std::isnan(r.accuracy_mean)) continue;
      os << "  " << std::left << std::setw(14) << r.method << std::setw(12) << format_double(r.sweep_value)
         << std::setprecision(4) << r.accuracy_mean << "\n";
    }
  }
  os << "\nfailed method runs: " << failed << "\n";
}

struct OutputPaths {
  std::filesystem::path raw, aggregate, timing, summary;
};

/// Writes raw.csv, aggregate.csv, timing.csv and summary.txt into `dir`.
inline OutputPaths emit_csv(const std::vector<ExperimentRecord>& records, const ExperimentConfig& c,
                            const std::filesystem::path& dir) {
  if (records.empty()) throw config_error("no records to write");
  std::filesystem::create_directories(dir);
  OutputPaths p{dir / "raw.csv", dir / "aggregate.csv", dir / "timing.csv", dir / "summary.txt"};
  auto open = [](const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    return f;
  };
  const auto rows = aggregate(records);
  {
    auto f = open(p.raw);
    write_raw_csv(f, records);
  }
  {
    auto f = open(p.aggregate);
    write_aggregate_csv(f, rows);
  }
  {
    auto f = open(p.timing);
    write_timing_csv(f, records);
  }
  {
    auto f = open(p.summary);
    write_summary(f, c, rows);
  }
  for (const auto& path : {p.raw, p.aggregate, p.timing, p.summary}) {
    std::ifstream check(path);
    if (!check) throw std::runtime_error("failed to write " + path.string());
  }
  return p;
}

}  // namespace gsbl
