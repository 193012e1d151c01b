#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gsbl/array_steering.hpp"
#include "gsbl/channel_sim.hpp"
#include "gsbl/common.hpp"
#include "gsbl/linalg.hpp"
#include "gsbl/special.hpp"

namespace gsbl {

enum class InferenceMode {
  general,     // common + individual components
  group_only,  // individual component frozen at the precision cap
  common,      // group_only with a single group
};

// Shape of the individual-precision posterior: a + K as printed in the
// derivation, or a + 1 which is the exact coordinate-ascent optimum.
enum class GammaVShape { all_users, per_user };

struct OffgridStepConfig {
  double beta_step_fraction = 0.01;  // of the grid interval
  double phi_step_base = kPi / 36.0;
  double decay = 0.98;
  double phi_step_floor = 0.001;

  void validate() const {
    if (!(decay > 0.9474 && decay < 1.0)) throw config_error("off-grid decay must lie in (0.9474, 1)");
    if (!(beta_step_fraction > 0.0) || !(phi_step_base > 0.0) || !(phi_step_floor > 0.0)) {
      throw config_error("off-grid step parameters must be positive");
    }
  }
};

struct Hyperparams {
  double a = 1e-4;
  double b = 1e-4;
  double rho = 1e-3;
  int groups = 1;
  int grid_size = 0;  // 0: one grid point per antenna
  GridKind grid_kind = GridKind::angle;
  int max_iters = 500;
  double tol = 1e-4;
  InferenceMode mode = InferenceMode::general;
  bool offgrid_enabled = false;
  GammaVShape gamma_v_shape = GammaVShape::all_users;
  double support_threshold = 0.01;
  double precision_cap = 1e12;
  OffgridStepConfig offgrid;
  std::uint64_t seed = 0;  // drives the random parts of the initialization

  int effective_groups() const { return mode == InferenceMode::common ? 1 : groups; }
  bool individual_frozen() const { return mode != InferenceMode::general; }

  void validate() const {
    if (!(a > 0.0) || !(b > 0.0)) throw config_error("gamma hyperparameters a, b must be positive");
    if (!(rho > 0.0 && rho < 1.0)) throw config_error("rho must lie in (0, 1)");
    if (groups < 1) throw config_error("group budget G must be >= 1");
    if (grid_size < 0) throw config_error("grid size must be >= 0");
    if (max_iters < 0) throw config_error("max_iters must be >= 0");
    if (!(tol > 0.0)) throw config_error("tol must be positive");
    if (!(support_threshold >= 0.0 && support_threshold <= 1.0)) {
      throw config_error("support threshold must lie in [0, 1]");
    }
    if (!(precision_cap > 0.0)) throw config_error("precision cap must be positive");
    offgrid.validate();
    if (offgrid_enabled && grid_kind == GridKind::sine) {
      throw config_error("off-grid refinement needs an angle-uniform grid");
    }
  }
};

/// q(w_bar_k) = CN(stacked mean, stacked covariance) summarised by what the
/// updates consume: block means, block variances, and the moments of the
/// combined coefficient w_k = w_s + w_v.
///
/// Posteriors produced by the solver keep only the combined covariance and
/// the prior precisions; the stacked covariance is rebuilt from them on
/// demand. Posteriors built from an explicit stacked covariance keep it.
struct UserPosterior {
  CVec mean_common;      // first L entries of the stacked mean
  CVec mean_individual;  // last L entries
  RVec var_common;       // diag of the top-left block
  RVec var_individual;   // diag of the bottom-right block
  CVec mean;             // mu_k
  CMat cov;              // Sigma_k
  RVec prec_common;      // prior precisions used by the solver
  RVec prec_individual;
  double log_det = 0.0;  // log det of the stacked covariance (common block only when pruned)
  bool individual_pruned = false;  // w_v fixed at zero
  CMat explicit_stacked;

  int grid_size() const { return static_cast<int>(mean.size()); }

  CVec stacked_mean() const {
    CVec m(2 * mean_common.size());
    m << mean_common, mean_individual;
    return m;
  }

  CMat stacked_covariance() const {
    if (explicit_stacked.size() > 0) return explicit_stacked;
    const Eigen::Index n = cov.rows();
    if (individual_pruned) {
      CMat s = CMat::Zero(2 * n, 2 * n);
      s.topLeftCorner(n, n) = cov;
      return s;
    }
    const RVec total = prec_common + prec_individual;
    const RVec lam = prec_individual.cwiseQuotient(total);
    const RVec one_minus = prec_common.cwiseQuotient(total);
    const RVec cond = total.cwiseInverse();
    CMat s(2 * n, 2 * n);
    s.topLeftCorner(n, n) = lam.asDiagonal() * cov * lam.asDiagonal();
    s.bottomRightCorner(n, n) = one_minus.asDiagonal() * cov * one_minus.asDiagonal();
    s.topRightCorner(n, n) = lam.asDiagonal() * cov * one_minus.asDiagonal();
    s.topLeftCorner(n, n).diagonal() += cond.cast<cplx>();
    s.bottomRightCorner(n, n).diagonal() += cond.cast<cplx>();
    s.topRightCorner(n, n).diagonal() -= cond.cast<cplx>();
    s.bottomLeftCorner(n, n) = s.topRightCorner(n, n).adjoint();
    return s;
  }

  static UserPosterior from_stacked(const CVec& stacked_mean, const CMat& stacked_cov) {
    const Eigen::Index n2 = stacked_mean.size();
    if (n2 % 2 != 0 || stacked_cov.rows() != n2 || stacked_cov.cols() != n2) {
      throw shape_error("stacked posterior must be 2L and 2L x 2L");
    }
    const Eigen::Index n = n2 / 2;
    UserPosterior p;
    p.mean_common = stacked_mean.head(n);
    p.mean_individual = stacked_mean.tail(n);
    p.var_common = stacked_cov.topLeftCorner(n, n).diagonal().real();
    p.var_individual = stacked_cov.bottomRightCorner(n, n).diagonal().real();
    p.mean = p.mean_common + p.mean_individual;
    p.cov = stacked_cov.topLeftCorner(n, n) + stacked_cov.bottomRightCorner(n, n) +
            stacked_cov.topRightCorner(n, n) + stacked_cov.bottomLeftCorner(n, n);
    Eigen::LLT<CMat> llt(stacked_cov);
    if (llt.info() != Eigen::Success) throw numerical_error("stacked covariance is not PD");
    for (Eigen::Index i = 0; i < n2; ++i) p.log_det += 2.0 * std::log(llt.matrixLLT()(i, i).real());
    p.explicit_stacked = stacked_cov;
    return p;
  }
};

/// All variational parameters of one inference run, plus the per-user
/// dictionaries that depend on the off-grid parameters.
struct VariationalState {
  double noise_shape = 1.0;
  double noise_rate = 1.0;
  std::vector<UserPosterior> users;
  RMat common_shape;  // G x L
  RMat common_rate;
  RMat individual_shape;  // K x L
  RMat individual_rate;
  RMat assignment;  // K x G, rows are probability vectors
  std::vector<GridOffsets> offsets;
  std::vector<CMat> dictionary;  // A_k, N x L
  std::vector<CMat> sensing;     // Phi_k = X A_k, T x L
  std::vector<CMat> gram;        // Phi_k^H Phi_k
  double precision_cap = 1e12;

  int n_users() const { return static_cast<int>(users.size()); }
  int n_groups() const { return static_cast<int>(assignment.cols()); }
  int grid_size() const { return static_cast<int>(common_shape.cols()); }

  double noise_mean() const { return noise_shape / noise_rate; }

  RMat common_mean() const {
    return common_shape.cwiseQuotient(common_rate).cwiseMin(precision_cap);
  }
  RMat common_log_mean() const {
    RMat out(common_shape.rows(), common_shape.cols());
    for (Eigen::Index g = 0; g < out.rows(); ++g) {
      for (Eigen::Index l = 0; l < out.cols(); ++l) {
        out(g, l) = digamma(common_shape(g, l)) - std::log(common_rate(g, l));
      }
    }
    return out;
  }
  RMat individual_mean() const {
    return individual_shape.cwiseQuotient(individual_rate).cwiseMin(precision_cap);
  }

  // gamma_s_{k,l} = sum_g phi_{k,g} gamma*_{g,l}
  RVec common_precision_for(int k, const RMat& common_means) const {
    return (assignment.row(k) * common_means).transpose();
  }
};

// Recomputes dictionary/sensing columns flagged in `changed` (all when empty)
// and refreshes the Gram matrix.
inline void refresh_user_sensing(VariationalState& state, int k, const CMat& pilots,
                                 const ArrayGeometry& geometry, const AngleGrid& grid,
                                 const std::vector<bool>& changed = {}) {
  auto& a = state.dictionary[static_cast<std::size_t>(k)];
  auto& phi = state.sensing[static_cast<std::size_t>(k)];
  auto& gram = state.gram[static_cast<std::size_t>(k)];
  const auto& off = state.offsets[static_cast<std::size_t>(k)];
  const auto n_changed = changed.empty() ? static_cast<std::size_t>(grid.size())
                                         : static_cast<std::size_t>(std::count(changed.begin(), changed.end(), true));
  if (a.rows() != geometry.size() || a.cols() != grid.size()) {
    a = build_dictionary(geometry, grid, off);
    phi.noalias() = pilots * a;
  } else if (2 * n_changed >= static_cast<std::size_t>(grid.size())) {
    for (int l = 0; l < grid.size(); ++l) {
      if (changed.empty() || changed[static_cast<std::size_t>(l)]) {
        a.col(l) = steering(geometry, grid.points[l] + off.beta[l], off.elevation[l]);
      }
    }
    phi.noalias() = pilots * a;
  } else {
    for (int l = 0; l < grid.size(); ++l) {
      if (!changed[static_cast<std::size_t>(l)]) continue;
      a.col(l) = steering(geometry, grid.points[l] + off.beta[l], off.elevation[l]);
      phi.col(l).noalias() = pilots * a.col(l);
    }
  }
  gram.setZero(phi.cols(), phi.cols());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(phi.adjoint());
  gram.triangularView<Eigen::StrictlyUpper>() = gram.adjoint();
}

// E|w_{k,l}|^2 for the common and individual blocks.
inline RVec common_energy(const UserPosterior& p) {
  return p.mean_common.cwiseAbs2() + p.var_common;
}
inline RVec individual_energy(const UserPosterior& p) {
  return p.mean_individual.cwiseAbs2() + p.var_individual;
}

// ||y - Phi mu||^2 + tr(Phi Sigma Phi^H)
inline double expected_residual(const CVec& y, const CMat& phi, const CMat& gram,
                                const UserPosterior& p) {
  const double fit = (y - phi * p.mean).squaredNorm();
  const double spread = gram.cwiseProduct(p.cov.transpose()).sum().real();
  return fit + spread;
}

}  // namespace gsbl
