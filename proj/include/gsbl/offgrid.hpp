#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gsbl/array_steering.hpp"
#include "gsbl/vbi_state.hpp"

namespace gsbl {

namespace detail {

// Derivative of -alpha (||y - Phi mu||^2 + tr(Phi Sigma Phi^H)) w.r.t. the
// angle that moves column l, for every l. d_phi holds X times the column
// derivatives of the dictionary.
//
// Written with c1 = -alpha (chi_ll + |mu_l|^2) and
// c2 = alpha (conj(mu_l) y_{-l} - sum_{j != l} chi_jl phi_j) the derivative is
// 2 Re(dphi_l^H phi_l) c1 + 2 Re(dphi_l^H c2). Expanding y_{-l} = r + mu_l phi_l
// with the full residual r, the phi_l terms cancel and what remains is
// 2 alpha Re(conj(mu_l) dphi_l^H r - dphi_l^H (Phi Sigma)_l).
inline RVec offgrid_objective_grad(const CVec& y, const CMat& phi, const CMat& d_phi,
                                   const UserPosterior& p, double alpha) {
  const Eigen::Index n = phi.cols();
  const CVec residual = y - phi * p.mean;
  CMat phi_sigma(phi.rows(), n);
  phi_sigma.noalias() = phi * p.cov;
  CVec d_res(n);
  d_res.noalias() = d_phi.adjoint() * residual;
  RVec grad(n);
  for (Eigen::Index l = 0; l < n; ++l) {
    const double fit = (std::conj(p.mean[l]) * d_res[l]).real();
    const double spread = d_phi.col(l).dot(phi_sigma.col(l)).real();  // dot() conjugates the left side
    grad[l] = 2.0 * alpha * (fit - spread);
  }
  return grad;
}

// Column derivatives of the current dictionary, reusing its entries:
// d/dx exp(j phase) = j (d phase/dx) exp(j phase).
inline CMat dictionary_grad_from(const ArrayGeometry& geometry, const AngleGrid& grid,
                                 const GridOffsets& offsets, const CMat& dictionary, AngleParam wrt) {
  CMat d(dictionary.rows(), dictionary.cols());
  for (Eigen::Index l = 0; l < dictionary.cols(); ++l) {
    const double az = grid.points[l] + offsets.beta[l];
    const double el = offsets.elevation[l];
    const double sa = std::sin(az);
    const double ca = std::cos(az);
    for (int i = 0; i < geometry.size(); ++i) {
      d(i, l) = kJ * steering_phase_grad(geometry, sa, ca, el, wrt, i) * dictionary(i, l);
    }
  }
  return d;
}

}  // namespace detail

/// Gradient of the off-grid objective w.r.t. the azimuth gaps of user k.
inline RVec objective_grad_beta(const VariationalState& state, const ObservationSet& obs,
                                const ArrayGeometry& geometry, const AngleGrid& grid, int k) {
  const auto uk = static_cast<std::size_t>(k);
  const CMat d_phi = obs.pilots * detail::dictionary_grad_from(geometry, grid, state.offsets[uk],
                                                               state.dictionary[uk], AngleParam::azimuth_gap);
  return detail::offgrid_objective_grad(obs.received[uk], state.sensing[uk], d_phi, state.users[uk],
                                        state.noise_mean());
}

/// Gradient w.r.t. the elevations of user k; identically zero for a ULA.
inline RVec objective_grad_phi(const VariationalState& state, const ObservationSet& obs,
                               const ArrayGeometry& geometry, const AngleGrid& grid, int k) {
  if (geometry.is_ula()) return RVec::Zero(grid.size());
  const auto uk = static_cast<std::size_t>(k);
  const CMat d_phi = obs.pilots * detail::dictionary_grad_from(geometry, grid, state.offsets[uk],
                                                               state.dictionary[uk], AngleParam::elevation);
  return detail::offgrid_objective_grad(obs.received[uk], state.sensing[uk], d_phi, state.users[uk],
                                        state.noise_mean());
}

inline double sign_of(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

inline double phi_step_size(const OffgridStepConfig& config, int iteration) {
  return config.phi_step_base * std::max(std::pow(config.decay, iteration), config.phi_step_floor);
}

/// Fixed-step sign update of beta (clamped to half a grid interval) and of
/// the elevations (clamped to [0, pi/2]). Returns which columns moved.
inline std::vector<bool> apply_offgrid_step(GridOffsets& offsets, const RVec& grad_beta,
                                            const RVec& grad_phi, const OffgridStepConfig& config,
                                            int iteration, double grid_interval, bool update_elevation) {
  const Eigen::Index n = offsets.beta.size();
  std::vector<bool> changed(static_cast<std::size_t>(n), false);
  const double half = 0.5 * grid_interval;
  const double beta_step = config.beta_step_fraction * grid_interval;
  const double phi_step = phi_step_size(config, iteration);
  for (Eigen::Index l = 0; l < n; ++l) {
    const double old_beta = offsets.beta[l];
    const double old_phi = offsets.elevation[l];
    offsets.beta[l] = std::clamp(old_beta + beta_step * sign_of(grad_beta[l]), -half, half);
    if (update_elevation) {
      offsets.elevation[l] = std::clamp(old_phi + phi_step * sign_of(grad_phi[l]), 0.0, 0.5 * kPi);
    }
    changed[static_cast<std::size_t>(l)] = offsets.beta[l] != old_beta || offsets.elevation[l] != old_phi;
  }
  return changed;
}

// One refinement pass over all users: gradients at the current parameters,
// one beta and one elevation step, then a sensing refresh for moved columns.
inline void offgrid_refine(VariationalState& state, const ObservationSet& obs,
                           const ArrayGeometry& geometry, const AngleGrid& grid,
                           const OffgridStepConfig& config, int iteration) {
  for (int k = 0; k < state.n_users(); ++k) {
    const RVec zeta = objective_grad_beta(state, obs, geometry, grid, k);
    const RVec varsigma = objective_grad_phi(state, obs, geometry, grid, k);
    const auto changed = apply_offgrid_step(state.offsets[static_cast<std::size_t>(k)], zeta, varsigma,
                                            config, iteration, grid.interval, !geometry.is_ula());
    if (std::any_of(changed.begin(), changed.end(), [](bool c) { return c; })) {
      refresh_user_sensing(state, k, obs.pilots, geometry, grid, changed);
    }
  }
}

}  // namespace gsbl
