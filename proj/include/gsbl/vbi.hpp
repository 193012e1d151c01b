#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gsbl/array_steering.hpp"
#include "gsbl/channel_sim.hpp"
#include "gsbl/linalg.hpp"
#include "gsbl/offgrid.hpp"
#include "gsbl/special.hpp"
#include "gsbl/vbi_state.hpp"

namespace gsbl {

// ---------------------------------------------------------------------------
// Gaussian block
// ---------------------------------------------------------------------------

/// Posterior of the stacked coefficient [w_s; w_v] under
///   y = Phi (w_s + w_v) + n,  n ~ CN(0, I/alpha),
///   w_s ~ CN(0, diag(prec_common)^-1),  w_v ~ CN(0, diag(prec_individual)^-1).
///
/// The likelihood only sees w = w_s + w_v, whose prior covariance is the
/// diagonal C = 1/prec_common + 1/prec_individual. The combined posterior is an
/// L x L solve; the split into blocks follows from the prior conditional of
/// w_s given w, which has gain lambda = prec_individual / (prec_common +
/// prec_individual) and variance 1 / (prec_common + prec_individual).
///
/// An empty prec_individual means w_v is pruned (held at zero), which is the
/// single-component model.
inline UserPosterior solve_user_posterior(const CVec& y, const CMat& phi, const CMat& gram,
                                          double alpha, const RVec& prec_common,
                                          const RVec& prec_individual) {
  const Eigen::Index n = phi.cols();
  const bool pruned = prec_individual.size() == 0;
  RVec combined_prec = prec_common;
  RVec lam = RVec::Ones(n);
  RVec cond = RVec::Zero(n);
  if (!pruned) {
    const RVec total = prec_common + prec_individual;
    combined_prec = prec_common.cwiseProduct(prec_individual).cwiseQuotient(total);
    lam = prec_individual.cwiseQuotient(total);
    cond = total.cwiseInverse();
  }
  CMat h = alpha * gram;
  h.diagonal() += combined_prec.cast<cplx>();
  HermitianInverse inv = hermitian_inverse(h);

  UserPosterior p;
  p.individual_pruned = pruned;
  p.cov = std::move(inv.inverse);
  p.mean = alpha * (p.cov * (phi.adjoint() * y));
  const RVec one_minus = RVec::Ones(n) - lam;
  const RVec diag = p.cov.diagonal().real();
  p.mean_common = lam.cast<cplx>().cwiseProduct(p.mean);
  p.mean_individual = one_minus.cast<cplx>().cwiseProduct(p.mean);
  p.var_common = lam.cwiseAbs2().cwiseProduct(diag) + cond;
  p.var_individual = one_minus.cwiseAbs2().cwiseProduct(diag) + cond;
  p.prec_common = prec_common;
  p.prec_individual = pruned ? RVec::Zero(n) : prec_individual;
  p.log_det = -inv.log_det;
  if (!pruned) p.log_det += cond.array().log().sum();
  if (pruned) {
    p.mean_individual.setZero();
    p.var_individual.setZero();
  }
  return p;
}

inline RVec individual_prior_precision(const Hyperparams& hyper, int k, const RMat& individual_means) {
  if (hyper.individual_frozen()) return RVec();
  return individual_means.row(k).transpose() / hyper.rho;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Initial factors: unit gamma parameters, the Gaussian block solved with
/// alpha = 1 and prior precisions [1; 1/rho], random softmax assignments,
/// zero gaps. Elevations start uniform on [0, pi/2] only when refinement runs
/// on a planar array.
inline VariationalState init_state(const Hyperparams& hyper, const ObservationSet& obs,
                                   const ArrayGeometry& geometry, const AngleGrid& grid) {
  hyper.validate();
  if (obs.pilots.cols() != geometry.size()) throw shape_error("pilots do not match the array size");
  for (const auto& y : obs.received) {
    if (y.size() != obs.pilots.rows()) throw shape_error("received vector length != pilot count");
  }
  const int n_users = obs.n_users();
  const int n_grid = grid.size();
  const int n_groups = hyper.effective_groups();
  if (n_users < 1) throw shape_error("no users in observation set");

  std::mt19937_64 rng = make_rng(hyper.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  VariationalState s;
  s.precision_cap = hyper.precision_cap;
  s.noise_shape = 1.0;
  s.noise_rate = 1.0;
  s.common_shape = RMat::Ones(n_groups, n_grid);
  s.common_rate = RMat::Ones(n_groups, n_grid);
  s.individual_shape = RMat::Ones(n_users, n_grid);
  s.individual_rate = RMat::Ones(n_users, n_grid);
  if (hyper.individual_frozen()) s.individual_rate.setConstant(1.0 / hyper.precision_cap);

  s.assignment.resize(n_users, n_groups);
  for (int k = 0; k < n_users; ++k) {
    RVec logits(n_groups);
    for (int g = 0; g < n_groups; ++g) logits[g] = unit(rng);
    const double mx = logits.maxCoeff();
    RVec e = (logits.array() - mx).exp().matrix();
    s.assignment.row(k) = (e / e.sum()).transpose();
  }

  const bool random_elevation = hyper.offgrid_enabled && !geometry.is_ula();
  s.offsets.resize(static_cast<std::size_t>(n_users));
  s.dictionary.resize(static_cast<std::size_t>(n_users));
  s.sensing.resize(static_cast<std::size_t>(n_users));
  s.gram.resize(static_cast<std::size_t>(n_users));
  for (int k = 0; k < n_users; ++k) {
    auto& off = s.offsets[static_cast<std::size_t>(k)];
    off = GridOffsets::zeros(n_grid);
    if (random_elevation) {
      for (int l = 0; l < n_grid; ++l) off.elevation[l] = 0.5 * kPi * unit(rng);
    }
    if (k > 0 && !random_elevation) {
      s.dictionary[static_cast<std::size_t>(k)] = s.dictionary[0];
      s.sensing[static_cast<std::size_t>(k)] = s.sensing[0];
      s.gram[static_cast<std::size_t>(k)] = s.gram[0];
    } else {
      refresh_user_sensing(s, k, obs.pilots, geometry, grid);
    }
  }

  const RMat common_means = s.common_mean();
  const RMat individual_means = s.individual_mean();
  s.users.resize(static_cast<std::size_t>(n_users));
  for (int k = 0; k < n_users; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const RVec prec_s = s.common_precision_for(k, common_means);
    const RVec prec_v = individual_prior_precision(hyper, k, individual_means);
    s.users[uk] = solve_user_posterior(obs.received[uk], s.sensing[uk], s.gram[uk], s.noise_mean(),
                                       prec_s, prec_v);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Coordinate updates
// ---------------------------------------------------------------------------

/// q(alpha): shape a + K T, rate b + sum_k expected residual.
inline void update_alpha(VariationalState& state, const ObservationSet& obs, const Hyperparams& hyper) {
  double rate = hyper.b;
  for (int k = 0; k < state.n_users(); ++k) {
    const auto uk = static_cast<std::size_t>(k);
    rate += expected_residual(obs.received[uk], state.sensing[uk], state.gram[uk], state.users[uk]);
  }
  if (!(rate > 0.0) || !std::isfinite(rate)) throw numerical_error("noise rate is not positive/finite");
  state.noise_shape = hyper.a + static_cast<double>(state.n_users()) * obs.n_pilots();
  state.noise_rate = rate;
}

/// q(w_bar_k) for every user, with gamma_s from the current assignments.
inline void update_w(VariationalState& state, const ObservationSet& obs, const Hyperparams& hyper) {
  const RMat common_means = state.common_mean();
  const RMat individual_means = state.individual_mean();
  const double alpha = state.noise_mean();
  for (int k = 0; k < state.n_users(); ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const RVec prec_s = state.common_precision_for(k, common_means);
    const RVec prec_v = individual_prior_precision(hyper, k, individual_means);
    state.users[uk] =
        solve_user_posterior(obs.received[uk], state.sensing[uk], state.gram[uk], alpha, prec_s, prec_v);
  }
}

/// q(gamma*_g): shape a + sum_k phi_{k,g}, rate b + sum_k phi_{k,g} E|w_s|^2.
inline void update_gamma_star(VariationalState& state, const Hyperparams& hyper) {
  const int n_groups = state.n_groups();
  const int n_grid = state.grid_size();
  RMat shape = RMat::Constant(n_groups, n_grid, hyper.a);
  RMat rate = RMat::Constant(n_groups, n_grid, hyper.b);
  for (int k = 0; k < state.n_users(); ++k) {
    const RVec energy = common_energy(state.users[static_cast<std::size_t>(k)]);
    for (int g = 0; g < n_groups; ++g) {
      const double w = state.assignment(k, g);
      shape.row(g).array() += w;
      rate.row(g) += w * energy.transpose();
    }
  }
  state.common_shape = std::move(shape);
  state.common_rate = std::move(rate);
}

/// q(gamma_v_k): shape a + K (or a + 1), rate b + E|w_v|^2 / rho. Frozen in
/// the group-only and common modes.
inline void update_gamma_v(VariationalState& state, const Hyperparams& hyper) {
  if (hyper.individual_frozen()) return;
  const double shape =
      hyper.a + (hyper.gamma_v_shape == GammaVShape::all_users ? state.n_users() : 1.0);
  for (int k = 0; k < state.n_users(); ++k) {
    const RVec energy = individual_energy(state.users[static_cast<std::size_t>(k)]);
    state.individual_shape.row(k).setConstant(shape);
    state.individual_rate.row(k) = (hyper.b + energy.array() / hyper.rho).matrix().transpose();
  }
}

inline RVec softmax(const RVec& logits) {
  const double mx = logits.maxCoeff();
  RVec e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

// varsigma_{k,g} = sum_l E[ln gamma*_{g,l}] - sum_l E[gamma*_{g,l}] E|w_s,k,l|^2
inline RMat assignment_logits(const VariationalState& state) {
  const RMat means = state.common_mean();
  const RVec log_sum = state.common_log_mean().rowwise().sum();
  RMat logits(state.n_users(), state.n_groups());
  for (int k = 0; k < state.n_users(); ++k) {
    const RVec energy = common_energy(state.users[static_cast<std::size_t>(k)]);
    logits.row(k) = (log_sum - means * energy).transpose();
  }
  return logits;
}

/// q(z_k): softmax of the assignment logits, max-subtracted.
inline void update_z(VariationalState& state) {
  if (state.n_groups() == 1) {
    state.assignment.setOnes();
    return;
  }
  const RMat logits = assignment_logits(state);
  for (int k = 0; k < state.n_users(); ++k) {
    state.assignment.row(k) = softmax(logits.row(k).transpose()).transpose();
  }
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

struct ElboTerms {
  double likelihood = 0.0;
  double common_prior = 0.0;
  double individual_prior = 0.0;
  double hyperpriors = 0.0;
  double entropy = 0.0;

  double total() const { return likelihood + common_prior + individual_prior + hyperpriors + entropy; }
};

/// E_q[ln p(Y, Theta)] - E_q[ln q(Theta)]. The assignment variables carry no
/// prior, so only their entropy enters. With the individual component frozen,
/// w_v and gamma_v are not random and drop out.
inline ElboTerms compute_elbo_terms(const VariationalState& state, const ObservationSet& obs,
                                    const Hyperparams& hyper) {
  const double log_pi = std::log(kPi);
  const int n_grid = state.grid_size();
  const int n_pilots = obs.n_pilots();
  ElboTerms u;

  const double alpha = state.noise_mean();
  const double log_alpha = digamma(state.noise_shape) - std::log(state.noise_rate);
  for (int k = 0; k < state.n_users(); ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const double r = expected_residual(obs.received[uk], state.sensing[uk], state.gram[uk], state.users[uk]);
    u.likelihood += n_pilots * (log_alpha - log_pi) - alpha * r;
  }

  const RMat c_mean = state.common_mean();
  const RMat c_log = state.common_log_mean();
  for (int k = 0; k < state.n_users(); ++k) {
    const RVec energy = common_energy(state.users[static_cast<std::size_t>(k)]);
    for (int g = 0; g < state.n_groups(); ++g) {
      const double w = state.assignment(k, g);
      if (w == 0.0) continue;
      double acc = 0.0;
      for (int l = 0; l < n_grid; ++l) acc += c_log(g, l) - log_pi - c_mean(g, l) * energy[l];
      u.common_prior += w * acc;
    }
  }

  const bool frozen = hyper.individual_frozen();
  const RMat v_mean = state.individual_mean();
  const double log_pi_rho = std::log(kPi * hyper.rho);
  for (int k = 0; k < state.n_users() && !frozen; ++k) {
    const RVec energy = individual_energy(state.users[static_cast<std::size_t>(k)]);
    for (int l = 0; l < n_grid; ++l) {
      const double log_mean = digamma(state.individual_shape(k, l)) - std::log(state.individual_rate(k, l));
      u.individual_prior += log_mean - log_pi_rho - v_mean(k, l) * energy[l] / hyper.rho;
    }
  }

  u.hyperpriors += gamma_cross_term(hyper.a, hyper.b, state.noise_shape, state.noise_rate);
  u.entropy += gamma_entropy(state.noise_shape, state.noise_rate);
  for (Eigen::Index g = 0; g < state.common_shape.rows(); ++g) {
    for (int l = 0; l < n_grid; ++l) {
      u.hyperpriors += gamma_cross_term(hyper.a, hyper.b, state.common_shape(g, l), state.common_rate(g, l));
      u.entropy += gamma_entropy(state.common_shape(g, l), state.common_rate(g, l));
    }
  }
  for (int k = 0; k < state.n_users() && !frozen; ++k) {
    for (int l = 0; l < n_grid; ++l) {
      u.hyperpriors +=
          gamma_cross_term(hyper.a, hyper.b, state.individual_shape(k, l), state.individual_rate(k, l));
      u.entropy += gamma_entropy(state.individual_shape(k, l), state.individual_rate(k, l));
    }
  }

  const double blocks = frozen ? 1.0 : 2.0;
  for (const auto& p : state.users) u.entropy += blocks * n_grid * (1.0 + log_pi) + p.log_det;
  for (int k = 0; k < state.n_users(); ++k) {
    for (int g = 0; g < state.n_groups(); ++g) {
      const double w = state.assignment(k, g);
      if (w > 0.0) u.entropy -= w * std::log(w);
    }
  }

  const std::pair<const char*, double> named[] = {{"likelihood", u.likelihood},
                                                   {"common prior", u.common_prior},
                                                   {"individual prior", u.individual_prior},
                                                   {"hyperpriors", u.hyperpriors},
                                                   {"entropy", u.entropy}};
  for (const auto& [name, value] : named) {
    if (!std::isfinite(value)) throw numerical_error(std::string("ELBO term is not finite: ") + name);
  }
  return u;
}

inline double compute_elbo(const VariationalState& state, const ObservationSet& obs, const Hyperparams& hyper) {
  return compute_elbo_terms(state, obs, hyper).total();
}

// ---------------------------------------------------------------------------
// Posterior summaries
// ---------------------------------------------------------------------------

struct GroupExtraction {
  std::vector<int> labels;                // argmax_g phi_{k,g}, 0-based, ties to lowest
  std::vector<std::vector<int>> supports;  // Omega_k, ascending
  std::vector<bool> empty_support;
};

inline std::vector<int> support_of(const CVec& mean, double threshold) {
  std::vector<int> out;
  const RVec energy = mean.cwiseAbs2();
  const double peak = energy.size() > 0 ? energy.maxCoeff() : 0.0;
  if (!(peak > 0.0)) return out;
  for (Eigen::Index l = 0; l < energy.size(); ++l) {
    if (energy[l] >= threshold * peak) out.push_back(static_cast<int>(l));
  }
  return out;
}

inline int argmax_row(const RMat& m, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index g = 1; g < m.cols(); ++g) {
    if (m(row, g) > m(row, best)) best = static_cast<int>(g);
  }
  return best;
}

inline GroupExtraction extract_groups(const VariationalState& state, double support_threshold) {
  GroupExtraction out;
  for (int k = 0; k < state.n_users(); ++k) {
    out.labels.push_back(argmax_row(state.assignment, k));
    out.supports.push_back(support_of(state.users[static_cast<std::size_t>(k)].mean, support_threshold));
    out.empty_support.push_back(out.supports.back().empty());
  }
  return out;
}

// h = A_Omega pinv(Phi_Omega) y; falls back to A mu when |Omega| > T.
inline CVec reconstruct_channel(const CMat& dictionary, const CMat& sensing, const CVec& y,
                                const std::vector<int>& support, const CVec& mean) {
  if (support.empty()) return CVec::Zero(dictionary.rows());
  if (static_cast<Eigen::Index>(support.size()) > sensing.rows()) {
    std::cerr << "gsbl: support larger than pilot count, using posterior mean\n";
    return dictionary * mean;
  }
  const auto n = static_cast<Eigen::Index>(support.size());
  CMat phi_s(sensing.rows(), n);
  CMat a_s(dictionary.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    phi_s.col(i) = sensing.col(support[static_cast<std::size_t>(i)]);
    a_s.col(i) = dictionary.col(support[static_cast<std::size_t>(i)]);
  }
  return a_s * least_squares(phi_s, y);
}

inline std::vector<CVec> reconstruct_channels(const VariationalState& state, const ObservationSet& obs,
                                              const GroupExtraction& groups) {
  std::vector<CVec> out;
  for (int k = 0; k < state.n_users(); ++k) {
    const auto uk = static_cast<std::size_t>(k);
    out.push_back(reconstruct_channel(state.dictionary[uk], state.sensing[uk], obs.received[uk],
                                      groups.supports[uk], state.users[uk].mean));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct PosteriorSummary {
  std::vector<int> labels;
  std::vector<CVec> channels;
  std::vector<std::vector<int>> supports;
  double final_elbo = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct InferenceResult {
  VariationalState state;
  PosteriorSummary summary;
  std::vector<double> elbo_trace;  // initial value, then one entry per iteration
};

// True when every block update is an exact coordinate maximizer, so the
// objective can only go up.
inline bool updates_are_exact(const Hyperparams& hyper) {
  return !hyper.offgrid_enabled &&
         (hyper.individual_frozen() || hyper.gamma_v_shape == GammaVShape::per_user);
}

inline double max_relative_change(const std::vector<CVec>& before, const VariationalState& state) {
  double worst = 0.0;
  for (int k = 0; k < state.n_users(); ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const double denom = before[uk].norm();
    const double diff = (state.users[uk].mean - before[uk]).norm();
    const double rel = denom > 0.0 ? diff / denom : (diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    worst = std::max(worst, rel);
  }
  return worst;
}

/// Alternating updates alpha -> w -> gamma* -> gamma_v -> z (-> off-grid step)
/// until the largest relative change of mu_k drops below tol or max_iters.
inline InferenceResult run_inference(const Hyperparams& hyper, const ObservationSet& obs,
                                     const ArrayGeometry& geometry) {
  const int grid_size = hyper.grid_size > 0 ? hyper.grid_size : geometry.size();
  const AngleGrid grid = AngleGrid::make(geometry, grid_size, hyper.grid_kind);
  InferenceResult result;
  result.state = init_state(hyper, obs, geometry, grid);
  auto& state = result.state;
  result.elbo_trace.push_back(compute_elbo(state, obs, hyper));
  const bool exact = updates_are_exact(hyper);

  int it = 0;
  bool converged = false;
  std::vector<CVec> before(static_cast<std::size_t>(state.n_users()));
  for (; it < hyper.max_iters; ++it) {
    for (int k = 0; k < state.n_users(); ++k) before[static_cast<std::size_t>(k)] = state.users[static_cast<std::size_t>(k)].mean;
    update_alpha(state, obs, hyper);
    update_w(state, obs, hyper);
    update_gamma_star(state, hyper);
    update_gamma_v(state, hyper);
    update_z(state);
    if (hyper.offgrid_enabled) offgrid_refine(state, obs, geometry, grid, hyper.offgrid, it);

    const double u = compute_elbo(state, obs, hyper);
    const double prev = result.elbo_trace.back();
    if (exact && u < prev - 1e-6 * std::abs(prev)) {
      throw numerical_error("ELBO decreased from " + std::to_string(prev) + " to " + std::to_string(u) +
                            " at iteration " + std::to_string(it + 1));
    }
    result.elbo_trace.push_back(u);
    // The first sweep only moves alpha away from its initial value, so mu can
    // look stationary before any precision has been learned.
    if (it > 0 && max_relative_change(before, state) < hyper.tol) {
      converged = true;
      ++it;
      break;
    }
  }

  const GroupExtraction groups = extract_groups(state, hyper.support_threshold);
  result.summary.labels = groups.labels;
  result.summary.supports = groups.supports;
  result.summary.channels = reconstruct_channels(state, obs, groups);
  result.summary.final_elbo = result.elbo_trace.back();
  result.summary.iterations = it;
  result.summary.converged = converged;
  return result;
}

}  // namespace gsbl
