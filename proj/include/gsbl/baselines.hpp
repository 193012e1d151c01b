#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gsbl/common.hpp"
#include "gsbl/linalg.hpp"
#include "gsbl/vbi.hpp"

namespace gsbl {

// ---------------------------------------------------------------------------
// Individual SBL
// ---------------------------------------------------------------------------

struct SblResult {
  CVec mean;
  CMat cov;
  RVec precision;  // posterior means of the per-atom precisions
  double noise_precision = 0.0;
  std::vector<int> support;
  CVec channel;
  int iterations = 0;
  bool converged = false;
};

/// Single-vector SBL with gamma hyperpriors on the atom precisions and the
/// noise precision, updated in the order noise -> coefficients -> precisions.
/// Initialization and stopping follow the joint engine: unit precisions and
/// unit noise precision, relative change of the mean below tol after at least
/// two sweeps.
inline SblResult individual_sbl(const CVec& y, const CMat& phi, const CMat& dictionary,
                                const Hyperparams& hyper) {
  hyper.validate();
  if (phi.rows() != y.size()) throw shape_error("individual_sbl: y length != rows of Phi");
  if (dictionary.cols() != phi.cols()) throw shape_error("individual_sbl: dictionary/Phi column mismatch");
  const Eigen::Index n = phi.cols();
  const double n_obs = static_cast<double>(y.size());
  const CMat gram = phi.adjoint() * phi;
  const CVec phi_y = phi.adjoint() * y;

  RVec gamma_shape = RVec::Ones(n);
  RVec gamma_rate = RVec::Ones(n);
  double alpha_shape = 1.0;
  double alpha_rate = 1.0;

  auto solve = [&](SblResult& r) {
    const RVec gamma = gamma_shape.cwiseQuotient(gamma_rate).cwiseMin(hyper.precision_cap);
    CMat h = (alpha_shape / alpha_rate) * gram;
    h.diagonal() += gamma.cast<cplx>();
    r.cov = hermitian_inverse(h).inverse;
    r.mean = (alpha_shape / alpha_rate) * (r.cov * phi_y);
  };

  SblResult r;
  solve(r);
  int it = 0;
  for (; it < hyper.max_iters; ++it) {
    const CVec before = r.mean;
    const double fit = (y - phi * r.mean).squaredNorm() + gram.cwiseProduct(r.cov.transpose()).sum().real();
    alpha_shape = hyper.a + n_obs;
    alpha_rate = hyper.b + fit;
    solve(r);
    const RVec energy = r.mean.cwiseAbs2() + r.cov.diagonal().real();
    gamma_shape.setConstant(hyper.a + 1.0);
    gamma_rate = (hyper.b + energy.array()).matrix();

    const double denom = before.norm();
    const double diff = (r.mean - before).norm();
    const double rel = denom > 0.0 ? diff / denom : (diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    if (it > 0 && rel < hyper.tol) {
      r.converged = true;
      ++it;
      break;
    }
  }
  r.iterations = it;
  r.noise_precision = alpha_shape / alpha_rate;
  r.precision = gamma_shape.cwiseQuotient(gamma_rate).cwiseMin(hyper.precision_cap);
  r.support = support_of(r.mean, hyper.support_threshold);
  r.channel = reconstruct_channel(dictionary, phi, y, r.support, r.mean);
  return r;
}

// ---------------------------------------------------------------------------
// Joint OMP (stand-in: simultaneous OMP for a common part, then per-user OMP)
// ---------------------------------------------------------------------------

struct OmpResult {
  std::vector<int> support;  // common atoms first, then the user's own
  CVec coefficients;         // least squares on `support`
  CVec channel;
  std::vector<double> residual_norms;  // after each greedy step, starting with ||y||
};

namespace detail {

inline CMat gather_columns(const CMat& m, const std::vector<int>& cols) {
  CMat out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(cols[i]);
  return out;
}

inline CVec project_out(const CMat& phi, const std::vector<int>& support, const CVec& y, CVec* coef) {
  if (support.empty()) {
    if (coef) *coef = CVec();
    return y;
  }
  const CMat sub = gather_columns(phi, support);
  const CVec c = least_squares(sub, y);
  if (coef) *coef = c;
  return y - sub * c;
}

// Highest-scoring column not yet in `taken`; -1 when every column is taken.
inline int best_atom(const RVec& score, const std::vector<int>& taken) {
  int best = -1;
  for (Eigen::Index l = 0; l < score.size(); ++l) {
    if (std::find(taken.begin(), taken.end(), static_cast<int>(l)) != taken.end()) continue;
    if (best < 0 || score[l] > score[best]) best = static_cast<int>(l);
  }
  return best;
}

}  // namespace detail

/// Stage 1 picks common_budget atoms maximizing sum_k |<phi_l, r_k>|^2 / ||phi_l||^2
/// with joint least-squares residual updates. Stage 2 lets each user add up to
/// individual_budget atoms on its own residual. Both stages stop early once
/// the residual vanishes.
inline std::vector<OmpResult> joint_omp(const std::vector<CVec>& received, const CMat& phi,
                                        const CMat& dictionary, int common_budget, int individual_budget) {
  if (common_budget < 0 || individual_budget < 0) throw config_error("OMP budgets must be >= 0");
  if (common_budget + individual_budget > phi.rows()) {
    throw config_error("OMP budget exceeds the number of pilots");
  }
  if (dictionary.cols() != phi.cols()) throw shape_error("joint_omp: dictionary/Phi column mismatch");
  for (const auto& y : received) {
    if (y.size() != phi.rows()) throw shape_error("joint_omp: y length != rows of Phi");
  }
  const RVec col_norm2 = phi.colwise().squaredNorm().transpose().cwiseMax(std::numeric_limits<double>::min());
  constexpr double kVanish = 1e-12;

  std::vector<OmpResult> out(received.size());
  std::vector<CVec> residual = received;
  std::vector<int> common;
  for (std::size_t k = 0; k < received.size(); ++k) out[k].residual_norms.push_back(received[k].norm());

  auto vanished = [&](std::size_t k) { return residual[k].norm() <= kVanish * std::max(received[k].norm(), 1.0); };

  for (int step = 0; step < common_budget; ++step) {
    bool all_done = true;
    for (std::size_t k = 0; k < received.size(); ++k) all_done = all_done && vanished(k);
    if (all_done) break;
    RVec score = RVec::Zero(phi.cols());
    for (const auto& r : residual) score += (phi.adjoint() * r).cwiseAbs2();
    score = score.cwiseQuotient(col_norm2);
    const int l = detail::best_atom(score, common);
    if (l < 0) break;
    common.push_back(l);
    for (std::size_t k = 0; k < received.size(); ++k) {
      residual[k] = detail::project_out(phi, common, received[k], nullptr);
      out[k].residual_norms.push_back(residual[k].norm());
    }
  }

  for (std::size_t k = 0; k < received.size(); ++k) {
    std::vector<int> support = common;
    for (int step = 0; step < individual_budget && !vanished(k); ++step) {
      const RVec score = (phi.adjoint() * residual[k]).cwiseAbs2().cwiseQuotient(col_norm2);
      const int l = detail::best_atom(score, support);
      if (l < 0) break;
      support.push_back(l);
      residual[k] = detail::project_out(phi, support, received[k], nullptr);
      out[k].residual_norms.push_back(residual[k].norm());
    }
    CVec coef;
    detail::project_out(phi, support, received[k], &coef);
    out[k].support = support;
    out[k].coefficients = coef;
    out[k].channel = support.empty() ? CVec::Zero(dictionary.rows())
                                     : CVec(detail::gather_columns(dictionary, support) * coef);
  }
  return out;
}

// Atoms per cluster: how many grid intervals one angular spread covers, plus one.
inline int cluster_width_atoms(double angular_spread_deg, double grid_interval_rad) {
  const double interval_deg = grid_interval_rad * 180.0 / kPi;
  return static_cast<int>(std::ceil(angular_spread_deg / interval_deg - 1e-12)) + 1;
}

// ---------------------------------------------------------------------------
// Genie least squares
// ---------------------------------------------------------------------------

/// Least squares on the true path atoms: h = A_true pinv(X A_true) y. With
/// more paths than pilots this is the minimum-norm solution.
inline CVec genie_ls(const CVec& y, const CMat& pilots, const PathSet& paths, const ArrayGeometry& geometry) {
  if (pilots.rows() != y.size() || pilots.cols() != geometry.size()) throw shape_error("genie_ls: shape mismatch");
  if (paths.size() == 0) return CVec::Zero(geometry.size());
  CMat atoms(geometry.size(), static_cast<Eigen::Index>(paths.size()));
  for (std::size_t i = 0; i < paths.size(); ++i) {
    atoms.col(static_cast<Eigen::Index>(i)) = steering(geometry, paths.azimuth[i], paths.elevation[i]);
  }
  const CMat phi = pilots * atoms;
  return atoms * least_squares(phi, y);
}

}  // namespace gsbl
