#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "gsbl/common.hpp"

namespace gsbl {

/// sum_k ||est_k - h_k||^2 / sum_k ||h_k||^2 for one trial.
inline double nmse(const std::vector<CVec>& estimates, const std::vector<CVec>& truths) {
  if (estimates.size() != truths.size()) throw shape_error("nmse: user count mismatch");
  double err = 0.0;
  double energy = 0.0;
  for (std::size_t k = 0; k < truths.size(); ++k) {
    if (estimates[k].size() != truths[k].size()) throw shape_error("nmse: vector length mismatch");
    err += (estimates[k] - truths[k]).squaredNorm();
    energy += truths[k].squaredNorm();
  }
  if (!(energy > 0.0)) throw numerical_error("nmse: true channels have zero energy");
  return err / energy;
}

namespace detail {

// Minimum-cost assignment of rows to columns for a square cost matrix
// (Hungarian method with potentials). Returns the column of each row.
inline std::vector<int> hungarian(const RMat& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) {
    if (p[static_cast<std::size_t>(j)] > 0) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  return assignment;
}

}  // namespace detail

/// Largest fraction of users whose assigned label maps to their true label
/// under a one-to-one relabeling. Labels are arbitrary non-negative integers.
/// Exhaustive over permutations for up to 8 labels, Hungarian matching above.
inline double grouping_accuracy(const std::vector<int>& assigned, const std::vector<int>& truth) {
  if (assigned.size() != truth.size()) throw shape_error("grouping_accuracy: length mismatch");
  if (assigned.empty()) throw shape_error("grouping_accuracy: no users");
  const std::set<int> a_set(assigned.begin(), assigned.end());
  const std::set<int> t_set(truth.begin(), truth.end());
  const std::vector<int> a_labels(a_set.begin(), a_set.end());
  const std::vector<int> t_labels(t_set.begin(), t_set.end());
  const int n = static_cast<int>(std::max(a_labels.size(), t_labels.size()));

  // counts(i, j): users with assigned label i and true label j (padded square).
  RMat counts = RMat::Zero(n, n);
  for (std::size_t k = 0; k < assigned.size(); ++k) {
    const auto i = std::lower_bound(a_labels.begin(), a_labels.end(), assigned[k]) - a_labels.begin();
    const auto j = std::lower_bound(t_labels.begin(), t_labels.end(), truth[k]) - t_labels.begin();
    counts(i, j) += 1.0;
  }

  double best = 0.0;
  if (n <= 8) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    do {
      double hit = 0.0;
      for (int i = 0; i < n; ++i) hit += counts(i, perm[static_cast<std::size_t>(i)]);
      best = std::max(best, hit);
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    const auto match = detail::hungarian(-counts);
    for (int i = 0; i < n; ++i) best += counts(i, match[static_cast<std::size_t>(i)]);
  }
  return best / static_cast<double>(assigned.size());
}

/// Number of distinct labels in use.
inline int nonempty_groups(const std::vector<int>& labels) {
  return static_cast<int>(std::set<int>(labels.begin(), labels.end()).size());
}

/// F1 score between an estimated and a true support set.
inline double support_f1(const std::vector<int>& estimated, const std::vector<int>& truth) {
  if (estimated.empty() && truth.empty()) return 1.0;
  const std::set<int> e(estimated.begin(), estimated.end());
  const std::set<int> t(truth.begin(), truth.end());
  double hit = 0.0;
  for (int x : e) hit += t.count(x) > 0 ? 1.0 : 0.0;
  if (hit == 0.0) return 0.0;
  const double precision = hit / static_cast<double>(e.size());
  const double recall = hit / static_cast<double>(t.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace gsbl
