#pragma once

#include <cmath>
#include <complex>
#include <iostream>

#include "gsbl/common.hpp"

namespace gsbl {

struct HermitianInverse {
  CMat inverse;
  double log_det = 0.0;  // log det of the (possibly jittered) input
  bool jittered = false;
};

#ifdef GSBL_USE_LAPACK
extern "C" {
void zpotrf_(const char* uplo, const int* n, std::complex<double>* a, const int* lda, int* info);
void zpotri_(const char* uplo, const int* n, std::complex<double>* a, const int* lda, int* info);
// Present when the LAPACK in use is OpenBLAS.
void openblas_set_num_threads(int n) __attribute__((weak));
}
#endif

namespace detail {

#ifdef GSBL_USE_LAPACK
// Trials already run in parallel; BLAS-level threads would only add
// scheduling noise.
inline void single_threaded_blas() {
  static const bool once = [] {
    if (openblas_set_num_threads) openblas_set_num_threads(1);
    return true;
  }();
  (void)once;
}

// Cholesky in place (lower); false when not positive definite.
inline bool cholesky_in_place(CMat& a) {
  single_threaded_blas();
  const int n = static_cast<int>(a.rows());
  int info = 0;
  zpotrf_("L", &n, a.data(), &n, &info);
  if (info < 0) throw numerical_error("zpotrf: invalid argument");
  return info == 0;
}

// Inverse from the lower Cholesky factor in `a`, returned full Hermitian.
inline void inverse_from_cholesky(CMat& a) {
  const int n = static_cast<int>(a.rows());
  int info = 0;
  zpotri_("L", &n, a.data(), &n, &info);
  if (info != 0) throw numerical_error("zpotri failed");
  a.triangularView<Eigen::StrictlyUpper>() = a.adjoint();
}
#else
inline bool cholesky_in_place(CMat& a) {
  Eigen::LLT<Eigen::Ref<CMat>> llt(a);
  return llt.info() == Eigen::Success;
}

inline void inverse_from_cholesky(CMat& a) {
  const Eigen::Index n = a.rows();
  CMat l_inv = CMat::Identity(n, n);
  a.triangularView<Eigen::Lower>().solveInPlace(l_inv);
  a.noalias() = l_inv.adjoint() * l_inv;
}
#endif

}  // namespace detail

// Inverse of a Hermitian positive definite matrix via Cholesky (LAPACK when
// built with GSBL_USE_LAPACK). Only the lower triangle of the input is read.
// On failure the diagonal is loaded with 1e-10 * trace / n and the
// factorization is retried once; a second failure is a numerical_error.
inline HermitianInverse hermitian_inverse(const CMat& m) {
  const Eigen::Index n = m.rows();
  if (m.cols() != n) throw shape_error("hermitian_inverse needs a square matrix");
  HermitianInverse out;
  out.inverse = m;
  if (!detail::cholesky_in_place(out.inverse)) {
    const double jitter = 1e-10 * m.diagonal().real().sum() / static_cast<double>(n);
    out.inverse = m;
    out.inverse.diagonal().array() += jitter;
    if (!detail::cholesky_in_place(out.inverse)) throw numerical_error("Cholesky failed after jitter");
    out.jittered = true;
    std::cerr << "gsbl: ill-conditioned posterior precision, added diagonal jitter " << jitter
              << '\n';
  }
  for (Eigen::Index i = 0; i < n; ++i) out.log_det += 2.0 * std::log(out.inverse(i, i).real());
  detail::inverse_from_cholesky(out.inverse);
  return out;
}

// Minimum-norm least squares with a rank tolerance relative to the largest
// pivot.
inline CVec least_squares(const CMat& a, const CVec& b, double rel_tol = 1e-10) {
  if (a.rows() != b.size()) throw shape_error("least_squares: row mismatch");
  if (a.cols() == 0) return CVec();
  Eigen::CompleteOrthogonalDecomposition<CMat> cod;
  cod.setThreshold(rel_tol);
  cod.compute(a);
  return cod.solve(b);
}

}  // namespace gsbl
