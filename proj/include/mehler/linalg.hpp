#pragma once

#include <cmath>
#include <string>

#include "mehler/common.hpp"

namespace mehler {

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline double asymmetry_rel(const Mat& m) {
  const double scale = m.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

inline Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

// Spectral norm of a symmetric matrix (largest |eigenvalue|).
inline double sym_spectral_norm(const Mat& s) {
  if (s.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// PSD slack for a symmetric matrix: eigenvalues >= -eps_psd(s) count as >= 0.
inline double eps_psd(const Mat& s) { return tol::psd_rel * sym_spectral_norm(s); }

// Symmetric n x n matrix with exactly symmetric storage. Construction either
// trusts an already-symmetric product (sym_exact) or validates user input
// against the ingest tolerance (sym_checked).
struct SymMatrix {
  Mat m;

  SymMatrix() = default;
  explicit SymMatrix(Mat exact_symmetric) : m(std::move(exact_symmetric)) {}

  int dim() const { return static_cast<int>(m.rows()); }
  static SymMatrix Zero(int n) { return SymMatrix(Mat::Zero(n, n)); }
  static SymMatrix Identity(int n) { return SymMatrix(Mat::Identity(n, n)); }
};

// Wraps a computed matrix that is symmetric up to rounding.
inline SymMatrix sym_exact(const Mat& m) { return SymMatrix(symmetrized(m)); }

// Validates and symmetrizes external input.
inline SymMatrix sym_checked(const Mat& m, const std::string& name) {
  require(m.rows() == m.cols(), errc::dimension_mismatch, name + " must be square");
  require(all_finite(m), errc::invalid_argument, name + " has non-finite entries");
  const double a = asymmetry_rel(m);
  if (a > tol::symmetry_ingest)
    fail(errc::not_symmetric,
         name + " relative asymmetry " + std::to_string(a));
  return SymMatrix(symmetrized(m));
}

// Smallest eigenvalue; 0 for the empty matrix.
inline double min_eigenvalue(const SymMatrix& s) {
  if (s.dim() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(s.m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool is_psd(const SymMatrix& s) {
  return min_eigenvalue(s) >= -eps_psd(s.m);
}

inline void require_psd(const SymMatrix& s, const std::string& name) {
  const double lo = min_eigenvalue(s);
  if (lo < -eps_psd(s.m))
    fail(errc::not_psd, name + " has eigenvalue " + std::to_string(lo));
}

// A with A * A^T = s, for PSD s (possibly rank deficient). Eigenvalues below
// the PSD slack are clamped to zero rather than regularized.
inline Mat psd_factor(const SymMatrix& s) {
  Eigen::SelfAdjointEigenSolver<Mat> es(s.m);
  require(es.info() == Eigen::Success, errc::not_psd, "eigensolver failed");
  Vec lam = es.eigenvalues();
  const double slack = eps_psd(s.m);
  for (int i = 0; i < lam.size(); ++i) {
    require(lam[i] >= -slack, errc::not_psd, "psd_factor on indefinite matrix");
    lam[i] = std::sqrt(std::max(lam[i], 0.0));
  }
  return es.eigenvectors() * lam.asDiagonal();
}

// Principal square root of a PSD matrix.
inline SymMatrix psd_sqrt(const SymMatrix& s) {
  Eigen::SelfAdjointEigenSolver<Mat> es(s.m);
  require(es.info() == Eigen::Success, errc::not_psd, "eigensolver failed");
  Vec lam = es.eigenvalues();
  const double slack = eps_psd(s.m);
  for (int i = 0; i < lam.size(); ++i) {
    require(lam[i] >= -slack, errc::not_psd, "psd_sqrt on indefinite matrix");
    lam[i] = std::sqrt(std::max(lam[i], 0.0));
  }
  return SymMatrix(symmetrized(es.eigenvectors() * lam.asDiagonal() *
                               es.eigenvectors().transpose()));
}

inline double quad_form(const SymMatrix& s, const Vec& x) {
  return x.dot(s.m * x);
}

}  // namespace mehler
