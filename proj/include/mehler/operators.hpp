#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mehler/linalg.hpp"

namespace mehler {

// Generators (B, C, D, alpha) of the evolution equation
//   mu' = 1/2 tr(B mu'') - [(D mu',.) + tr D mu] - 1/2 (C.,.) mu + alpha mu
// at a fixed dimension n. B and C are symmetric PSD; D is an arbitrary
// bounded (here: any finite) operator. trace(B) is kept as the
// finite-dimensional stand-in for the trace-class requirement on B.
struct OperatorSet {
  int n = 0;
  SymMatrix B;
  SymMatrix C;
  Mat D;
  double alpha = 0.0;
  double trace_B = 0.0;
  double trace_D = 0.0;

  bool c_is_zero() const { return C.m.isZero(0.0); }
  bool d_is_zero() const { return D.isZero(0.0); }

  static OperatorSet zero(int n);
};

inline OperatorSet validate_operator_set(const Mat& B, const Mat& C,
                                         const Mat& D, double alpha) {
  const auto n = B.rows();
  require(n >= 1, errc::dimension_mismatch, "dimension must be >= 1");
  require(C.rows() == n && C.cols() == n && D.rows() == n && D.cols() == n,
          errc::dimension_mismatch, "B, C, D must share one dimension");
  require(std::isfinite(alpha), errc::invalid_argument, "alpha not finite");
  require(all_finite(D), errc::invalid_argument, "D has non-finite entries");

  OperatorSet ops;
  ops.n = static_cast<int>(n);
  ops.B = sym_checked(B, "B");
  ops.C = sym_checked(C, "C");
  require_psd(ops.B, "B");
  require_psd(ops.C, "C");
  ops.D = D;
  ops.alpha = alpha;
  ops.trace_B = ops.B.m.trace();
  ops.trace_D = ops.D.trace();
  return ops;
}

inline OperatorSet OperatorSet::zero(int n) {
  return validate_operator_set(Mat::Zero(n, n), Mat::Zero(n, n),
                               Mat::Zero(n, n), 0.0);
}

inline Mat diagonal_matrix(const std::vector<double>& entries) {
  Mat m = Mat::Zero(static_cast<Eigen::Index>(entries.size()),
                    static_cast<Eigen::Index>(entries.size()));
  for (size_t i = 0; i < entries.size(); ++i) m(i, i) = entries[i];
  return m;
}

// Spectrum lambda_k = k^{-p}, k = 1..n. With p > 1 the trace stays bounded as
// n grows, which is what the dimension-truncation studies rely on.
inline std::vector<double> power_law_spectrum(double p, int n) {
  require(n >= 1, errc::invalid_argument, "power_law needs n >= 1");
  std::vector<double> lam(static_cast<size_t>(n));
  for (int k = 1; k <= n; ++k)
    lam[static_cast<size_t>(k - 1)] = std::pow(static_cast<double>(k), -p);
  return lam;
}

}  // namespace mehler
