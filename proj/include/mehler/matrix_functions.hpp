#pragma once

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mehler/linalg.hpp"

namespace mehler {

// Scalar evaluators for the even functions of t*sqrt(lambda). All of them are
// entire (or meromorphic with the relevant singularities away from
// lambda >= 0) even functions of the square root, so small negative lambdas
// coming from PSD rounding are clamped to zero by the callers.

inline double ev_cosh_tsqrt(double lam, double t) {
  return std::cosh(t * std::sqrt(std::max(lam, 0.0)));
}

inline double ev_sech_tsqrt(double lam, double t) {
  return 1.0 / std::cosh(t * std::sqrt(std::max(lam, 0.0)));
}

// log cosh(t sqrt(lambda)), safe against cosh overflow.
inline double ev_log_cosh_tsqrt(double lam, double t) {
  const double z = t * std::sqrt(std::max(lam, 0.0));
  if (z > 30.0) return z + std::log1p(std::exp(-2.0 * z)) - std::numbers::ln2;
  return std::log(std::cosh(z));
}

// tanh(t sqrt(lambda)) / sqrt(lambda); value t at lambda = 0.
inline double ev_tanh_over_sqrt(double lam, double t) {
  const double l = std::max(lam, 0.0);
  const double z2 = t * t * l;
  if (z2 < 1e-8) {
    // tanh(z)/z = 1 - z^2/3 + 2 z^4/15, truncation below 1e-24 here
    return t * (1.0 - z2 / 3.0 + 2.0 * z2 * z2 / 15.0);
  }
  const double z = std::sqrt(z2);
  return t * std::tanh(z) / z;
}

// (cosh(t sqrt(lambda)) - 1) / lambda; value t^2/2 at lambda = 0.
inline double ev_coshm1_over(double lam, double t) {
  const double l = std::max(lam, 0.0);
  const double z2 = t * t * l;
  if (z2 < 1e-2) {
    // (cosh z - 1)/z^2 = 1/2 (1 + z^2/12 + z^4/360 + z^6/20160 + ...)
    return 0.5 * t * t *
           (1.0 + z2 / 12.0 * (1.0 + z2 / 30.0 * (1.0 + z2 / 56.0)));
  }
  return (std::cosh(std::sqrt(z2)) - 1.0) / l;
}

enum class EvenKind { cosh_fn, sech_fn, tanh_over_sqrt_fn };

namespace detail {

// Maclaurin coefficients of tanh(sqrt(y))/sqrt(y); radius of convergence
// (pi/2)^2, used only with ||Y|| <= 1/4 after argument halving.
inline constexpr double k_tanh_over_sqrt_coeff[] = {
    1.0,
    -0.3333333333333333333,
    0.1333333333333333333,
    -0.05396825396825396825,
    0.02186948853615520282,
    -0.008863235529902196569,
    0.003592128036572481017,
    -0.001455834387051318268,
    0.0005900274409455859814,
    -0.0002391291142435524815,
    9.691537956929450326e-5,
    -3.927832388331683405e-5,
    1.591890506932896474e-5,
    -6.451689215655430763e-6,
    2.614771151290754554e-6,
    -1.059726832010465435e-6,
    4.294911078273805855e-7,
    -1.740661896357164778e-7,
    7.054636946400968325e-8,
    -2.859136662305253908e-8,
    1.158764443279885220e-8,
    -4.696295398230901629e-9,
    1.903336833931275921e-9,
    -7.713933635359062290e-10,
    3.126339545892087046e-10,
    -1.267057693030540106e-10,
    5.135191408039367740e-11,
    -2.081214686770047420e-11,
};

// cosh(sqrt(Y)) = sum Y^k / (2k)!, valid for any Y; used with ||Y|| <= 1/4.
inline Mat cosh_sqrt_series(const Mat& Y) {
  const auto n = Y.rows();
  Mat acc = Mat::Identity(n, n);
  Mat term = Mat::Identity(n, n);
  for (int k = 1; k <= 40; ++k) {
    term = term * Y / ((2.0 * k - 1.0) * (2.0 * k));
    acc += term;
    if (term.cwiseAbs().maxCoeff() <= 1e-17 * acc.cwiseAbs().maxCoeff())
      return acc;
  }
  fail(errc::series_divergence, "cosh series did not converge");
}

inline Mat tanh_over_sqrt_series(const Mat& Y) {
  constexpr int kTerms =
      static_cast<int>(sizeof(k_tanh_over_sqrt_coeff) / sizeof(double));
  const auto n = Y.rows();
  Mat acc = Mat::Identity(n, n);
  Mat pow = Mat::Identity(n, n);
  for (int k = 1; k < kTerms; ++k) {
    pow = pow * Y;
    const Mat term = k_tanh_over_sqrt_coeff[k] * pow;
    acc += term;
    if (term.cwiseAbs().maxCoeff() <= 1e-17 * acc.cwiseAbs().maxCoeff())
      return acc;
  }
  // ||Y|| <= 1/4 makes the tail below double rounding; reaching here means
  // the scaling contract was violated.
  fail(errc::series_divergence, "tanh series did not converge");
}

// Validates that X has (numerically) real nonnegative spectrum. X is a
// product of PSD factors in every supported use, so genuine negative or
// complex spectrum signals invalid input.
inline void check_nonnegative_spectrum(const Mat& X) {
  const double scale = std::max(X.cwiseAbs().maxCoeff(), 1.0);
  Eigen::EigenSolver<Mat> es(X, /*computeEigenvectors=*/false);
  require(es.info() == Eigen::Success, errc::negative_spectrum,
          "eigenvalue computation failed");
  for (int i = 0; i < X.rows(); ++i) {
    const cplx lam = es.eigenvalues()[i];
    if (lam.real() < -tol::psd_rel * scale ||
        std::abs(lam.imag()) > 1e-8 * scale)
      fail(errc::negative_spectrum,
           "spectrum of X leaves the nonnegative real axis");
  }
}

}  // namespace detail

// f(t sqrt(X)) for f in {cosh, sech, tanh(.)/(.)}, interpreted through the
// even Maclaurin series, so only integer powers of X appear. Symmetric X goes
// through its eigendecomposition; general X (a product C*B of PSD factors)
// through a scaled series with argument-doubling recursions:
//   cosh(2z) = 2 cosh(z)^2 - 1
//   sech(2z) = sech(z)^2 (2 - sech(z)^2)^{-1}
//   u(2z)    = 2 u(z) (I + X u(z)^2)^{-1},   u = tanh(t sqrt X)/sqrt X
inline Mat even_sqrt_function(const Mat& X, EvenKind kind, double t) {
  require(X.rows() == X.cols(), errc::dimension_mismatch, "X must be square");
  require(all_finite(X), errc::invalid_argument, "X has non-finite entries");
  require(t >= 0.0 && std::isfinite(t), errc::invalid_argument,
          "t must be finite and >= 0");
  const auto n = X.rows();

  if (asymmetry_rel(X) <= tol::symmetry_ingest) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(X));
    const Vec& lam = es.eigenvalues();
    require(lam.size() == 0 || lam.minCoeff() >= -eps_psd(symmetrized(X)),
            errc::negative_spectrum, "X has a negative eigenvalue");
    Vec f(n);
    for (int i = 0; i < n; ++i) {
      switch (kind) {
        case EvenKind::cosh_fn: f[i] = ev_cosh_tsqrt(lam[i], t); break;
        case EvenKind::sech_fn: f[i] = ev_sech_tsqrt(lam[i], t); break;
        case EvenKind::tanh_over_sqrt_fn:
          f[i] = ev_tanh_over_sqrt(lam[i], t);
          break;
      }
    }
    return es.eigenvectors() * f.asDiagonal() * es.eigenvectors().transpose();
  }

  detail::check_nonnegative_spectrum(X);

  // Halve t until || (t/2^k)^2 X || <= 1/4, run the series, then double back.
  const double norm1 = X.cwiseAbs().colwise().sum().maxCoeff();
  int halvings = 0;
  double tau = t;
  while (tau * tau * norm1 > 0.25) {
    tau *= 0.5;
    ++halvings;
    require(halvings <= 64, errc::series_divergence, "scaling overflow");
  }
  const Mat Y = (tau * tau) * X;
  const Mat I = Mat::Identity(n, n);

  switch (kind) {
    case EvenKind::cosh_fn: {
      Mat Cm = detail::cosh_sqrt_series(Y);
      for (int k = 0; k < halvings; ++k) Cm = 2.0 * Cm * Cm - I;
      return Cm;
    }
    case EvenKind::sech_fn: {
      Mat Sm = detail::cosh_sqrt_series(Y).partialPivLu().solve(I);
      for (int k = 0; k < halvings; ++k) {
        // sech(2z) = sech^2(z) (2 - sech^2(z))^{-1}; factors commute since
        // everything here is a function of the same X.
        const Mat S2 = Sm * Sm;
        Sm = (2.0 * I - S2).partialPivLu().solve(S2);
      }
      return Sm;
    }
    case EvenKind::tanh_over_sqrt_fn: {
      Mat U = tau * detail::tanh_over_sqrt_series(Y);
      for (int k = 0; k < halvings; ++k)
        U = 2.0 * U * (I + X * U * U).partialPivLu().solve(I);
      return U;
    }
  }
  fail(errc::invalid_argument, "unknown EvenKind");
}

// exp(t M). Backed by the scaling-and-squaring Pade implementation in Eigen.
inline Mat matrix_exponential(const Mat& M, double t = 1.0) {
  require(M.rows() == M.cols(), errc::dimension_mismatch, "M must be square");
  require(all_finite(M) && std::isfinite(t), errc::invalid_argument,
          "non-finite input");
  return (t * M).exp();
}

// int_0^t exp(D^T s) B exp(D s) ds via one block exponential: with
//   M = [[-D^T, B], [0, D]],  exp(t M) = [[F11, F12], [0, F22]],
// the integral equals F22^T * F12. Exact up to the accuracy of expm, so no
// quadrature error accumulates.
inline SymMatrix conjugated_integral(const SymMatrix& B, const Mat& D,
                                     double t) {
  const int n = B.dim();
  require(D.rows() == n && D.cols() == n, errc::dimension_mismatch,
          "B and D must share dimension");
  require(t >= 0.0 && std::isfinite(t), errc::invalid_argument,
          "t must be finite and >= 0");
  if (t == 0.0) return SymMatrix::Zero(n);

  Mat block = Mat::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = -D.transpose();
  block.topRightCorner(n, n) = B.m;
  block.bottomRightCorner(n, n) = D;
  const Mat E = matrix_exponential(block, t);
  const Mat F12 = E.topRightCorner(n, n);
  const Mat F22 = E.bottomRightCorner(n, n);
  SymMatrix Q = sym_exact(F22.transpose() * F12);
  require_psd(Q, "conjugated integral");
  return Q;
}

}  // namespace mehler
