#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mehler/linalg.hpp"

namespace mehler {

// Gaussian measure Gamma(cov, mean), determined by its characteristic
// functional exp{ i(mean,y) - 1/2 (cov y, y) }. cov = 0 is the Dirac measure
// at the mean; no epsilon-regularization is applied to keep that case exact.
struct GaussianMeasure {
  Vec mean;
  SymMatrix cov;

  int dim() const { return static_cast<int>(mean.size()); }

  static GaussianMeasure point(Vec x) {
    const int n = static_cast<int>(x.size());
    return GaussianMeasure{std::move(x), SymMatrix::Zero(n)};
  }
};

inline GaussianMeasure make_gaussian_measure(Vec mean, const Mat& cov) {
  GaussianMeasure g;
  require(mean.size() == cov.rows(), errc::dimension_mismatch,
          "mean and cov dimensions differ");
  require(mean.allFinite(), errc::invalid_argument, "mean has non-finite entries");
  g.mean = std::move(mean);
  g.cov = sym_checked(cov, "cov");
  require_psd(g.cov, "cov");
  return g;
}

inline cplx characteristic(const GaussianMeasure& g, const Vec& y) {
  require(y.size() == g.mean.size(), errc::dimension_mismatch,
          "probe dimension mismatch");
  return std::exp(cplx(-0.5 * quad_form(g.cov, y), g.mean.dot(y)));
}

// Finitely many atoms with positive weights. Second moment is finite by
// construction, as required for superposition.
struct WeightedPointMixture {
  std::vector<Vec> points;
  std::vector<double> weights;
};

using InitialMeasure = std::variant<GaussianMeasure, WeightedPointMixture>;

inline InitialMeasure make_point_mixture(std::vector<Vec> points,
                                         std::vector<double> weights) {
  require(!points.empty() && points.size() == weights.size(),
          errc::invalid_argument, "mixture needs matching nonempty lists");
  const auto n = points.front().size();
  for (const Vec& p : points)
    require(p.size() == n && p.allFinite(), errc::dimension_mismatch,
            "mixture points must share one finite dimension");
  for (double w : weights)
    require(std::isfinite(w) && w > 0.0, errc::invalid_argument,
            "mixture weights must be positive and finite");
  return WeightedPointMixture{std::move(points), std::move(weights)};
}

inline int initial_dim(const InitialMeasure& mu0) {
  if (const auto* g = std::get_if<GaussianMeasure>(&mu0)) return g->dim();
  return static_cast<int>(std::get<WeightedPointMixture>(mu0).points.front().size());
}

// Weighted Gaussian kernel family G_x = s * exp{-1/2 (Px,x)} * Gamma(Q, Rx):
// mass scale s, start-point quadratic damping P, covariance Q, mean map R.
struct GaussianKernel {
  double s = 1.0;
  SymMatrix P;
  SymMatrix Q;
  Mat R;

  int dim() const { return static_cast<int>(R.rows()); }

  // G_x = delta_x: the time-zero kernel.
  static GaussianKernel identity(int n) {
    return GaussianKernel{1.0, SymMatrix::Zero(n), SymMatrix::Zero(n),
                          Mat::Identity(n, n)};
  }

  // Degenerate covariance: G_x carries an atom, densities are unavailable.
  bool is_atom() const {
    return sym_spectral_norm(Q.m) <= 0.0;
  }
};

inline GaussianKernel make_kernel(double s, const Mat& P, const Mat& Q,
                                  const Mat& R) {
  require(std::isfinite(s) && s > 0.0, errc::invalid_argument,
          "kernel mass scale must be positive");
  require(R.rows() == R.cols(), errc::dimension_mismatch, "R must be square");
  require(all_finite(R), errc::invalid_argument, "R has non-finite entries");
  GaussianKernel K;
  K.s = s;
  K.P = sym_checked(P, "P");
  K.Q = sym_checked(Q, "Q");
  K.R = R;
  require(K.P.dim() == K.dim() && K.Q.dim() == K.dim(),
          errc::dimension_mismatch, "kernel blocks disagree in dimension");
  require_psd(K.P, "P");
  require_psd(K.Q, "Q");
  return K;
}

// Total mass of G_x: the characteristic functional at y = 0.
inline double kernel_mass(const GaussianKernel& K, const Vec& x) {
  require(x.size() == K.dim(), errc::dimension_mismatch, "x dimension mismatch");
  return K.s * std::exp(-0.5 * quad_form(K.P, x));
}

// Fourier transform of G_x at frequency y.
inline cplx characteristic_functional(const GaussianKernel& K, const Vec& x,
                                      const Vec& y) {
  require(x.size() == K.dim() && y.size() == K.dim(), errc::dimension_mismatch,
          "probe dimension mismatch");
  const double re = -0.5 * quad_form(K.P, x) - 0.5 * quad_form(K.Q, y);
  const double im = (K.R * x).dot(y);
  return K.s * std::exp(cplx(re, im));
}

// Lebesgue log-density of G_x at y. Requires Q nonsingular with condition
// number below the covariance limit; atoms must be handled by the caller.
inline double log_density(const GaussianKernel& K, const Vec& x, const Vec& y) {
  require(x.size() == K.dim() && y.size() == K.dim(), errc::dimension_mismatch,
          "probe dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Mat> es(K.Q.m);
  require(es.info() == Eigen::Success, errc::singular_covariance,
          "eigensolver failed on Q");
  const Vec& lam = es.eigenvalues();
  const double lmax = lam.maxCoeff();
  if (!(lmax > 0.0) || lam.minCoeff() <= lmax / tol::cov_condition_limit)
    fail(errc::singular_covariance,
         "Q condition number exceeds " + std::to_string(tol::cov_condition_limit) +
             "; kernel is an atom or numerically degenerate");

  const Vec z = es.eigenvectors().transpose() * (y - K.R * x);
  double quad = 0.0, logdet = 0.0;
  for (int i = 0; i < lam.size(); ++i) {
    quad += z[i] * z[i] / lam[i];
    logdet += std::log(lam[i]);
  }
  const double n = static_cast<double>(K.dim());
  return std::log(K.s) - 0.5 * quad_form(K.P, x) -
         0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * logdet - 0.5 * quad;
}

inline double density(const GaussianKernel& K, const Vec& x, const Vec& y) {
  return std::exp(log_density(K, x, y));
}

// Kernel of the composed measure z -> int G2_y(dz) G1_x(dy): later kernel K2
// applied to the output of earlier kernel K1. Completing the square in the
// intermediate variable gives, with M = I + Q1 P2,
//   s = s1 s2 det(M)^{-1/2}
//   P = P1 + R1^T P2 M^{-1} R1
//   Q = Q2 + R2 M^{-1} Q1 R2^T
//   R = R2 M^{-1} R1
// P2 M^{-1} and M^{-1} Q1 are symmetric (push-through identity), and M has
// real spectrum >= 1 because Q1 P2 is a product of PSD factors.
inline GaussianKernel compose(const GaussianKernel& later,
                              const GaussianKernel& earlier) {
  const int n = earlier.dim();
  require(later.dim() == n, errc::dimension_mismatch,
          "composed kernels disagree in dimension");

  const Mat M = Mat::Identity(n, n) + earlier.Q.m * later.P.m;
  Eigen::PartialPivLU<Mat> lu(M);
  const double det = lu.determinant();
  require(std::isfinite(det) && det >= 1.0 - 1e-9, errc::non_gaussian_composition,
          "composition determinant " + std::to_string(det) + " below 1");
  const Mat Minv = lu.solve(Mat::Identity(n, n));

  GaussianKernel K;
  K.s = later.s * earlier.s / std::sqrt(det);
  K.P = sym_exact(earlier.P.m + earlier.R.transpose() *
                                    symmetrized(later.P.m * Minv) * earlier.R);
  K.Q = sym_exact(later.Q.m +
                  later.R * symmetrized(Minv * earlier.Q.m) * later.R.transpose());
  K.R = later.R * Minv * earlier.R;

  if (min_eigenvalue(K.P) < -eps_psd(K.P.m) ||
      min_eigenvalue(K.Q) < -eps_psd(K.Q.m))
    fail(errc::non_gaussian_composition,
         "composed quadratic form lost positive semidefiniteness");
  return K;
}

// One Gaussian component of an evolved measure, with explicit (not
// normalized-away) mass.
struct WeightedGaussian {
  double mass = 0.0;
  GaussianMeasure shape;
};

// mu(t) = int G_x(t) mu0(dx): a finite mixture of weighted Gaussians — one
// component for a Gaussian mu0, one per atom for a point mixture.
struct EvolvedMeasure {
  std::vector<WeightedGaussian> components;

  int dim() const { return components.front().shape.dim(); }

  double total_mass() const {
    double m = 0.0;
    for (const auto& c : components) m += c.mass;
    return m;
  }

  // int |y|^2 mu(t)(dy), in closed form per component.
  double second_moment() const {
    double acc = 0.0;
    for (const auto& c : components)
      acc += c.mass * (c.shape.cov.m.trace() + c.shape.mean.squaredNorm());
    return acc;
  }

  cplx characteristic(const Vec& y) const {
    cplx acc = 0.0;
    for (const auto& c : components) acc += c.mass * mehler::characteristic(c.shape, y);
    return acc;
  }
};

// Superposition of the kernel family over an initial measure. For
// mu0 = Gamma(Sigma, m) the exp{-1/2 (Px,x)} weight tilts the integral but the
// result stays Gaussian: with M = I + Sigma P,
//   mass = s det(M)^{-1/2} exp{-1/2 (P M^{-1} m, m)}
//   mean = R M^{-1} m
//   cov  = Q + R M^{-1} Sigma R^T
// (P M^{-1} and M^{-1} Sigma symmetric as in compose). For point mixtures the
// components are just the weighted kernels at the atoms.
inline EvolvedMeasure apply_to_initial(const GaussianKernel& K,
                                       const InitialMeasure& mu0) {
  const int n = K.dim();
  require(initial_dim(mu0) == n, errc::dimension_mismatch,
          "initial measure dimension mismatch");
  EvolvedMeasure out;

  if (const auto* g = std::get_if<GaussianMeasure>(&mu0)) {
    const Mat M = Mat::Identity(n, n) + g->cov.m * K.P.m;
    Eigen::PartialPivLU<Mat> lu(M);
    const double det = lu.determinant();
    require(std::isfinite(det) && det >= 1.0 - 1e-9,
            errc::non_gaussian_composition,
            "superposition determinant " + std::to_string(det) + " below 1");
    const Mat Minv = lu.solve(Mat::Identity(n, n));

    WeightedGaussian c;
    c.mass = K.s / std::sqrt(det) *
             std::exp(-0.5 * g->mean.dot(symmetrized(K.P.m * Minv) * g->mean));
    c.shape.mean = K.R * (Minv * g->mean);
    c.shape.cov = sym_exact(K.Q.m + K.R * symmetrized(Minv * g->cov.m) *
                                        K.R.transpose());
    if (min_eigenvalue(c.shape.cov) < -eps_psd(c.shape.cov.m))
      fail(errc::non_gaussian_composition,
           "evolved covariance lost positive semidefiniteness");
    out.components.push_back(std::move(c));
    return out;
  }

  const auto& mix = std::get<WeightedPointMixture>(mu0);
  out.components.reserve(mix.points.size());
  for (size_t j = 0; j < mix.points.size(); ++j) {
    WeightedGaussian c;
    c.mass = mix.weights[j] * kernel_mass(K, mix.points[j]);
    c.shape.mean = K.R * mix.points[j];
    c.shape.cov = K.Q;
    out.components.push_back(std::move(c));
  }
  return out;
}

}  // namespace mehler
