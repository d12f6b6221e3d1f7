#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace mehler {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using cplx = std::complex<double>;

// Library-wide numeric policy. Values are part of the public contract and
// mirrored by the CLI config defaults.
namespace tol {
// Maximum relative asymmetry accepted when ingesting a symmetric matrix.
inline constexpr double symmetry_ingest = 1e-12;
// PSD slack: eigenvalues >= -psd_rel * spectral_norm are treated as >= 0.
inline constexpr double psd_rel = 1e-10;
// Relative symmetry drift that aborts the flow integrator.
inline constexpr double symmetry_drift = 1e-10;
// Covariances with condition number above this have no usable density.
inline constexpr double cov_condition_limit = 1e12;
// log-weights above this overflow exp() in double precision.
inline constexpr double log_weight_overflow = 700.0;
}  // namespace tol

enum class errc {
  dimension_mismatch,
  not_symmetric,
  not_psd,
  negative_spectrum,
  series_divergence,
  singular_covariance,
  non_gaussian_composition,
  c_not_zero,
  d_not_zero,
  step_failure,
  psd_lost,
  noisy_flow,
  alpha_nonzero,
  degenerate_step,
  empty_acceptance,
  bridge_unavailable,
  low_acceptance,
  weight_overflow,
  moment_condition_violated,
  invalid_argument,
  config_error,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::dimension_mismatch: return "DimensionMismatch";
    case errc::not_symmetric: return "NotSymmetric";
    case errc::not_psd: return "NotPSD";
    case errc::negative_spectrum: return "NegativeSpectrum";
    case errc::series_divergence: return "SeriesDivergence";
    case errc::singular_covariance: return "SingularCovariance";
    case errc::non_gaussian_composition: return "NonGaussianComposition";
    case errc::c_not_zero: return "CNotZero";
    case errc::d_not_zero: return "DNotZero";
    case errc::step_failure: return "StepFailure";
    case errc::psd_lost: return "PSDLost";
    case errc::noisy_flow: return "NoisyFlow";
    case errc::alpha_nonzero: return "AlphaNonzero";
    case errc::degenerate_step: return "DegenerateStep";
    case errc::empty_acceptance: return "EmptyAcceptance";
    case errc::bridge_unavailable: return "BridgeUnavailable";
    case errc::low_acceptance: return "LowAcceptance";
    case errc::weight_overflow: return "WeightOverflow";
    case errc::moment_condition_violated: return "MomentConditionViolated";
    case errc::invalid_argument: return "InvalidArgument";
    case errc::config_error: return "ConfigError";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  errc code() const { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool ok, errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace mehler
