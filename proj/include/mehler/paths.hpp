#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <exception>
#include <map>
#include <numbers>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "mehler/riccati.hpp"
#include "mehler/rng.hpp"

namespace mehler {

// Deterministic fixed-order pairwise reduction. Used for every Monte Carlo
// sum so that estimates do not depend on how samples were distributed over
// threads.
inline double pairwise_sum(const std::vector<double>& v, size_t lo, size_t hi) {
  if (hi - lo <= 8) {
    double acc = 0.0;
    for (size_t i = lo; i < hi; ++i) acc += v[i];
    return acc;
  }
  const size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

inline double pairwise_sum(const std::vector<double>& v) {
  return pairwise_sum(v, 0, v.size());
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

// Two-pass mean and standard error (pairwise in both passes).
inline MeanStderr mean_stderr(const std::vector<double>& v) {
  MeanStderr out;
  const size_t n = v.size();
  if (n == 0) return out;
  out.mean = pairwise_sum(v) / static_cast<double>(n);
  if (n == 1) return out;
  std::vector<double> sq(n);
  for (size_t i = 0; i < n; ++i) sq[i] = (v[i] - out.mean) * (v[i] - out.mean);
  const double var = pairwise_sum(sq) / static_cast<double>(n - 1);
  out.stderr_ = std::sqrt(var / static_cast<double>(n));
  return out;
}

// Runs fn(j) for j in [0, count) over n_threads workers on contiguous index
// ranges; output slots must be preallocated by the caller so the schedule
// cannot influence the result.
template <typename Fn>
inline void parallel_for_index(int64_t count, int n_threads, Fn&& fn) {
  n_threads = std::clamp<int64_t>(n_threads, 1, std::min<int64_t>(64, count));
  if (n_threads <= 1) {
    for (int64_t j = 0; j < count; ++j) fn(j);
    return;
  }
  const int64_t chunk = (count + n_threads - 1) / n_threads;
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n_threads));
  for (int w = 0; w < n_threads; ++w) {
    const int64_t lo = w * chunk, hi = std::min<int64_t>(count, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&, w, lo, hi] {
      try {
        for (int64_t j = lo; j < hi; ++j) fn(j);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct TimeGrid {
  double T = 0.0;
  std::vector<double> times;  // 0 = t_0 < t_1 < ... < t_m = T

  int step_count() const { return static_cast<int>(times.size()) - 1; }

  static TimeGrid uniform(double T, int steps) {
    require(T > 0.0 && std::isfinite(T) && steps >= 1, errc::invalid_argument,
            "uniform grid needs T > 0 and steps >= 1");
    TimeGrid g;
    g.T = T;
    g.times.resize(static_cast<size_t>(steps) + 1);
    const double h = T / steps;
    for (int i = 0; i < steps; ++i) g.times[static_cast<size_t>(i)] = i * h;
    g.times.back() = T;
    return g;
  }

  int index_of(double t) const {
    const double slop = 1e-9 * std::max(1.0, T);
    auto it = std::lower_bound(times.begin(), times.end(), t - slop);
    require(it != times.end() && std::abs(*it - t) <= slop,
            errc::invalid_argument,
            "time " + std::to_string(t) + " is not a grid time");
    return static_cast<int>(it - times.begin());
  }
};

inline TimeGrid make_time_grid(std::vector<double> times) {
  require(times.size() >= 2 && times.front() == 0.0, errc::invalid_argument,
          "grid must start at 0 and contain at least one step");
  for (size_t i = 1; i < times.size(); ++i)
    require(std::isfinite(times[i]) && times[i] > times[i - 1],
            errc::invalid_argument, "grid times must strictly increase");
  TimeGrid g;
  g.T = times.back();
  g.times = std::move(times);
  return g;
}

// Constraint sets: axis-aligned boxes, centered balls, or no constraint.
struct Box {
  Vec lo, hi;
};
struct Ball {
  Vec center;
  double radius = 0.0;
};
struct WholeSpace {};
using Region = std::variant<Box, Ball, WholeSpace>;

inline bool region_contains(const Region& r, const Vec& v) {
  if (std::holds_alternative<WholeSpace>(r)) return true;
  if (const auto* b = std::get_if<Box>(&r)) {
    require(b->lo.size() == v.size() && b->hi.size() == v.size(),
            errc::dimension_mismatch, "box dimension mismatch");
    return (v.array() >= b->lo.array()).all() &&
           (v.array() <= b->hi.array()).all();
  }
  const auto& ball = std::get<Ball>(r);
  require(ball.center.size() == v.size(), errc::dimension_mismatch,
          "ball dimension mismatch");
  return (v - ball.center).norm() <= ball.radius;
}

// Cylinder event: finitely many interior-time constraints plus a terminal set.
struct CylinderSpec {
  std::vector<std::pair<double, Region>> constraints;
  Region terminal = WholeSpace{};
};

struct PathSample {
  std::vector<Vec> values;  // one point per grid time; values[0] = x
  double log_weight = 0.0;
};

struct PathEnsemble {
  TimeGrid grid;
  Vec x;
  std::vector<PathSample> samples;
  uint64_t seed = 0;
  OperatorSet ops;
  double acceptance_rate = 1.0;  // < 1 only for rejection-conditioned runs
};

namespace detail {

// Per-step transition data: y_i = A xi + R y_{i-1} with xi standard normal,
// weight increment log s - 1/2 (P y_{i-1}, y_{i-1}).
struct StepKernel {
  double log_s = 0.0;
  SymMatrix P;
  SymMatrix Q;
  Mat R;
  Mat A;  // A A^T = Q
};

inline EvolutionState step_state(const OperatorSet& ops, double dt) {
  if (ops.c_is_zero()) return closed_form_C0(ops, dt);
  if (ops.d_is_zero()) return closed_form_D0(ops, dt);
  IntegrationControl ctl;
  ctl.steps = 400;
  return integrate(ops, dt, ctl).back();
}

// One kernel per grid step; distinct step lengths (bit-for-bit) computed once.
inline std::vector<StepKernel> build_step_kernels(const OperatorSet& ops,
                                                  const TimeGrid& grid) {
  std::map<uint64_t, StepKernel> cache;
  std::vector<StepKernel> out;
  out.reserve(static_cast<size_t>(grid.step_count()));
  for (int i = 1; i <= grid.step_count(); ++i) {
    const double dt = grid.times[static_cast<size_t>(i)] -
                      grid.times[static_cast<size_t>(i - 1)];
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(dt));
    std::memcpy(&bits, &dt, sizeof(bits));
    auto it = cache.find(bits);
    if (it == cache.end()) {
      const EvolutionState st = step_state(ops, dt);
      StepKernel k;
      k.log_s = std::log(st.s);
      k.P = st.P;
      k.Q = st.Q;
      k.R = st.R;
      require(sym_spectral_norm(st.Q.m) > 0.0, errc::degenerate_step,
              "step covariance vanished (dt=" + std::to_string(dt) +
                  "): grid step too small or B degenerate");
      k.A = psd_factor(st.Q);
      it = cache.emplace(bits, std::move(k)).first;
    }
    out.push_back(it->second);
  }
  return out;
}

// Walks one path, calling visit(i, y_i) for i = 1..m. Streams are addressed
// (seed, sample_id, step), so the walk is identical no matter who runs it.
template <typename Visit>
inline void walk_path(const std::vector<StepKernel>& steps, const Vec& x,
                      uint64_t seed, uint64_t sample_id, bool weighted,
                      double& log_weight, Visit&& visit) {
  Vec y = x;
  Vec xi(x.size());
  log_weight = 0.0;
  for (size_t i = 0; i < steps.size(); ++i) {
    const StepKernel& k = steps[i];
    NormalStream g(seed, sample_id, i + 1);
    g.fill_normal(xi);
    if (weighted) log_weight += k.log_s - 0.5 * quad_form(k.P, y);
    y = k.A * xi + k.R * y;
    visit(i + 1, y);
  }
}

}  // namespace detail

// Draws N discretized paths started at x: y_i ~ Gamma(Q(dt_i), R(dt_i) y_{i-1})
// per step, with the mass/damping factors accumulated into log-weights. For
// C = 0 the family is a probability measure and every log-weight is exactly 0.
inline PathEnsemble sample_paths(const OperatorSet& ops, const Vec& x,
                                 const TimeGrid& grid, int64_t N,
                                 uint64_t seed, int n_threads = 1) {
  require(ops.alpha == 0.0, errc::alpha_nonzero,
          "path measure is defined for alpha = 0");
  require(x.size() == ops.n, errc::dimension_mismatch, "x dimension mismatch");
  require(N >= 1, errc::invalid_argument, "need N >= 1");
  const auto steps = detail::build_step_kernels(ops, grid);
  const bool weighted = !ops.c_is_zero();

  PathEnsemble ens;
  ens.grid = grid;
  ens.x = x;
  ens.seed = seed;
  ens.ops = ops;
  ens.samples.resize(static_cast<size_t>(N));

  parallel_for_index(N, n_threads, [&](int64_t j) {
    PathSample& ps = ens.samples[static_cast<size_t>(j)];
    ps.values.assign(steps.size() + 1, Vec());
    ps.values[0] = x;
    detail::walk_path(steps, x, seed, static_cast<uint64_t>(j), weighted,
                      ps.log_weight,
                      [&](size_t i, const Vec& y) { ps.values[i] = y; });
  });
  return ens;
}

struct CylinderEstimate {
  double estimate = 0.0;
  double stderr_ = 0.0;
  int64_t n_effective = 0;
};

// Monte Carlo mass of a cylinder event under the ensemble's weighted path
// measure: mean over samples of exp(log_weight) * product of indicators.
inline CylinderEstimate cylinder_mass(const PathEnsemble& ens,
                                      const CylinderSpec& spec) {
  const int m = ens.grid.step_count();
  std::vector<std::pair<int, const Region*>> at;
  at.reserve(spec.constraints.size());
  for (const auto& [t, region] : spec.constraints) {
    const int idx = ens.grid.index_of(t);
    require(idx > 0 && idx < m, errc::invalid_argument,
            "constraint times must lie strictly inside (0, T)");
    at.emplace_back(idx, &region);
  }

  std::vector<double> contrib(ens.samples.size(), 0.0);
  int64_t hits = 0;
  for (size_t j = 0; j < ens.samples.size(); ++j) {
    const PathSample& ps = ens.samples[j];
    bool in = region_contains(spec.terminal, ps.values.back());
    for (const auto& [idx, region] : at)
      in = in && region_contains(*region, ps.values[static_cast<size_t>(idx)]);
    if (!in) continue;
    ++hits;
    contrib[j] = std::exp(ps.log_weight);
  }
  require(hits > 0, errc::empty_acceptance,
          "no path satisfies the cylinder constraints; standard error "
          "undefined");
  const MeanStderr ms = mean_stderr(contrib);
  return CylinderEstimate{ms.mean, ms.stderr_, hits};
}

// Terminal condition for bridge sampling: an exact pin, a random pin drawn
// from a Gaussian, or membership in a region (rejection fallback).
using EndpointCondition = std::variant<Vec, GaussianMeasure, Region>;

namespace detail {

inline Mat clamped_psd_factor(const Mat& sym, double scale) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(sym));
  require(es.info() == Eigen::Success, errc::not_psd, "eigensolver failed");
  Vec lam = es.eigenvalues();
  for (int i = 0; i < lam.size(); ++i) {
    require(lam[i] >= -tol::psd_rel * scale, errc::psd_lost,
            "bridge covariance indefinite");
    lam[i] = std::sqrt(std::max(lam[i], 0.0));
  }
  return es.eigenvectors() * lam.asDiagonal();
}

}  // namespace detail

// Samples paths conditioned on the endpoint. C = 0 only: there the joint law
// of the grid values is Gaussian and the bridge factorizes step by step —
// given y at t_{i-1} and the pin z at T, with
//   G_i = Q(T - t_{i-1}),  Phi_i = R(T - t_i),
// the next value is Gaussian with
//   mean = R_i y + Q_i Phi_i^T G_i^{-1} (z - Phi_i R_i y)
//   cov  = Q_i - Q_i Phi_i^T G_i^{-1} Phi_i Q_i.
// A Gaussian terminal law draws z per sample first; a Region terminal falls
// back to rejection with the acceptance rate reported on the ensemble.
inline PathEnsemble condition_endpoint(const OperatorSet& ops, const Vec& x,
                                       const TimeGrid& grid, int64_t N,
                                       uint64_t seed,
                                       const EndpointCondition& terminal,
                                       int n_threads = 1) {
  require(ops.c_is_zero(), errc::bridge_unavailable,
          "exact endpoint conditioning needs C = 0");
  require(ops.alpha == 0.0, errc::alpha_nonzero,
          "path measure is defined for alpha = 0");
  require(x.size() == ops.n, errc::dimension_mismatch, "x dimension mismatch");
  require(N >= 1, errc::invalid_argument, "need N >= 1");
  const auto steps = detail::build_step_kernels(ops, grid);
  const int m = grid.step_count();

  PathEnsemble ens;
  ens.grid = grid;
  ens.x = x;
  ens.seed = seed;
  ens.ops = ops;
  ens.samples.resize(static_cast<size_t>(N));

  if (const Region* region = std::get_if<Region>(&terminal)) {
    // Rejection: each slot walks its own attempt sequence, so the result is
    // still schedule-independent.
    const uint64_t budget = std::min<uint64_t>(
        200000, (uint64_t{1} << 32) / static_cast<uint64_t>(N));
    require(budget >= 1000, errc::invalid_argument,
            "N too large for rejection conditioning");
    std::vector<int64_t> attempts(static_cast<size_t>(N), 0);
    parallel_for_index(N, n_threads, [&](int64_t j) {
      PathSample& ps = ens.samples[static_cast<size_t>(j)];
      ps.values.assign(static_cast<size_t>(m) + 1, Vec());
      ps.values[0] = x;
      for (uint64_t a = 0; a < budget; ++a) {
        const uint64_t sid = static_cast<uint64_t>(j) * budget + a;
        double lw = 0.0;
        detail::walk_path(steps, x, seed, sid, false, lw,
                          [&](size_t i, const Vec& y) { ps.values[i] = y; });
        if (region_contains(*region, ps.values.back())) {
          attempts[static_cast<size_t>(j)] = static_cast<int64_t>(a) + 1;
          return;
        }
      }
      attempts[static_cast<size_t>(j)] = -1;
    });
    int64_t total = 0;
    for (int64_t a : attempts) {
      require(a > 0, errc::low_acceptance,
              "terminal region acceptance below 1e-4");
      total += a;
    }
    ens.acceptance_rate = static_cast<double>(N) / static_cast<double>(total);
    require(ens.acceptance_rate >= 1e-4, errc::low_acceptance,
            "terminal region acceptance below 1e-4");
    return ens;
  }

  // Exact bridge. Tail data per step; the last step is the pin itself.
  std::vector<Mat> gain(static_cast<size_t>(m)), factor(static_cast<size_t>(m)),
      phi_r(static_cast<size_t>(m));
  for (int i = 1; i < m; ++i) {
    const double tail_prev = grid.T - grid.times[static_cast<size_t>(i - 1)];
    const double tail_here = grid.T - grid.times[static_cast<size_t>(i)];
    const SymMatrix G = detail::step_state(ops, tail_prev).Q;
    const Mat Phi = detail::step_state(ops, tail_here).R;
    Eigen::SelfAdjointEigenSolver<Mat> es(G.m);
    require(es.info() == Eigen::Success, errc::singular_covariance,
            "eigensolver failed on pinning covariance");
    const Vec& lam = es.eigenvalues();
    require(lam.maxCoeff() > 0.0 &&
                lam.minCoeff() > lam.maxCoeff() / tol::cov_condition_limit,
            errc::singular_covariance,
            "pinning covariance singular; refine the grid or check B");
    const Mat Ginv = es.eigenvectors() *
                     lam.cwiseInverse().asDiagonal() *
                     es.eigenvectors().transpose();
    const detail::StepKernel& k = steps[static_cast<size_t>(i - 1)];
    const Mat PhiQ = Phi * k.Q.m;
    gain[static_cast<size_t>(i - 1)] = PhiQ.transpose() * Ginv;
    factor[static_cast<size_t>(i - 1)] = detail::clamped_psd_factor(
        k.Q.m - PhiQ.transpose() * Ginv * PhiQ, sym_spectral_norm(k.Q.m));
    phi_r[static_cast<size_t>(i - 1)] = Phi * k.R;
  }

  const Vec* pin = std::get_if<Vec>(&terminal);
  const GaussianMeasure* glaw = std::get_if<GaussianMeasure>(&terminal);
  Mat z_factor;
  if (pin) {
    require(pin->size() == ops.n, errc::dimension_mismatch,
            "terminal point dimension mismatch");
  } else {
    require(glaw->dim() == ops.n, errc::dimension_mismatch,
            "terminal law dimension mismatch");
    z_factor = psd_factor(glaw->cov);
  }

  parallel_for_index(N, n_threads, [&](int64_t j) {
    PathSample& ps = ens.samples[static_cast<size_t>(j)];
    ps.values.assign(static_cast<size_t>(m) + 1, Vec());
    ps.values[0] = x;
    Vec z;
    if (pin) {
      z = *pin;
    } else {
      Vec xi(ops.n);
      NormalStream g(seed, static_cast<uint64_t>(j), static_cast<uint64_t>(m));
      g.fill_normal(xi);
      z = glaw->mean + z_factor * xi;
    }
    Vec y = x;
    Vec xi(ops.n);
    for (int i = 1; i < m; ++i) {
      const detail::StepKernel& k = steps[static_cast<size_t>(i - 1)];
      NormalStream g(seed, static_cast<uint64_t>(j), static_cast<uint64_t>(i));
      g.fill_normal(xi);
      const Vec mean = k.R * y +
                       gain[static_cast<size_t>(i - 1)] *
                           (z - phi_r[static_cast<size_t>(i - 1)] * y);
      y = mean + factor[static_cast<size_t>(i - 1)] * xi;
      ps.values[static_cast<size_t>(i)] = y;
    }
    ps.values[static_cast<size_t>(m)] = z;
  });
  return ens;
}

// One scalar observable of the path: the component <f(time), direction>.
struct LinearFunctional {
  double time = 0.0;
  Vec direction;
};

struct FunctionalCheck {
  std::string label;
  double worst_z = 0.0;  // max over probe frequencies of deviation / sigma
  bool pass = false;
};

struct GaussianityReport {
  bool pass = false;
  bool insufficient_n = false;
  double worst_z = 0.0;
  std::vector<FunctionalCheck> checks;
};

namespace detail {

// Compares the empirical characteristic function of the scalars u against
// the Gaussian fit exp(i w mu - w^2 sigma^2 / 2) at probe frequencies
// w = k / (2 sigma). The tolerance combines the Monte Carlo error of the
// empirical CF with the propagated uncertainty of the fitted (mu, sigma).
inline FunctionalCheck scalar_gaussianity(const std::vector<double>& u,
                                          std::string label) {
  FunctionalCheck chk;
  chk.label = std::move(label);
  const double n = static_cast<double>(u.size());
  std::vector<double> tmp(u);
  const double mu = pairwise_sum(tmp) / n;
  for (size_t i = 0; i < tmp.size(); ++i) tmp[i] = (u[i] - mu) * (u[i] - mu);
  const double sigma2 = pairwise_sum(tmp) / (n - 1.0);
  const double sigma = std::sqrt(sigma2);
  if (sigma == 0.0) {  // constant scalars: a point mass, trivially Gaussian
    chk.pass = true;
    return chk;
  }
  for (int k = 1; k <= 6; ++k) {
    const double w = 0.5 * k / sigma;
    cplx emp = 0.0;
    for (double v : u) emp += std::exp(cplx(0.0, w * v));
    emp /= n;
    const cplx fit = std::exp(cplx(-0.5 * w * w * sigma2, w * mu));
    const double dev = std::abs(emp - fit);
    const double sig =
        std::sqrt(std::max(0.0, 1.0 - std::norm(emp)) / n) +
        std::abs(fit) * (w * sigma + w * w * sigma2 / std::numbers::sqrt2) /
            std::sqrt(n) +
        1e-3 / std::sqrt(n);
    chk.worst_z = std::max(chk.worst_z, dev / sig);
  }
  chk.pass = chk.worst_z <= 3.5;
  return chk;
}

}  // namespace detail

// Statistical check that the listed linear functionals of an unweighted
// (C = 0) ensemble are Gaussian, including pairwise joint Gaussianity via
// the two rotated combinations (u +- v)/sqrt(2).
inline GaussianityReport gaussianity_check(
    const PathEnsemble& ens, const std::vector<LinearFunctional>& functionals) {
  require(ens.ops.c_is_zero(), errc::invalid_argument,
          "gaussianity applies to the unweighted (C = 0) ensemble");
  GaussianityReport rep;
  if (ens.samples.size() < 100) {
    rep.insufficient_n = true;
    return rep;
  }

  std::vector<std::vector<double>> scalars;
  for (const LinearFunctional& f : functionals) {
    const int idx = ens.grid.index_of(f.time);
    require(f.direction.size() == ens.ops.n, errc::dimension_mismatch,
            "functional direction dimension mismatch");
    std::vector<double> u(ens.samples.size());
    for (size_t j = 0; j < u.size(); ++j)
      u[j] = ens.samples[j].values[static_cast<size_t>(idx)].dot(f.direction);
    scalars.push_back(std::move(u));
  }

  auto push = [&](FunctionalCheck chk) {
    rep.worst_z = std::max(rep.worst_z, chk.worst_z);
    rep.checks.push_back(std::move(chk));
  };
  for (size_t a = 0; a < scalars.size(); ++a)
    push(detail::scalar_gaussianity(scalars[a],
                                    "functional " + std::to_string(a)));
  for (size_t a = 0; a < scalars.size(); ++a)
    for (size_t b = a + 1; b < scalars.size(); ++b) {
      std::vector<double> plus(scalars[a].size()), minus(scalars[a].size());
      for (size_t j = 0; j < plus.size(); ++j) {
        plus[j] = (scalars[a][j] + scalars[b][j]) / std::numbers::sqrt2;
        minus[j] = (scalars[a][j] - scalars[b][j]) / std::numbers::sqrt2;
      }
      push(detail::scalar_gaussianity(
          plus, "pair +" + std::to_string(a) + "," + std::to_string(b)));
      push(detail::scalar_gaussianity(
          minus, "pair -" + std::to_string(a) + "," + std::to_string(b)));
    }

  rep.pass = !rep.checks.empty();
  for (const auto& c : rep.checks) rep.pass = rep.pass && c.pass;
  return rep;
}

}  // namespace mehler
