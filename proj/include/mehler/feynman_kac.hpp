#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mehler/paths.hpp"

namespace mehler {

// Declared growth envelope of a potential: |V(t,x)| <= c1 exp(sqrt(|x|)) and
// V(t,x) <= c2 (1 + |x|^r) with r in [0,2]. The asymptotic hypotheses behind
// these cannot be confirmed by finitely many probes — the validator below can
// only refute a declaration, never certify it.
struct GrowthDeclaration {
  double c1 = 1.0;
  double c2 = 1.0;
  double r = 0.0;
};

// V(t,x) = -1/2 (Cv x, x) + c0. The damping sign makes this the potential
// whose weighted path average reproduces a C = Cv kernel mass.
struct QuadraticPotential {
  SymMatrix Cv;
  double c0 = 0.0;
};

// V(t,x) = v0 cos((k, x)): bounded, r = 0.
struct CosinePotential {
  double v0 = 0.0;
  Vec k;
};

// Arbitrary host-registered evaluator; the growth declaration is the
// caller's claim.
struct TabulatedPotential {
  std::function<double(double, const Vec&)> f;
};

struct Potential {
  std::variant<QuadraticPotential, CosinePotential, TabulatedPotential> kind;
  GrowthDeclaration growth;

  double operator()(double t, const Vec& x) const {
    if (const auto* q = std::get_if<QuadraticPotential>(&kind)) {
      require(x.size() == q->Cv.dim(), errc::dimension_mismatch,
              "potential dimension mismatch");
      return -0.5 * quad_form(q->Cv, x) + q->c0;
    }
    if (const auto* c = std::get_if<CosinePotential>(&kind)) {
      require(x.size() == c->k.size(), errc::dimension_mismatch,
              "potential dimension mismatch");
      return c->v0 * std::cos(c->k.dot(x));
    }
    return std::get<TabulatedPotential>(kind).f(t, x);
  }
};

inline Potential make_quadratic_potential(const Mat& Cv, double c0) {
  QuadraticPotential q;
  q.Cv = sym_checked(Cv, "Cv");
  require_psd(q.Cv, "Cv");
  require(std::isfinite(c0), errc::invalid_argument, "c0 not finite");
  q.c0 = c0;
  const double norm = sym_spectral_norm(q.Cv.m);
  Potential V;
  V.kind = std::move(q);
  // c1 covers 1/2 |Cv| u^2 + |c0| against exp(sqrt(u)) out to the probe range
  V.growth = GrowthDeclaration{std::abs(c0) + 3.0 * norm + 1.0,
                               std::abs(c0) + 1.0, 2.0};
  return V;
}

inline Potential make_cosine_potential(double v0, Vec k) {
  require(std::isfinite(v0) && k.allFinite(), errc::invalid_argument,
          "cosine potential parameters not finite");
  Potential V;
  V.kind = CosinePotential{v0, std::move(k)};
  V.growth = GrowthDeclaration{std::abs(v0) + 1.0, std::abs(v0) + 1.0, 0.0};
  return V;
}

inline Potential make_tabulated_potential(
    std::function<double(double, const Vec&)> f, GrowthDeclaration growth) {
  require(static_cast<bool>(f), errc::invalid_argument,
          "tabulated potential needs a callable");
  require(growth.r >= 0.0 && growth.r <= 2.0, errc::invalid_argument,
          "growth exponent r must lie in [0, 2]");
  Potential V;
  V.kind = TabulatedPotential{std::move(f)};
  V.growth = growth;
  return V;
}

struct PotentialReport {
  int64_t probes = 0;
  int64_t envelope_violations = 0;  // |V| vs c1 exp(sqrt(|x|))
  int64_t growth_violations = 0;    // V vs c2 (1 + |x|^r)
  double worst_envelope_ratio = 0.0;
  double worst_growth_excess = 0.0;
  bool refuted = false;
};

// Probes random (t, x) with |x| up to 10 against the declared envelopes.
// Report-only: a clean report is evidence, not proof.
inline PotentialReport validate_potential(const Potential& V, int n,
                                          int64_t probes, uint64_t seed) {
  require(n >= 1 && probes >= 1, errc::invalid_argument,
          "need a dimension and at least one probe");
  PotentialReport rep;
  rep.probes = probes;
  Vec x(n);
  for (int64_t p = 0; p < probes; ++p) {
    NormalStream g(seed, static_cast<uint64_t>(p), 0);
    const double t = 2.0 * g.next_uniform();
    g.fill_normal(x);
    const double nrm = x.norm();
    if (nrm > 0.0) x *= (10.0 * g.next_uniform()) / nrm;
    const double v = V(t, x);
    const double u = x.norm();
    const double envelope = V.growth.c1 * std::exp(std::sqrt(u));
    const double growth = V.growth.c2 * (1.0 + std::pow(u, V.growth.r));
    if (!(std::abs(v) <= envelope)) {
      ++rep.envelope_violations;
      rep.worst_envelope_ratio =
          std::max(rep.worst_envelope_ratio, std::abs(v) / envelope);
    }
    if (!(v <= growth)) {
      ++rep.growth_violations;
      rep.worst_growth_excess = std::max(rep.worst_growth_excess, v - growth);
    }
  }
  rep.refuted = rep.envelope_violations > 0 || rep.growth_violations > 0;
  return rep;
}

// Trapezoidal quadrature of u -> V(u, q(u)) along the grid skeleton.
inline double log_path_integral_weight(const PathSample& path,
                                       const Potential& V,
                                       const TimeGrid& grid) {
  require(path.values.size() == grid.times.size(), errc::dimension_mismatch,
          "path does not match the grid");
  double acc = 0.0;
  double prev = V(grid.times[0], path.values[0]);
  for (size_t i = 1; i < grid.times.size(); ++i) {
    const double cur = V(grid.times[i], path.values[i]);
    acc += 0.5 * (grid.times[i] - grid.times[i - 1]) * (prev + cur);
    prev = cur;
  }
  return acc;
}

inline double path_integral_weight(const PathSample& path, const Potential& V,
                                   const TimeGrid& grid) {
  const double l = log_path_integral_weight(path, V, grid);
  require(l <= tol::log_weight_overflow, errc::weight_overflow,
          "path weight exp(" + std::to_string(l) + ") overflows");
  return std::exp(l);
}

struct FKEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  int64_t N = 0;
  TimeGrid grid;
  uint64_t seed = 0;
  double overflow_fraction = 0.0;
};

// Bounded continuous test functions for weak-solution estimates, plus the
// constant and indicator conveniences the reports use.
struct ConstantOne {};
struct IndicatorFn {
  Region region;
};
struct FourierRe {
  Vec y;
};
struct FourierIm {
  Vec y;
};
using TestFunction = std::variant<ConstantOne, IndicatorFn, FourierRe, FourierIm>;

inline double evaluate(const TestFunction& f, const Vec& v) {
  if (std::holds_alternative<ConstantOne>(f)) return 1.0;
  if (const auto* ind = std::get_if<IndicatorFn>(&f))
    return region_contains(ind->region, v) ? 1.0 : 0.0;
  if (const auto* re = std::get_if<FourierRe>(&f)) return std::cos(re->y.dot(v));
  return std::sin(std::get<FourierIm>(f).y.dot(v));
}

namespace detail {

// Start-point law for the outer Monte Carlo loop.
struct FkStart {
  const Vec* fixed = nullptr;
  const GaussianMeasure* gauss = nullptr;
  const WeightedPointMixture* mix = nullptr;
  Mat gauss_factor;
  std::vector<double> cdf;  // normalized cumulative mixture weights
  double total_mass = 1.0;

  Vec draw(uint64_t seed, uint64_t sample) const {
    if (fixed) return *fixed;
    NormalStream g(seed, sample, 0);
    if (gauss) {
      Vec xi(gauss->mean.size());
      g.fill_normal(xi);
      return gauss->mean + gauss_factor * xi;
    }
    const double u = g.next_uniform();
    const size_t idx = static_cast<size_t>(
        std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    return mix->points[std::min(idx, mix->points.size() - 1)];
  }
};

struct FkConfig {
  const OperatorSet* ops;
  const Potential* V;
  const std::vector<TestFunction>* fs;
  const TimeGrid* grid;
  int64_t N;
  uint64_t seed;
  int n_threads;
  bool weighted_base;  // experimental C != 0 base measure
};

inline std::vector<FKEstimate> fk_run(const FkConfig& cfg,
                                      const FkStart& start) {
  const auto steps = build_step_kernels(*cfg.ops, *cfg.grid);
  const size_t nf = cfg.fs->size();
  std::vector<std::vector<double>> contrib(
      nf, std::vector<double>(static_cast<size_t>(cfg.N), 0.0));
  std::vector<double> overflow_flags(static_cast<size_t>(cfg.N), 0.0);

  parallel_for_index(cfg.N, cfg.n_threads, [&](int64_t j) {
    const Vec x0 = start.draw(cfg.seed, static_cast<uint64_t>(j));
    double lw = 0.0;
    double acc = 0.0;
    double prev_v = (*cfg.V)(cfg.grid->times[0], x0);
    Vec terminal = x0;
    walk_path(steps, x0, cfg.seed, static_cast<uint64_t>(j), cfg.weighted_base,
              lw, [&](size_t i, const Vec& y) {
                const double cur_v = (*cfg.V)(cfg.grid->times[i], y);
                acc += 0.5 * (cfg.grid->times[i] - cfg.grid->times[i - 1]) *
                       (prev_v + cur_v);
                prev_v = cur_v;
                if (i == steps.size()) terminal = y;
              });
    const double log_total = lw + acc;
    if (log_total > tol::log_weight_overflow) {
      overflow_flags[static_cast<size_t>(j)] = 1.0;
      return;  // contributes zero; counted in overflow_fraction
    }
    const double w = std::exp(log_total);
    for (size_t k = 0; k < nf; ++k)
      contrib[k][static_cast<size_t>(j)] = w * evaluate((*cfg.fs)[k], terminal);
  });

  const double overflow_fraction =
      pairwise_sum(overflow_flags) / static_cast<double>(cfg.N);
  std::vector<FKEstimate> out;
  out.reserve(nf);
  for (size_t k = 0; k < nf; ++k) {
    const MeanStderr ms = mean_stderr(contrib[k]);
    FKEstimate est;
    est.value = start.total_mass * ms.mean;
    est.stderr_ = start.total_mass * ms.stderr_;
    est.N = cfg.N;
    est.grid = *cfg.grid;
    est.seed = cfg.seed;
    est.overflow_fraction = overflow_fraction;
    out.push_back(std::move(est));
  }
  return out;
}

inline void check_fk_base(const OperatorSet& ops, bool weighted_base) {
  require(ops.alpha == 0.0, errc::alpha_nonzero,
          "base path measure is defined for alpha = 0");
  if (!weighted_base)
    require(ops.c_is_zero(), errc::c_not_zero,
            "base path measure needs C = 0 (pass weighted_base to override "
            "experimentally)");
}

}  // namespace detail

// [G^V_x(t)](A): mean over paths started at x of exp{int_0^t V(u, q(u)) du}
// restricted to terminal set A. Unbiased for the grid-discretized functional;
// samples whose weight overflows are dropped and reported.
inline FKEstimate fk_kernel_mass(const OperatorSet& ops, const Potential& V,
                                 const Vec& x, double t, const Region& A,
                                 int64_t N, const TimeGrid& grid,
                                 uint64_t seed, int n_threads = 1,
                                 bool weighted_base = false) {
  detail::check_fk_base(ops, weighted_base);
  require(x.size() == ops.n, errc::dimension_mismatch, "x dimension mismatch");
  require(std::abs(grid.T - t) <= 1e-12 * std::max(1.0, t),
          errc::invalid_argument, "grid horizon must equal t");
  require(N >= 100, errc::invalid_argument, "need N >= 100");

  std::vector<TestFunction> fs{IndicatorFn{A}};
  detail::FkStart start;
  start.fixed = &x;
  detail::FkConfig cfg{&ops, &V, &fs, &grid, N, seed, n_threads, weighted_base};
  return detail::fk_run(cfg, start).front();
}

// Weak-solution estimates int f d nu(t) for nu(t) = int G^V_x(t) nu0(dx):
// outer loop samples x ~ nu0, inner loop runs the weighted paths. For r = 2
// the terminal moment condition int exp(|x|^2) nu0(dx) < infinity forces the
// initial Gaussian covariance below 1/2.
inline std::vector<FKEstimate> fk_evolve(
    const OperatorSet& ops, const Potential& V, const InitialMeasure& nu0,
    double t, const std::vector<TestFunction>& test_functions, int64_t N,
    const TimeGrid& grid, uint64_t seed, int n_threads = 1,
    bool weighted_base = false) {
  detail::check_fk_base(ops, weighted_base);
  require(initial_dim(nu0) == ops.n, errc::dimension_mismatch,
          "initial measure dimension mismatch");
  require(std::abs(grid.T - t) <= 1e-12 * std::max(1.0, t),
          errc::invalid_argument, "grid horizon must equal t");
  require(N >= 1 && !test_functions.empty(), errc::invalid_argument,
          "need N >= 1 and at least one test function");

  detail::FkStart start;
  if (const auto* g = std::get_if<GaussianMeasure>(&nu0)) {
    if (V.growth.r >= 2.0) {
      const double top = sym_spectral_norm(g->cov.m);
      require(top < 0.5, errc::moment_condition_violated,
              "r = 2 needs initial Gaussian covariance below 1/2 (largest "
              "eigenvalue " +
                  std::to_string(top) + ")");
    }
    start.gauss = g;
    start.gauss_factor = psd_factor(g->cov);
  } else {
    const auto& mix = std::get<WeightedPointMixture>(nu0);
    start.mix = &mix;
    double total = 0.0;
    for (double w : mix.weights) total += w;
    start.total_mass = total;
    start.cdf.reserve(mix.weights.size());
    double run = 0.0;
    for (double w : mix.weights) {
      run += w / total;
      start.cdf.push_back(run);
    }
    start.cdf.back() = 1.0;
  }

  detail::FkConfig cfg{&ops,   &V,   &test_functions, &grid,
                       N,      seed, n_threads,       weighted_base};
  return detail::fk_run(cfg, start);
}

}  // namespace mehler
