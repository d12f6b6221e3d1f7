#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mehler/feynman_kac.hpp"
#include "mehler/riccati.hpp"
#include "support/oracles.hpp"

using namespace mehler;

namespace {

OperatorSet bm_ops(int n) {
  return validate_operator_set(Mat::Identity(n, n), Mat::Zero(n, n),
                               Mat::Zero(n, n), 0.0);
}

double absorbed_mass(double b, double c, double c0, double t, double x) {
  // reference: potential -c x^2/2 + c0 folded into the flow as C = c,
  // alpha = c0, then mass = s(t) exp(-P(t) x^2 / 2)
  Mat B(1, 1), C(1, 1);
  B << b;
  C << c;
  const OperatorSet ops =
      validate_operator_set(B, C, Mat::Zero(1, 1), c0);
  const EvolutionState st = closed_form_D0(ops, t);
  return st.s * std::exp(-0.5 * st.P.m(0, 0) * x * x);
}

}  // namespace

TEST_CASE("potential validation accepts declared growth and refutes lies") {
  Mat Cv(2, 2);
  Cv << 1.0, 0.2, 0.2, 0.8;
  const Potential quad = make_quadratic_potential(Cv, 0.3);
  const PotentialReport r1 = validate_potential(quad, 2, 500, 11);
  CHECK_FALSE(r1.refuted);
  CHECK(r1.probes == 500);

  Vec k(2);
  k << 1.0, -2.0;
  const Potential cosine = make_cosine_potential(0.7, k);
  CHECK_FALSE(validate_potential(cosine, 2, 500, 12).refuted);

  // a potential that declares boundedness but grows quadratically
  GrowthDeclaration lie;
  lie.c1 = 1.0;
  lie.c2 = 1.0;
  lie.r = 0.0;
  const Potential liar = make_tabulated_potential(
      [](double, const Vec& x) { return x.squaredNorm(); }, lie);
  const PotentialReport r3 = validate_potential(liar, 2, 500, 13);
  CHECK(r3.refuted);
  CHECK(r3.growth_violations > 0);
}

TEST_CASE("trapezoid weight is exact for time-linear potentials") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 16);
  PathSample path;
  path.values.assign(17, Vec::Zero(1));
  const Potential constv = make_tabulated_potential(
      [](double, const Vec&) { return 0.37; }, GrowthDeclaration{1.4, 1.4, 0.0});
  CHECK(log_path_integral_weight(path, constv, grid) ==
        Catch::Approx(0.37).epsilon(1e-15));

  const Potential linear = make_tabulated_potential(
      [](double t, const Vec&) { return t; }, GrowthDeclaration{2.0, 2.0, 0.0});
  // integral of t over [0, 1] is 1/2, and the trapezoid rule is exact
  CHECK(log_path_integral_weight(path, linear, grid) ==
        Catch::Approx(0.5).epsilon(1e-14));
  CHECK(path_integral_weight(path, linear, grid) ==
        Catch::Approx(std::exp(0.5)).epsilon(1e-14));
}

TEST_CASE("trapezoid weight converges at second order along a smooth path") {
  const Potential V = make_cosine_potential(1.0, Vec::Ones(1));
  auto log_weight_on_grid = [&](int m) {
    const TimeGrid grid = TimeGrid::uniform(1.0, m);
    PathSample path;
    for (double t : grid.times) {
      Vec v(1);
      v << std::cos(3.0 * t);
      path.values.push_back(v);
    }
    return log_path_integral_weight(path, V, grid);
  };
  const double ref = log_weight_on_grid(4096);
  const double e8 = std::abs(log_weight_on_grid(8) - ref);
  const double e16 = std::abs(log_weight_on_grid(16) - ref);
  const double e32 = std::abs(log_weight_on_grid(32) - ref);
  CHECK(e8 / e16 == Catch::Approx(4.0).margin(1.2));
  CHECK(e16 / e32 == Catch::Approx(4.0).margin(1.2));
}

TEST_CASE("overflowing weights throw where the log survives") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 4);
  PathSample path;
  path.values.assign(5, Vec::Zero(1));
  const Potential hot = make_tabulated_potential(
      [](double, const Vec&) { return 800.0; },
      GrowthDeclaration{801.0, 801.0, 0.0});
  CHECK(log_path_integral_weight(path, hot, grid) == Catch::Approx(800.0));
  try {
    path_integral_weight(path, hot, grid);
    FAIL("expected an overflow error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::weight_overflow);
  }
}

TEST_CASE("quadratic potential mass matches the absorbed closed form") {
  const double c = 1.0, t = 0.75, x = 0.6;
  Mat Cv(1, 1);
  Cv << c;
  const Potential V = make_quadratic_potential(Cv, 0.0);
  Vec vx(1);
  vx << x;
  const TimeGrid grid = TimeGrid::uniform(t, 400);
  const FKEstimate est = fk_kernel_mass(bm_ops(1), V, vx, t, WholeSpace{},
                                        30000, grid, 98765);
  const double want = absorbed_mass(1.0, c, 0.0, t, x);
  CHECK(std::abs(est.value - want) < 3.0 * est.stderr_);
  CHECK(est.stderr_ / est.value < 0.02);
  CHECK(est.overflow_fraction == 0.0);
}

TEST_CASE("constant potential shift scales the mass exactly") {
  // V = c0 alone multiplies everything by e^{c0 t}; uses the same draws, so
  // the ratio is deterministic.
  Mat Z(1, 1);
  Z << 0.0;
  const Potential v0 = make_quadratic_potential(Z, 0.0);
  const Potential v1 = make_quadratic_potential(Z, 0.4);
  const TimeGrid grid = TimeGrid::uniform(0.5, 50);
  Vec x(1);
  x << 0.2;
  const FKEstimate a =
      fk_kernel_mass(bm_ops(1), v0, x, 0.5, WholeSpace{}, 2000, grid, 5);
  const FKEstimate b =
      fk_kernel_mass(bm_ops(1), v1, x, 0.5, WholeSpace{}, 2000, grid, 5);
  CHECK(b.value == Catch::Approx(std::exp(0.4 * 0.5) * a.value).epsilon(1e-12));
}

TEST_CASE("cosine potential against a tensor Gauss-Hermite oracle") {
  // two coarse steps keep the path integral low-dimensional enough for
  // deterministic quadrature over (xi_1, xi_2)
  const double t = 0.8, h = t / 2.0, x = 0.3;
  const Potential V = make_cosine_potential(0.9, Vec::Ones(1));
  auto v = [&](double y) { return 0.9 * std::cos(y); };

  std::vector<double> nodes, weights;
  oracle::gauss_hermite(60, nodes, weights);
  const double step_sd = std::sqrt(h);
  double expected = 0.0;
  for (size_t i = 0; i < nodes.size(); ++i) {
    const double y1 = x + std::sqrt(2.0) * step_sd * nodes[i];
    double inner = 0.0;
    for (size_t j = 0; j < nodes.size(); ++j) {
      const double y2 = y1 + std::sqrt(2.0) * step_sd * nodes[j];
      inner += weights[j] * std::exp(h * (v(y1) + 0.5 * v(y2)));
    }
    expected += weights[i] * inner;
  }
  expected *= std::exp(0.5 * h * v(x)) / M_PI;

  Vec vx(1);
  vx << x;
  const TimeGrid grid = TimeGrid::uniform(t, 2);
  const FKEstimate est =
      fk_kernel_mass(bm_ops(1), V, vx, t, WholeSpace{}, 40000, grid, 777);
  CHECK(std::abs(est.value - expected) < 3.0 * est.stderr_);
}

TEST_CASE("fk_evolve from a Gaussian start matches apply_to_initial") {
  const double c = 0.8, t = 0.6;
  Mat Cv(1, 1);
  Cv << c;
  const Potential V = make_quadratic_potential(Cv, 0.0);
  Vec m0(1);
  m0 << 0.5;
  Mat S0(1, 1);
  S0 << 0.3;  // max eigenvalue below the 1/2 threshold
  const InitialMeasure nu0 = make_gaussian_measure(m0, S0);

  Mat B(1, 1), C(1, 1);
  B << 1.0;
  C << c;
  const OperatorSet absorbed =
      validate_operator_set(B, C, Mat::Zero(1, 1), 0.0);
  const EvolvedMeasure ref =
      apply_to_initial(kernel_at(closed_form_D0(absorbed, t)), nu0);

  Vec w(1);
  w << 1.1;
  const std::vector<TestFunction> fns{ConstantOne{}, FourierRe{w},
                                      FourierIm{w}};
  const TimeGrid grid = TimeGrid::uniform(t, 300);
  const auto ests =
      fk_evolve(bm_ops(1), V, nu0, t, fns, 30000, grid, 1212);
  REQUIRE(ests.size() == 3);
  const cplx cf = ref.characteristic(w);
  CHECK(std::abs(ests[0].value - ref.total_mass()) < 3.0 * ests[0].stderr_);
  CHECK(std::abs(ests[1].value - cf.real()) < 3.0 * ests[1].stderr_);
  CHECK(std::abs(ests[2].value - cf.imag()) < 3.0 * ests[2].stderr_);
}

TEST_CASE("fk_evolve from a point mixture matches the per-atom masses") {
  const double c = 1.2, t = 0.5;
  Mat Cv(1, 1);
  Cv << c;
  const Potential V = make_quadratic_potential(Cv, 0.0);
  Vec p1(1), p2(1);
  p1 << -0.4;
  p2 << 0.9;
  const InitialMeasure nu0 = make_point_mixture({p1, p2}, {0.25, 0.75});
  const double want = 0.25 * absorbed_mass(1.0, c, 0.0, t, p1[0]) +
                      0.75 * absorbed_mass(1.0, c, 0.0, t, p2[0]);
  const TimeGrid grid = TimeGrid::uniform(t, 300);
  const auto ests = fk_evolve(bm_ops(1), V, nu0, t, {ConstantOne{}}, 30000,
                              grid, 808);
  CHECK(std::abs(ests[0].value - want) < 3.0 * ests[0].stderr_);
}

TEST_CASE("second-moment condition on Gaussian starts is enforced") {
  Mat Cv(1, 1);
  Cv << 1.0;
  const Potential V = make_quadratic_potential(Cv, 0.0);  // growth r = 2
  Mat S0(1, 1);
  S0 << 0.6;  // variance above the 1/2 threshold
  const InitialMeasure nu0 = make_gaussian_measure(Vec::Zero(1), S0);
  const TimeGrid grid = TimeGrid::uniform(0.5, 10);
  try {
    fk_evolve(bm_ops(1), V, nu0, 0.5, {ConstantOne{}}, 100, grid, 1);
    FAIL("expected a moment-condition error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::moment_condition_violated);
  }
}

TEST_CASE("weighted base flows are opt-in") {
  Mat B(1, 1), C(1, 1), Cv(1, 1);
  B << 1.0;
  C << 0.5;
  Cv << 0.7;
  const OperatorSet ops = validate_operator_set(B, C, Mat::Zero(1, 1), 0.0);
  const Potential V = make_quadratic_potential(Cv, 0.0);
  Vec x(1);
  x << 0.4;
  const TimeGrid grid = TimeGrid::uniform(0.6, 200);
  try {
    fk_kernel_mass(ops, V, x, 0.6, WholeSpace{}, 100, grid, 2);
    FAIL("expected a C != 0 refusal");
  } catch (const Error& e) {
    CHECK(e.code() == errc::c_not_zero);
  }
  // with the experimental flag the potential simply adds to the base tilt
  const FKEstimate est = fk_kernel_mass(ops, V, x, 0.6, WholeSpace{}, 30000,
                                        grid, 2, 1, true);
  const double want = absorbed_mass(1.0, 0.5 + 0.7, 0.0, 0.6, x[0]);
  CHECK(std::abs(est.value - want) < 3.0 * est.stderr_);
}

TEST_CASE("zero potential reduces to the cylinder estimator bit for bit") {
  Mat Z(1, 1);
  Z << 0.0;
  const Potential V = make_quadratic_potential(Z, 0.0);
  Vec lo(1), hi(1);
  lo << 0.0;
  hi << 1e12;
  const Region A = Box{lo, hi};
  const TimeGrid grid = TimeGrid::uniform(1.0, 12);
  const uint64_t seed = 321;
  const int64_t N = 5000;
  const FKEstimate fk =
      fk_kernel_mass(bm_ops(1), V, Vec::Zero(1), 1.0, A, N, grid, seed);

  const PathEnsemble ens = sample_paths(bm_ops(1), Vec::Zero(1), grid, N, seed);
  CylinderSpec spec;
  spec.terminal = A;
  const CylinderEstimate cyl = cylinder_mass(ens, spec);
  CHECK(fk.value == cyl.estimate);
  CHECK(fk.stderr_ == cyl.stderr_);
}

TEST_CASE("fk is deterministic in seed and thread count") {
  Mat Cv(1, 1);
  Cv << 0.5;
  const Potential V = make_quadratic_potential(Cv, 0.0);
  const TimeGrid grid = TimeGrid::uniform(0.5, 64);
  const FKEstimate a = fk_kernel_mass(bm_ops(1), V, Vec::Zero(1), 0.5,
                                      WholeSpace{}, 4000, grid, 99, 1);
  const FKEstimate b = fk_kernel_mass(bm_ops(1), V, Vec::Zero(1), 0.5,
                                      WholeSpace{}, 4000, grid, 99, 4);
  CHECK(a.value == b.value);
  CHECK(a.stderr_ == b.stderr_);
}

TEST_CASE("partial overflow is counted, not fatal") {
  // a potential that explodes only on the positive half-line overflows
  // roughly half of all Brownian paths from 0
  const Potential spiky = make_tabulated_potential(
      [](double, const Vec& x) { return x[0] > 0.0 ? 2000.0 : 0.0; },
      GrowthDeclaration{2001.0, 2001.0, 0.0});
  const TimeGrid grid = TimeGrid::uniform(1.0, 16);
  const FKEstimate est = fk_kernel_mass(bm_ops(1), spiky, Vec::Zero(1), 1.0,
                                        WholeSpace{}, 4000, grid, 6);
  CHECK(est.overflow_fraction > 0.2);
  CHECK(est.overflow_fraction < 0.999);
  CHECK(std::isfinite(est.value));
}

TEST_CASE("grid horizon and dimensions are validated") {
  Mat Z(1, 1);
  Z << 0.0;
  const Potential V = make_quadratic_potential(Z, 0.0);
  const TimeGrid grid = TimeGrid::uniform(1.0, 4);
  CHECK_THROWS_AS(fk_kernel_mass(bm_ops(1), V, Vec::Zero(1), 0.5, WholeSpace{},
                                 100, grid, 1),
                  Error);
  PathSample short_path;
  short_path.values.assign(3, Vec::Zero(1));
  CHECK_THROWS_AS(log_path_integral_weight(short_path, V, grid), Error);
}
