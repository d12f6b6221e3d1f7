#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "mehler/paths.hpp"
#include "mehler/riccati.hpp"
#include "support/oracles.hpp"

using namespace mehler;

namespace {

OperatorSet ou_ops(int n) {
  // dX = -X dt + dW: B = I, D = -I
  return validate_operator_set(Mat::Identity(n, n), Mat::Zero(n, n),
                               -Mat::Identity(n, n), 0.0);
}

OperatorSet bm_ops(int n) {  // standard Brownian motion
  return validate_operator_set(Mat::Identity(n, n), Mat::Zero(n, n),
                               Mat::Zero(n, n), 0.0);
}

std::vector<oracle::ChainStep> ou_chain(const TimeGrid& grid) {
  std::vector<oracle::ChainStep> steps;
  for (int i = 1; i <= grid.step_count(); ++i) {
    const double h = grid.times[size_t(i)] - grid.times[size_t(i) - 1];
    steps.push_back(
        {std::exp(-h), std::sqrt((1.0 - std::exp(-2.0 * h)) / 2.0)});
  }
  return steps;
}

}  // namespace

TEST_CASE("terminal marginal of the OU sampler") {
  const double T = 1.25;
  const TimeGrid grid = TimeGrid::uniform(T, 25);
  Vec x(1);
  x << 2.0;
  const int64_t N = 40000;
  const PathEnsemble ens = sample_paths(ou_ops(1), x, grid, N, 314);
  double m = 0.0, v = 0.0;
  for (const PathSample& p : ens.samples) m += p.values.back()[0];
  m /= double(N);
  for (const PathSample& p : ens.samples) {
    const double d = p.values.back()[0] - m;
    v += d * d;
  }
  v /= double(N - 1);
  const double want_m = std::exp(-T) * x[0];
  const double want_v = (1.0 - std::exp(-2.0 * T)) / 2.0;
  CHECK(std::abs(m - want_m) < 5.0 * std::sqrt(want_v / double(N)));
  CHECK(std::abs(v - want_v) < 5.0 * want_v * std::sqrt(2.0 / double(N)));
}

TEST_CASE("unweighted ensembles carry exactly zero log-weights") {
  const TimeGrid grid = TimeGrid::uniform(0.8, 10);
  const PathEnsemble ens =
      sample_paths(ou_ops(2), Vec::Zero(2), grid, 500, 99);
  for (const PathSample& p : ens.samples) REQUIRE(p.log_weight == 0.0);
  CHECK(ens.acceptance_rate == 1.0);
}

TEST_CASE("weighted whole-space mass is an unbiased kernel-mass estimator") {
  // With C != 0 the path weights reproduce s(T) e^{-(P(T)x, x)/2} in
  // expectation for any grid, because the per-step kernels compose exactly.
  Mat B(1, 1), C(1, 1);
  B << 1.0;
  C << 0.9;
  const OperatorSet ops =
      validate_operator_set(B, C, Mat::Zero(1, 1), 0.0);
  Vec x(1);
  x << 0.7;
  const TimeGrid grid = TimeGrid::uniform(0.9, 12);  // deliberately coarse
  const PathEnsemble ens = sample_paths(ops, x, grid, 40000, 2025);
  CylinderSpec whole;
  whole.terminal = WholeSpace{};
  const CylinderEstimate est = cylinder_mass(ens, whole);
  const EvolutionState st = closed_form_D0(ops, grid.T);
  const double want = st.s * std::exp(-0.5 * st.P.m(0, 0) * x[0] * x[0]);
  CHECK(std::abs(est.estimate - want) < 3.0 * est.stderr_);
  CHECK(est.stderr_ / want < 0.02);
}

TEST_CASE("half-line symmetry gives one half") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 16);
  const PathEnsemble ens =
      sample_paths(ou_ops(1), Vec::Zero(1), grid, 40000, 512);
  CylinderSpec spec;
  Vec lo(1), hi(1);
  lo << 0.0;
  hi << 1e12;
  spec.terminal = Box{lo, hi};
  const CylinderEstimate est = cylinder_mass(ens, spec);
  CHECK(std::abs(est.estimate - 0.5) < 3.0 * est.stderr_);
  CHECK(est.n_effective > 0);
}

TEST_CASE("two-time box mass against the chained-Gaussian oracle") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 16);
  Vec x(1);
  x << 0.4;
  const PathEnsemble ens = sample_paths(ou_ops(1), x, grid, 60000, 777);

  CylinderSpec spec;
  Vec lo1(1), hi1(1), lo2(1), hi2(1);
  lo1 << -0.2;
  hi1 << 0.9;
  lo2 << -0.5;
  hi2 << 0.6;
  const size_t i1 = 8, i2 = 16;  // t = 0.5 and t = 1.0
  spec.constraints.emplace_back(grid.times[i1], Box{lo1, hi1});
  spec.terminal = Box{lo2, hi2};
  const CylinderEstimate est = cylinder_mass(ens, spec);

  const double want = oracle::chain_two_interval_prob(
      ou_chain(grid), x[0], i1, lo1[0], hi1[0], i2, lo2[0], hi2[0]);
  CHECK(std::abs(est.estimate - want) < 3.0 * est.stderr_);
}

TEST_CASE("cylinder masses are monotone under set inclusion") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 8);
  const PathEnsemble ens =
      sample_paths(ou_ops(2), Vec::Zero(2), grid, 20000, 31);
  auto box = [&](double half) {
    Vec lo = Vec::Constant(2, -half), hi = Vec::Constant(2, half);
    CylinderSpec spec;
    spec.constraints.emplace_back(0.5, Box{lo, hi});
    spec.terminal = Box{lo, hi};
    return cylinder_mass(ens, spec).estimate;
  };
  const double small = box(0.5), mid = box(1.0), large = box(2.0);
  CHECK(small <= mid);
  CHECK(mid <= large);
  CHECK(large <= 1.0 + 1e-12);
}

TEST_CASE("grid refinement leaves the terminal law invariant") {
  // Chapman-Kolmogorov: one coarse step to T and many fine steps to T give
  // the same terminal distribution (energy test on modest samples).
  const double T = 0.9;
  Vec x(1);
  x << 1.3;
  const PathEnsemble coarse =
      sample_paths(ou_ops(1), x, TimeGrid::uniform(T, 1), 400, 1234);
  const PathEnsemble fine =
      sample_paths(ou_ops(1), x, TimeGrid::uniform(T, 27), 400, 4321);
  std::vector<Eigen::VectorXd> a, b;
  for (const PathSample& p : coarse.samples) a.push_back(p.values.back());
  for (const PathSample& p : fine.samples) b.push_back(p.values.back());
  const auto res = oracle::two_sample_energy_test(a, b, 555, 200);
  CHECK(res.p_value > 0.005);
}

TEST_CASE("point conditioning pins the endpoint and bridges correctly") {
  // For Brownian motion from 0 pinned at 0, the mid-time law is
  // N(0, t(T - t)/T): the classical bridge.
  const double T = 1.0;
  const TimeGrid grid = TimeGrid::uniform(T, 16);
  Vec z(1);
  z << 0.0;
  const int64_t N = 30000;
  const PathEnsemble ens = condition_endpoint(
      bm_ops(1), Vec::Zero(1), grid, N, 2718, EndpointCondition{z});
  double v = 0.0;
  for (const PathSample& p : ens.samples) {
    REQUIRE(p.values.back()[0] == 0.0);
    const double u = p.values[8][0];  // t = 0.5
    v += u * u;
  }
  v /= double(N);
  const double want = 0.5 * (T - 0.5) / T;
  CHECK(std::abs(v - want) < 5.0 * want * std::sqrt(2.0 / double(N)));
}

TEST_CASE("conditioning on the unconditional law is a no-op") {
  // Feeding the exact terminal law as a Gaussian condition must reproduce
  // the unconditioned path measure; checked on the joint (mid, end) law.
  const double T = 1.1;
  const TimeGrid grid = TimeGrid::uniform(T, 10);
  Vec x(1);
  x << 0.8;
  const OperatorSet ops = ou_ops(1);
  const EvolutionState st = closed_form_C0(ops, T);
  const GaussianMeasure law = make_gaussian_measure(st.R * x, st.Q.m);

  const PathEnsemble plain = sample_paths(ops, x, grid, 400, 10);
  const PathEnsemble cond = condition_endpoint(ops, x, grid, 400, 11,
                                               EndpointCondition{law});
  auto joints = [&](const PathEnsemble& e) {
    std::vector<Eigen::VectorXd> out;
    for (const PathSample& p : e.samples) {
      Eigen::VectorXd j(2);
      j << p.values[5][0], p.values[10][0];
      out.push_back(j);
    }
    return out;
  };
  const auto res =
      oracle::two_sample_energy_test(joints(plain), joints(cond), 99, 200);
  CHECK(res.p_value > 0.005);
}

TEST_CASE("Gaussian terminal conditioning reproduces that terminal law") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 8);
  Vec m(1);
  m << -0.3;
  Mat S(1, 1);
  S << 0.04;
  const GaussianMeasure nu = make_gaussian_measure(m, S);
  const int64_t N = 30000;
  const PathEnsemble ens = condition_endpoint(
      ou_ops(1), Vec::Zero(1), grid, N, 31415, EndpointCondition{nu});
  double mean = 0.0, var = 0.0;
  for (const PathSample& p : ens.samples) mean += p.values.back()[0];
  mean /= double(N);
  for (const PathSample& p : ens.samples) {
    const double d = p.values.back()[0] - mean;
    var += d * d;
  }
  var /= double(N - 1);
  CHECK(std::abs(mean - m[0]) < 5.0 * std::sqrt(S(0, 0) / double(N)));
  CHECK(std::abs(var - S(0, 0)) < 5.0 * S(0, 0) * std::sqrt(2.0 / double(N)));
}

TEST_CASE("region conditioning rejects into the region") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 8);
  Vec lo(1), hi(1);
  lo << 0.0;
  hi << 1e12;
  const Region half = Box{lo, hi};
  const PathEnsemble ens = condition_endpoint(
      ou_ops(1), Vec::Zero(1), grid, 4000, 161, EndpointCondition{half});
  for (const PathSample& p : ens.samples)
    REQUIRE(p.values.back()[0] >= 0.0);
  CHECK(ens.acceptance_rate == Catch::Approx(0.5).margin(0.05));
}

TEST_CASE("hopeless region conditioning fails loudly") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 4);
  Vec c(1);
  c << 50.0;  // ~ 70 sigma away from the terminal law
  const Region target = Ball{c, 0.01};
  try {
    condition_endpoint(ou_ops(1), Vec::Zero(1), grid, 50, 7,
                       EndpointCondition{target});
    FAIL("expected an acceptance failure");
  } catch (const Error& e) {
    CHECK((e.code() == errc::low_acceptance ||
           e.code() == errc::empty_acceptance));
  }
}

TEST_CASE("noise-free steps are refused") {
  const OperatorSet ops = validate_operator_set(
      Mat::Zero(2, 2), Mat::Zero(2, 2), -Mat::Identity(2, 2), 0.0);
  try {
    sample_paths(ops, Vec::Zero(2), TimeGrid::uniform(1.0, 4), 10, 1);
    FAIL("expected a degenerate-step complaint");
  } catch (const Error& e) {
    CHECK(e.code() == errc::degenerate_step);
  }
}

TEST_CASE("alpha and C guards on the path samplers") {
  OperatorSet ops = ou_ops(1);
  ops.alpha = 0.5;
  CHECK_THROWS_AS(
      sample_paths(ops, Vec::Zero(1), TimeGrid::uniform(1.0, 2), 10, 1),
      Error);
  Mat C(1, 1);
  C << 1.0;
  const OperatorSet weighted = validate_operator_set(
      Mat::Identity(1, 1), C, Mat::Zero(1, 1), 0.0);
  try {
    condition_endpoint(weighted, Vec::Zero(1), TimeGrid::uniform(1.0, 2), 10,
                       1, EndpointCondition{Vec(Vec::Zero(1))});
    FAIL("expected bridge refusal");
  } catch (const Error& e) {
    CHECK(e.code() == errc::bridge_unavailable);
  }
}

TEST_CASE("gaussianity suite: pass, negative control, small-sample refusal") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 8);
  Vec z(2);
  z << 0.5, -0.5;
  PathEnsemble ens = condition_endpoint(ou_ops(2), Vec::Zero(2), grid, 6000,
                                        90210, EndpointCondition{z});
  std::vector<LinearFunctional> fns;
  fns.push_back({0.5, Vec(Vec::Unit(2, 0))});
  fns.push_back({0.75, Vec(Vec::Unit(2, 1))});
  const GaussianityReport good = gaussianity_check(ens, fns);
  CHECK(good.pass);
  CHECK_FALSE(good.insufficient_n);
  CHECK(good.worst_z <= 3.5);

  // cubing the path values destroys joint Gaussianity
  PathEnsemble bad = ens;
  for (PathSample& p : bad.samples)
    for (Vec& v : p.values) v = v.array().cube().matrix();
  const GaussianityReport cubed = gaussianity_check(bad, fns);
  CHECK_FALSE(cubed.pass);
  CHECK(cubed.worst_z > 3.5);

  PathEnsemble tiny = ens;
  tiny.samples.resize(50);
  const GaussianityReport small = gaussianity_check(tiny, fns);
  CHECK(small.insufficient_n);
  CHECK_FALSE(small.pass);
}

TEST_CASE("sampling is deterministic in the seed and the thread count") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 6);
  const PathEnsemble a = sample_paths(ou_ops(2), Vec::Zero(2), grid, 500, 42, 1);
  const PathEnsemble b = sample_paths(ou_ops(2), Vec::Zero(2), grid, 500, 42, 3);
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t j = 0; j < a.samples.size(); ++j)
    for (size_t i = 0; i < a.samples[j].values.size(); ++i)
      REQUIRE(a.samples[j].values[i] == b.samples[j].values[i]);

  const PathEnsemble c = sample_paths(ou_ops(2), Vec::Zero(2), grid, 500, 43, 1);
  CHECK(c.samples[0].values.back() != a.samples[0].values.back());
}
