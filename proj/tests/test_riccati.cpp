#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mehler/riccati.hpp"
#include "support/oracles.hpp"

using namespace mehler;

namespace {

OperatorSet random_ops(int n, std::mt19937_64& gen, bool with_c, bool with_d,
                       double alpha) {
  const Mat B = oracle::random_psd(n, gen, 1.0) + 0.1 * Mat::Identity(n, n);
  const Mat C = with_c ? Mat(oracle::random_psd(n, gen, 0.8))
                       : Mat(Mat::Zero(n, n));
  const Mat D = with_d ? Mat(oracle::random_matrix(n, gen, 0.5))
                       : Mat(Mat::Zero(n, n));
  return validate_operator_set(B, C, D, alpha);
}

double state_gap(const EvolutionState& a, const EvolutionState& b) {
  double g = std::abs(a.s - b.s) / std::max(1.0, std::abs(b.s));
  g = std::max(g, (a.P.m - b.P.m).norm() / std::max(1.0, b.P.m.norm()));
  g = std::max(g, (a.Q.m - b.Q.m).norm() / std::max(1.0, b.Q.m.norm()));
  g = std::max(g, (a.R - b.R).norm() / std::max(1.0, b.R.norm()));
  return g;
}

}  // namespace

TEST_CASE("flow derivatives at the identity state") {
  Mat B(1, 1), C(1, 1), D(1, 1);
  B << 1.3;
  C << 0.7;
  D << -0.4;
  const OperatorSet ops = validate_operator_set(B, C, D, 0.9);
  const EvolutionState st = EvolutionState::initial(1);
  const FlowDerivatives d = rhs(st, ops);
  // at (s, P, Q, R) = (1, 0, 0, I): s' = alpha, P' = C, Q' = B, R' = D^T
  CHECK(d.ds == Catch::Approx(0.9));
  CHECK(d.dP(0, 0) == Catch::Approx(0.7));
  CHECK(d.dQ(0, 0) == Catch::Approx(1.3));
  CHECK(d.dR(0, 0) == Catch::Approx(-0.4));
}

TEST_CASE("general scalar flow against the exact tanh solution") {
  // For n = 1 the flow solves in closed form: with g = sqrt(bc + d^2) and
  // tanh(phi) = -d/g,
  //   q = (d + g tanh(g t + phi)) / c,       r = cosh(phi) / cosh(g t + phi),
  //   p = (c cosh^2(phi) / g)(tanh(g t + phi) - tanh(phi)),
  //   log s = (alpha - d/2) t - log(cosh(g t + phi)/cosh(phi)) / 2.
  const double b = 1.1, c = 0.6, d = -0.3, alpha = 0.2;
  Mat B(1, 1), C(1, 1), D(1, 1);
  B << b;
  C << c;
  D << d;
  const OperatorSet ops = validate_operator_set(B, C, D, alpha);
  const Trajectory traj = integrate(ops, 1.5, {1500, false, 1e-10});
  const double g = std::sqrt(b * c + d * d);
  const double phi = std::atanh(-d / g);
  for (double t : {0.5, 1.0, 1.5}) {
    const EvolutionState st = traj.at_time(t);
    const double q = (d + g * std::tanh(g * t + phi)) / c;
    const double r = std::cosh(phi) / std::cosh(g * t + phi);
    const double p = c * std::cosh(phi) * std::cosh(phi) / g *
                     (std::tanh(g * t + phi) - std::tanh(phi));
    const double s =
        std::exp((alpha - d / 2.0) * t) *
        std::sqrt(std::cosh(phi) / std::cosh(g * t + phi));
    CHECK(st.Q.m(0, 0) == Catch::Approx(q).epsilon(1e-10));
    CHECK(st.R(0, 0) == Catch::Approx(r).epsilon(1e-10));
    CHECK(st.P.m(0, 0) == Catch::Approx(p).epsilon(1e-10));
    CHECK(st.s == Catch::Approx(s).epsilon(1e-10));
  }
}

TEST_CASE("integration matches the C = 0 closed form") {
  std::mt19937_64 gen(1001);
  for (int n : {1, 2, 4}) {
    const OperatorSet ops = random_ops(n, gen, false, true, 0.3);
    const Trajectory traj = integrate(ops, 2.0, {2000, false, 1e-10});
    for (double t : {0.5, 1.0, 2.0}) {
      const EvolutionState want = closed_form_C0(ops, t);
      CHECK(state_gap(traj.at_time(t), want) < 1e-8);
    }
  }
}

TEST_CASE("integration matches the D = 0 closed form, non-commuting pair") {
  std::mt19937_64 gen(1002);
  for (int n : {1, 2, 4}) {
    const OperatorSet ops = random_ops(n, gen, true, false, -0.1);
    if (n > 1)
      REQUIRE((ops.B.m * ops.C.m - ops.C.m * ops.B.m).norm() > 1e-3);
    const Trajectory traj = integrate(ops, 2.0, {2000, false, 1e-10});
    for (double t : {0.5, 1.0, 2.0}) {
      const EvolutionState want = closed_form_D0(ops, t);
      CHECK(state_gap(traj.at_time(t), want) < 1e-8);
    }
  }
}

TEST_CASE("closed-form guards") {
  std::mt19937_64 gen(1003);
  const OperatorSet ops = random_ops(2, gen, true, true, 0.0);
  try {
    closed_form_C0(ops, 1.0);
    FAIL("expected a C != 0 complaint");
  } catch (const Error& e) {
    CHECK(e.code() == errc::c_not_zero);
  }
  try {
    closed_form_D0(ops, 1.0);
    FAIL("expected a D != 0 complaint");
  } catch (const Error& e) {
    CHECK(e.code() == errc::d_not_zero);
  }
}

TEST_CASE("adaptive integration agrees with fixed stepping") {
  std::mt19937_64 gen(1004);
  const OperatorSet ops = random_ops(3, gen, true, true, 0.4);
  const Trajectory fixed = integrate(ops, 1.5, {4000, false, 1e-10});
  const Trajectory adaptive = integrate(ops, 1.5, {0, true, 1e-12});
  CHECK(state_gap(adaptive.back(), fixed.back()) < 1e-8);
  CHECK(adaptive.back().t == Catch::Approx(1.5).margin(1e-12));
}

TEST_CASE("semigroup property through compose for a general flow") {
  std::mt19937_64 gen(1005);
  const OperatorSet ops = random_ops(3, gen, true, true, 0.25);
  for (double u : {0.3, 0.7}) {
    const double v = 1.1 - u;
    const GaussianKernel Ku =
        kernel_at(integrate(ops, u, {2000, false, 1e-10}).back());
    const GaussianKernel Kv =
        kernel_at(integrate(ops, v, {2000, false, 1e-10}).back());
    const GaussianKernel Kuv =
        kernel_at(integrate(ops, u + v, {4000, false, 1e-10}).back());
    const GaussianKernel got = compose(Ku, Kv);  // v first, then u
    CHECK(std::abs(got.s - Kuv.s) / Kuv.s < 1e-8);
    CHECK((got.P.m - Kuv.P.m).norm() < 1e-8 * (1.0 + Kuv.P.m.norm()));
    CHECK((got.Q.m - Kuv.Q.m).norm() < 1e-8 * (1.0 + Kuv.Q.m.norm()));
    CHECK((got.R - Kuv.R).norm() < 1e-8 * (1.0 + Kuv.R.norm()));
  }
}

TEST_CASE("Fourier-domain residual vanishes on-flow and flags a perturbation") {
  std::mt19937_64 gen(1006);
  const OperatorSet ops = random_ops(3, gen, true, true, 0.15);
  const Trajectory traj = integrate(ops, 1.0, {1000, false, 1e-10});
  std::normal_distribution<double> nd;
  auto probe = [&] {
    Vec v(3);
    for (int i = 0; i < 3; ++i) v[i] = nd(gen);
    if (v.norm() > 3.0) v *= 3.0 / v.norm();
    return v;
  };
  double worst = 0.0;
  for (size_t i : {size_t{0}, traj.states.size() / 2, traj.states.size() - 1}) {
    const EvolutionState& st = traj.states[i];
    for (int p = 0; p < 20; ++p) {
      const Vec x = probe(), y = probe();
      const double scale =
          1.0 + std::abs(characteristic_functional(kernel_at(st), x, y));
      worst = std::max(worst,
                       std::abs(pde_residual_fourier(st, ops, x, y)) / scale);
    }
  }
  CHECK(worst < 1e-7);

  // freezing the on-flow derivatives and displacing Q must break the identity
  const EvolutionState& st = traj.back();
  const FlowDerivatives frozen = rhs(st, ops);
  EvolutionState bad = st;
  bad.Q.m += 0.01 * Mat::Identity(3, 3);
  double worst_bad = 0.0;
  for (int p = 0; p < 20; ++p) {
    const Vec x = probe(), y = probe();
    const double scale =
        1.0 + std::abs(characteristic_functional(kernel_at(bad), x, y));
    worst_bad = std::max(
        worst_bad, std::abs(pde_residual_fourier(bad, frozen, ops, x, y)) / scale);
  }
  CHECK(worst_bad > 1e-3);
}

TEST_CASE("generator recovery round trip") {
  std::mt19937_64 gen(1007);
  SECTION("closed-form flow") {
    const OperatorSet ops = random_ops(3, gen, true, false, 0.3);
    const OperatorSet rec = recover_generators(
        [&](double t) { return closed_form_D0(ops, t); }, 0.04, 6);
    CHECK((rec.B.m - ops.B.m).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((rec.C.m - ops.C.m).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((rec.D - ops.D).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(rec.alpha - ops.alpha) < 1e-8);
  }
  SECTION("integrated general flow") {
    const OperatorSet ops = random_ops(4, gen, true, true, -0.2);
    const OperatorSet rec = recover_generators(
        [&](double t) {
          return integrate(ops, t, {2000, false, 1e-10}).back();
        },
        0.04, 6);
    CHECK((rec.B.m - ops.B.m).cwiseAbs().maxCoeff() < 1e-4);
    CHECK((rec.C.m - ops.C.m).cwiseAbs().maxCoeff() < 1e-4);
    CHECK((rec.D - ops.D).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(std::abs(rec.alpha - ops.alpha) < 1e-4);
  }
}

TEST_CASE("recovery refuses a flow that is not differentiable at zero") {
  // sqrt(t) contamination cannot be extrapolated away; the contraction
  // monitor must notice
  auto flow = [](double t) {
    EvolutionState st = EvolutionState::initial(2);
    st.t = t;
    st.Q.m = std::sqrt(t) * Mat::Identity(2, 2);
    return st;
  };
  try {
    recover_generators(flow, 0.04, 6);
    FAIL("expected a noisy-flow complaint");
  } catch (const Error& e) {
    CHECK(e.code() == errc::noisy_flow);
  }
}

TEST_CASE("second-moment diagnostic in two solvable regimes") {
  SECTION("pure diffusion from a point: trace grows like t tr B") {
    Mat B(2, 2);
    B << 1.0, 0.0, 0.0, 0.5;
    const OperatorSet ops =
        validate_operator_set(B, Mat::Zero(2, 2), Mat::Zero(2, 2), 0.0);
    const Trajectory traj = integrate(ops, 2.0, {500, false, 1e-10});
    const InitialMeasure mu0 = make_point_mixture({Vec::Zero(2)}, {1.0});
    const MomentReport rep = moment_diagnostic(traj, mu0);
    CHECK(rep.finite);
    CHECK(rep.sup == Catch::Approx(2.0 * 1.5).epsilon(1e-8));
  }
  SECTION("Lyapunov equilibrium: D = -I, B = I saturates at tr/2") {
    const int n = 2;
    const OperatorSet ops =
        validate_operator_set(Mat::Identity(n, n), Mat::Zero(n, n),
                              -Mat::Identity(n, n), 0.0);
    const Trajectory traj = integrate(ops, 4.0, {2000, false, 1e-10});
    const InitialMeasure mu0 = make_point_mixture({Vec::Zero(n)}, {1.0});
    const MomentReport rep = moment_diagnostic(traj, mu0);
    const double want = n * (1.0 - std::exp(-8.0)) / 2.0;
    CHECK(rep.sup == Catch::Approx(want).epsilon(1e-7));
  }
}

TEST_CASE("truncation increments follow the spectral tail") {
  // B with spectrum k^{-2}, C = I, D = 0: increments of tr Q_n(1) between
  // n = 4, 8, 16, 32 must decrease roughly geometrically like the tail sums.
  std::vector<double> traces;
  for (int n : {4, 8, 16, 32}) {
    const Mat B = diagonal_matrix(power_law_spectrum(2.0, n));
    const OperatorSet ops = validate_operator_set(
        B, Mat::Identity(n, n), Mat::Zero(n, n), 0.0);
    traces.push_back(closed_form_D0(ops, 1.0).Q.m.trace());
  }
  std::vector<double> inc;
  for (size_t i = 1; i < traces.size(); ++i)
    inc.push_back(traces[i] - traces[i - 1]);
  REQUIRE(inc.size() == 3);
  for (double d : inc) CHECK(d > 0.0);
  CHECK(inc[1] < inc[0]);
  CHECK(inc[2] < inc[1]);
  // tail of sum k^{-2} halves per doubling, asymptotically
  CHECK(inc[1] / inc[0] > 0.3);
  CHECK(inc[1] / inc[0] < 0.8);
  CHECK(inc[2] / inc[1] > 0.3);
  CHECK(inc[2] / inc[1] < 0.8);
}

TEST_CASE("integrate validates its arguments") {
  const OperatorSet ops = OperatorSet::zero(2);
  try {
    integrate(ops, -1.0, {});
    FAIL("expected an argument error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::invalid_argument);
  }
}

TEST_CASE("trajectory lookup requires a grid time") {
  const OperatorSet ops = OperatorSet::zero(1);
  const Trajectory traj = integrate(ops, 1.0, {10, false, 1e-10});
  CHECK(traj.at_time(0.3).t == Catch::Approx(0.3));
  CHECK_THROWS_AS(traj.at_time(0.35), Error);
}
