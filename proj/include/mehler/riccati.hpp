#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mehler/kernel.hpp"
#include "mehler/matrix_functions.hpp"
#include "mehler/operators.hpp"

namespace mehler {

// Snapshot of the flow (s, P, Q, R) at time t. The flow starts at the
// delta-kernel state s=1, P=0, Q=0, R=I.
struct EvolutionState {
  double t = 0.0;
  double s = 1.0;
  SymMatrix P;
  SymMatrix Q;
  Mat R;

  int dim() const { return static_cast<int>(R.rows()); }

  static EvolutionState initial(int n) {
    return EvolutionState{0.0, 1.0, SymMatrix::Zero(n), SymMatrix::Zero(n),
                          Mat::Identity(n, n)};
  }
};

inline GaussianKernel kernel_at(const EvolutionState& st) {
  return GaussianKernel{st.s, st.P, st.Q, st.R};
}

struct FlowDerivatives {
  double ds = 0.0;
  Mat dP;
  Mat dQ;
  Mat dR;
};

// Right-hand side of the flow equations:
//   s' = -1/2 s tr(CQ) + alpha s
//   P' = R^T C R
//   Q' = B - QCQ + D^T Q + Q D
//   R' = -QCR + D^T R
inline FlowDerivatives rhs(const EvolutionState& st, const OperatorSet& ops) {
  require(st.dim() == ops.n, errc::dimension_mismatch,
          "state and operators disagree in dimension");
  const Mat& Q = st.Q.m;
  const Mat& C = ops.C.m;
  FlowDerivatives d;
  d.ds = st.s * (-0.5 * (C * Q).trace() + ops.alpha);
  d.dP = symmetrized(st.R.transpose() * C * st.R);
  d.dQ = symmetrized(ops.B.m - Q * C * Q + ops.D.transpose() * Q + Q * ops.D);
  d.dR = -Q * C * st.R + ops.D.transpose() * st.R;
  return d;
}

struct Trajectory {
  std::vector<EvolutionState> states;
  OperatorSet ops;

  const EvolutionState& back() const { return states.back(); }

  // State at a grid time; t must lie on the grid up to rounding.
  const EvolutionState& at_time(double t) const {
    const double slop = 1e-9 * std::max(1.0, states.back().t);
    auto it = std::lower_bound(
        states.begin(), states.end(), t - slop,
        [](const EvolutionState& s, double v) { return s.t < v; });
    require(it != states.end() && std::abs(it->t - t) <= slop,
            errc::invalid_argument,
            "time " + std::to_string(t) + " not on the trajectory grid");
    return *it;
  }
};

struct IntegrationControl {
  int steps = 0;          // fixed-step count; 0 picks 1000 (step = 1e-3 T)
  bool adaptive = false;  // embedded 4(5) pair instead of fixed steps
  double rel_tol = 1e-10; // adaptive local error target
};

namespace detail {

// Integration variables: log s (avoids under/overflow of the mass factor),
// P, Q, R. d(log s) is independent of s, so s never enters the stages.
struct FlowVars {
  double ls;
  Mat P, Q, R;
};

struct FlowSlope {
  double ls;
  Mat P, Q, R;
};

inline FlowSlope flow_slope(const FlowVars& v, const OperatorSet& ops) {
  const Mat& C = ops.C.m;
  FlowSlope d;
  d.ls = -0.5 * (C * v.Q).trace() + ops.alpha;
  d.P = v.R.transpose() * C * v.R;
  d.Q = ops.B.m - v.Q * C * v.Q + ops.D.transpose() * v.Q + v.Q * ops.D;
  d.R = -v.Q * C * v.R + ops.D.transpose() * v.R;
  return d;
}

inline FlowVars flow_axpy(const FlowVars& v, double h, const FlowSlope& d) {
  return FlowVars{v.ls + h * d.ls, v.P + h * d.P, v.Q + h * d.Q,
                  v.R + h * d.R};
}

// Enforces the per-step structural invariants and converts to a state.
inline EvolutionState finish_step(double t, FlowVars& v) {
  for (const Mat* m : {&v.P, &v.Q}) {
    const double drift = asymmetry_rel(*m);
    require(drift <= tol::symmetry_drift, errc::step_failure,
            "symmetry drift " + std::to_string(drift) + " at t=" +
                std::to_string(t));
  }
  v.P = symmetrized(v.P);
  v.Q = symmetrized(v.Q);
  EvolutionState st;
  st.t = t;
  st.s = std::exp(v.ls);
  st.P = SymMatrix(v.P);
  st.Q = SymMatrix(v.Q);
  st.R = v.R;
  require(std::isfinite(st.s) && all_finite(v.P) && all_finite(v.Q) &&
              all_finite(v.R),
          errc::step_failure, "non-finite state at t=" + std::to_string(t));
  if (min_eigenvalue(st.P) < -eps_psd(v.P) ||
      min_eigenvalue(st.Q) < -eps_psd(v.Q))
    fail(errc::psd_lost,
         "P or Q lost positive semidefiniteness at t=" + std::to_string(t));
  return st;
}

inline FlowVars rk4_step(const FlowVars& v, double h, const OperatorSet& ops) {
  const FlowSlope k1 = flow_slope(v, ops);
  const FlowSlope k2 = flow_slope(flow_axpy(v, 0.5 * h, k1), ops);
  const FlowSlope k3 = flow_slope(flow_axpy(v, 0.5 * h, k2), ops);
  const FlowSlope k4 = flow_slope(flow_axpy(v, h, k3), ops);
  FlowVars out = v;
  out.ls += h / 6.0 * (k1.ls + 2.0 * k2.ls + 2.0 * k3.ls + k4.ls);
  out.P += h / 6.0 * (k1.P + 2.0 * k2.P + 2.0 * k3.P + k4.P);
  out.Q += h / 6.0 * (k1.Q + 2.0 * k2.Q + 2.0 * k3.Q + k4.Q);
  out.R += h / 6.0 * (k1.R + 2.0 * k2.R + 2.0 * k3.R + k4.R);
  return out;
}

inline double slope_norm(const FlowSlope& d) {
  return std::max({std::abs(d.ls), d.P.cwiseAbs().maxCoeff(),
                   d.Q.cwiseAbs().maxCoeff(), d.R.cwiseAbs().maxCoeff()});
}

inline double vars_scale(const FlowVars& v) {
  return std::max({1.0, std::abs(v.ls), v.P.cwiseAbs().maxCoeff(),
                   v.Q.cwiseAbs().maxCoeff(), v.R.cwiseAbs().maxCoeff()});
}

}  // namespace detail

// Integrates the flow from the exact initial state to T. Fixed-step classical
// 4th order by default (reproducible grids); optionally an embedded
// Fehlberg 4(5) pair with local error control. P and Q are re-symmetrized
// after every accepted step; symmetry drift beyond tolerance or loss of
// positive semidefiniteness aborts.
inline Trajectory integrate(const OperatorSet& ops, double T,
                            IntegrationControl control = {}) {
  require(T > 0.0 && std::isfinite(T), errc::invalid_argument,
          "horizon must be positive and finite");
  Trajectory traj;
  traj.ops = ops;

  detail::FlowVars v{0.0, Mat::Zero(ops.n, ops.n), Mat::Zero(ops.n, ops.n),
                     Mat::Identity(ops.n, ops.n)};
  traj.states.push_back(EvolutionState::initial(ops.n));

  if (!control.adaptive) {
    const int steps = control.steps > 0 ? control.steps : 1000;
    const double h = T / steps;
    for (int i = 1; i <= steps; ++i) {
      v = detail::rk4_step(v, h, ops);
      traj.states.push_back(detail::finish_step(i * h, v));
      // keep the stored (symmetrized) values as the continuation point
      v.P = traj.states.back().P.m;
      v.Q = traj.states.back().Q.m;
    }
    traj.states.back().t = T;  // absorb i*h rounding
    return traj;
  }

  // Fehlberg 4(5) embedded pair.
  static constexpr double a21 = 1.0 / 4.0;
  static constexpr double a31 = 3.0 / 32.0, a32 = 9.0 / 32.0;
  static constexpr double a41 = 1932.0 / 2197.0, a42 = -7200.0 / 2197.0,
                          a43 = 7296.0 / 2197.0;
  static constexpr double a51 = 439.0 / 216.0, a52 = -8.0,
                          a53 = 3680.0 / 513.0, a54 = -845.0 / 4104.0;
  static constexpr double a61 = -8.0 / 27.0, a62 = 2.0,
                          a63 = -3544.0 / 2565.0, a64 = 1859.0 / 4104.0,
                          a65 = -11.0 / 40.0;
  static constexpr double b41 = 25.0 / 216.0, b43 = 1408.0 / 2565.0,
                          b44 = 2197.0 / 4104.0, b45 = -1.0 / 5.0;
  static constexpr double b51 = 16.0 / 135.0, b53 = 6656.0 / 12825.0,
                          b54 = 28561.0 / 56430.0, b55 = -9.0 / 50.0,
                          b56 = 2.0 / 55.0;

  double t = 0.0;
  double h = T / 100.0;
  const double h_min = T * 1e-12;
  int rejected_in_a_row = 0;
  while (t < T) {
    h = std::min(h, T - t);
    const auto k1 = detail::flow_slope(v, ops);
    const auto k2 = detail::flow_slope(detail::flow_axpy(v, h * a21, k1), ops);
    auto stage = [&](auto... terms) {
      detail::FlowVars w = v;
      ((w = detail::flow_axpy(w, h * terms.first, terms.second)), ...);
      return w;
    };
    const auto k3 = detail::flow_slope(
        stage(std::pair{a31, k1}, std::pair{a32, k2}), ops);
    const auto k4 = detail::flow_slope(
        stage(std::pair{a41, k1}, std::pair{a42, k2}, std::pair{a43, k3}),
        ops);
    const auto k5 = detail::flow_slope(
        stage(std::pair{a51, k1}, std::pair{a52, k2}, std::pair{a53, k3},
              std::pair{a54, k4}),
        ops);
    const auto k6 = detail::flow_slope(
        stage(std::pair{a61, k1}, std::pair{a62, k2}, std::pair{a63, k3},
              std::pair{a64, k4}, std::pair{a65, k5}),
        ops);

    detail::FlowVars y4 = v;
    y4 = detail::flow_axpy(y4, h * b41, k1);
    y4 = detail::flow_axpy(y4, h * b43, k3);
    y4 = detail::flow_axpy(y4, h * b44, k4);
    y4 = detail::flow_axpy(y4, h * b45, k5);
    detail::FlowVars y5 = v;
    y5 = detail::flow_axpy(y5, h * b51, k1);
    y5 = detail::flow_axpy(y5, h * b53, k3);
    y5 = detail::flow_axpy(y5, h * b54, k4);
    y5 = detail::flow_axpy(y5, h * b55, k5);
    y5 = detail::flow_axpy(y5, h * b56, k6);

    const double err = std::max({std::abs(y5.ls - y4.ls),
                                 (y5.P - y4.P).cwiseAbs().maxCoeff(),
                                 (y5.Q - y4.Q).cwiseAbs().maxCoeff(),
                                 (y5.R - y4.R).cwiseAbs().maxCoeff()}) /
                       detail::vars_scale(v);
    if (err <= control.rel_tol || h <= h_min) {
      require(err <= control.rel_tol * 100.0, errc::step_failure,
              "local error tolerance unreachable at t=" + std::to_string(t));
      t += h;
      v = y5;
      traj.states.push_back(detail::finish_step(t, v));
      v.P = traj.states.back().P.m;
      v.Q = traj.states.back().Q.m;
      rejected_in_a_row = 0;
    } else {
      require(++rejected_in_a_row < 60, errc::step_failure,
              "step size collapsed at t=" + std::to_string(t));
    }
    const double safe = err > 0.0 ? 0.9 * std::pow(control.rel_tol / err, 0.2)
                                  : 5.0;
    h *= std::clamp(safe, 0.2, 5.0);
    h = std::max(h, h_min);
  }
  traj.states.back().t = T;
  return traj;
}

// Closed form for C = 0:
//   s = e^{alpha t}, P = 0, Q = int_0^t e^{D^T u} B e^{D u} du, R = e^{D^T t}.
inline EvolutionState closed_form_C0(const OperatorSet& ops, double t) {
  require(ops.c_is_zero(), errc::c_not_zero, "closed_form_C0 needs C = 0");
  require(t >= 0.0 && std::isfinite(t), errc::invalid_argument,
          "time must be finite and >= 0");
  EvolutionState st;
  st.t = t;
  st.s = std::exp(ops.alpha * t);
  st.P = SymMatrix::Zero(ops.n);
  st.Q = conjugated_integral(ops.B, ops.D, t);
  st.R = matrix_exponential(ops.D.transpose(), t);
  return st;
}

// Closed form for D = 0 (generalized Mehler). Writing S_B = B^{1/2} C B^{1/2}
// and S_C = C^{1/2} B C^{1/2} (both symmetric PSD, sharing the nonzero
// spectrum of CB):
//   s = e^{alpha t} det(cosh(t sqrt(CB)))^{-1/2}
//   Q = B^{1/2} [tanh(t sqrt(S_B))/sqrt(S_B)] B^{1/2}
//   P = C^{1/2} [tanh(t sqrt(S_C))/sqrt(S_C)] C^{1/2}
//   R = cosh(t sqrt(BC))^{-1}
// These symmetric-similarity forms are the solution of the flow equations for
// arbitrary (non-commuting) PSD B, C; they follow from the linearization
// Q = Y Z^{-1} with Y' = BZ, Z' = CY and make the symmetry and positive
// semidefiniteness of P, Q explicit. For commuting B, C they reduce to the
// familiar scalar Mehler expressions. cosh(t sqrt(BC)) is assembled without
// forming a square root of the (non-symmetric) product BC via
//   cosh(t sqrt(BC)) = I + B^{1/2} h_t(S_B) B^{1/2} C,
//   h_t(x) = (cosh(t sqrt(x)) - 1)/x,
// using (BC)^k B = B^{1/2} S_B^k B^{1/2}, and then inverted by LU; its
// spectrum is cosh(t sqrt(spec CB)) >= 1, so the solve is well conditioned.
inline EvolutionState closed_form_D0(const OperatorSet& ops, double t) {
  require(ops.d_is_zero(), errc::d_not_zero, "closed_form_D0 needs D = 0");
  require(t >= 0.0 && std::isfinite(t), errc::invalid_argument,
          "time must be finite and >= 0");
  const int n = ops.n;
  const Mat Bh = psd_sqrt(ops.B).m;
  const Mat Ch = psd_sqrt(ops.C).m;
  const Mat SB = symmetrized(Bh * ops.C.m * Bh);
  const Mat SC = symmetrized(Ch * ops.B.m * Ch);

  Eigen::SelfAdjointEigenSolver<Mat> esB(SB);
  Eigen::SelfAdjointEigenSolver<Mat> esC(SC);
  require(esB.info() == Eigen::Success && esC.info() == Eigen::Success,
          errc::negative_spectrum, "eigensolver failed");
  const Vec& lamB = esB.eigenvalues();
  const Vec& lamC = esC.eigenvalues();
  require(lamB.minCoeff() >= -eps_psd(SB) && lamC.minCoeff() >= -eps_psd(SC),
          errc::negative_spectrum, "CB has negative spectrum");

  auto apply = [](const Eigen::SelfAdjointEigenSolver<Mat>& es,
                  auto&& f) -> Mat {
    Vec d(es.eigenvalues().size());
    for (int i = 0; i < d.size(); ++i) d[i] = f(es.eigenvalues()[i]);
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
  };

  EvolutionState st;
  st.t = t;

  double log_det_cosh = 0.0;
  for (int i = 0; i < n; ++i) log_det_cosh += ev_log_cosh_tsqrt(lamB[i], t);
  st.s = std::exp(ops.alpha * t - 0.5 * log_det_cosh);

  const Mat gB = apply(esB, [&](double l) { return ev_tanh_over_sqrt(l, t); });
  const Mat gC = apply(esC, [&](double l) { return ev_tanh_over_sqrt(l, t); });
  st.Q = sym_exact(Bh * gB * Bh);
  st.P = sym_exact(Ch * gC * Ch);
  require_psd(st.Q, "Q");
  require_psd(st.P, "P");

  const Mat hB = apply(esB, [&](double l) { return ev_coshm1_over(l, t); });
  const Mat cosh_BC = Mat::Identity(n, n) + Bh * hB * Bh * ops.C.m;
  st.R = cosh_BC.partialPivLu().solve(Mat::Identity(n, n));
  return st;
}

// Residual of the Fourier-transformed equation at probe (x, y), with the
// time derivatives of the parameters supplied explicitly. Writing
// Ghat = s exp{-1/2 (Px,x)} exp{i(Rx,y) - 1/2 (Qy,y)} and using
//   grad_y Ghat = (iRx - Qy) Ghat
//   Hess_y Ghat = [(iRx - Qy)(iRx - Qy)^T - Q] Ghat,
// the transformed equation reads
//   d/dt Ghat = [alpha - 1/2 (By,y)] Ghat + (grad_y Ghat, Dy)
//               + 1/2 tr(C Hess_y Ghat).
// Returned is LHS - RHS. With derivatives taken from rhs() the residual
// cancels algebraically (that is the equation-vs-flow consistency check);
// feeding flow derivatives from one state against a perturbed state is the
// negative control that shows the residual actually measures something.
inline cplx pde_residual_fourier(const EvolutionState& st,
                                 const FlowDerivatives& d,
                                 const OperatorSet& ops, const Vec& x,
                                 const Vec& y) {
  require(st.dim() == ops.n && x.size() == ops.n && y.size() == ops.n,
          errc::dimension_mismatch, "residual probe dimension mismatch");
  const Vec a = st.R * x;        // real part generator of grad: i a - b
  const Vec b = st.Q.m * y;
  const Vec Dy = ops.D * y;
  const Vec Ca = ops.C.m * a;

  const cplx lhs(d.ds / st.s - 0.5 * x.dot(d.dP * x) - 0.5 * y.dot(d.dQ * y),
                 (d.dR * x).dot(y));
  const cplx rhs_val(
      ops.alpha - 0.5 * quad_form(ops.B, y) - b.dot(Dy) +
          0.5 * (-a.dot(Ca) + b.dot(ops.C.m * b) - (ops.C.m * st.Q.m).trace()),
      a.dot(Dy) - Ca.dot(b));

  const cplx ghat = characteristic_functional(kernel_at(st), x, y);
  return (lhs - rhs_val) * ghat;
}

inline cplx pde_residual_fourier(const EvolutionState& st,
                                 const OperatorSet& ops, const Vec& x,
                                 const Vec& y) {
  return pde_residual_fourier(st, rhs(st, ops), ops, x, y);
}

// Recovers (B, C, D, alpha) from a kernel flow by one-sided finite
// differences at t = 0 with Richardson extrapolation: B = Q'(0), C = P'(0),
// D^T = R'(0), alpha = s'(0). levels halvings of the base step are combined;
// a non-contracting extrapolation diagonal reports NoisyFlow.
inline OperatorSet recover_generators(
    const std::function<EvolutionState(double)>& flow, double h = 0.04,
    int levels = 6) {
  require(h > 0.0 && levels >= 3, errc::invalid_argument,
          "need a positive step and at least 3 levels");
  const EvolutionState probe = flow(h);
  const int n = probe.dim();

  // One flattened difference row per level: [s | P | Q | R] / step.
  const int m = 1 + 3 * n * n;
  double step = h;
  std::vector<Vec> rows;
  for (int j = 0; j < levels; ++j, step *= 0.5) {
    const EvolutionState stj = (j == 0) ? probe : flow(step);
    Vec r(m);
    r[0] = (stj.s - 1.0) / step;
    int k = 1;
    const Mat dP = stj.P.m / step;
    const Mat dQ = stj.Q.m / step;
    const Mat dR = (stj.R - Mat::Identity(n, n)) / step;
    for (const Mat* mm : {&dP, &dQ, &dR})
      for (int c = 0; c < n; ++c)
        for (int rix = 0; rix < n; ++rix) r[k++] = (*mm)(rix, c);
    rows.push_back(std::move(r));
  }

  // Richardson for one-sided differences: error series in step^1, step^2, ...
  // T[j][k] = (2^k T[j][k-1] - T[j-1][k-1]) / (2^k - 1).
  std::vector<Vec> T = rows;
  std::vector<double> diag_jump;
  Vec prev_diag = T[0];
  for (int k = 1; k < levels; ++k) {
    const double w = std::pow(2.0, k);
    for (int j = levels - 1; j >= k; --j) T[j] = (w * T[j] - T[j - 1]) / (w - 1.0);
    diag_jump.push_back((T[k] - prev_diag).cwiseAbs().maxCoeff());
    prev_diag = T[k];
  }
  const Vec est = T[levels - 1];
  const double scale = std::max(1.0, est.cwiseAbs().maxCoeff());
  const double final_jump = diag_jump.back();
  const bool contracted =
      final_jump <= 0.1 * diag_jump.front() || final_jump <= 1e-8 * scale;
  require(contracted, errc::noisy_flow,
          "extrapolation not contracting (last correction " +
              std::to_string(final_jump) + ")");

  auto unflatten = [&](int offset) {
    Mat mm(n, n);
    int k = offset;
    for (int c = 0; c < n; ++c)
      for (int rix = 0; rix < n; ++rix) mm(rix, c) = est[k++];
    return mm;
  };
  const double alpha = est[0];
  Mat Crec = unflatten(1);
  Mat Brec = unflatten(1 + n * n);
  const Mat Drec = unflatten(1 + 2 * n * n).transpose();

  // P, Q of a valid flow are symmetric PSD, so their difference quotients
  // are symmetric; eigenvalues slightly below zero are extrapolation noise.
  auto settle = [&](Mat mm, const char* name) -> SymMatrix {
    SymMatrix sm = sym_exact(mm);
    const double lo = min_eigenvalue(sm);
    if (lo < 0.0) {
      require(lo >= -1e-3 * scale, errc::noisy_flow,
              std::string(name) + " recovered indefinite");
      Eigen::SelfAdjointEigenSolver<Mat> es(sm.m);
      Vec lam = es.eigenvalues().cwiseMax(0.0);
      sm = sym_exact(es.eigenvectors() * lam.asDiagonal() *
                     es.eigenvectors().transpose());
    }
    return sm;
  };

  OperatorSet ops;
  ops.n = n;
  ops.B = settle(Brec, "B");
  ops.C = settle(Crec, "C");
  ops.D = Drec;
  ops.alpha = alpha;
  ops.trace_B = ops.B.m.trace();
  ops.trace_D = ops.D.trace();
  return ops;
}

struct MomentReport {
  double sup = 0.0;
  bool finite = true;
};

// sup over the trajectory grid of the second absolute moment of
// mu(t) = apply_to_initial(K(t), mu0), evaluated in closed form.
inline MomentReport moment_diagnostic(const Trajectory& traj,
                                      const InitialMeasure& mu0) {
  MomentReport rep;
  for (const EvolutionState& st : traj.states) {
    const double m2 = apply_to_initial(kernel_at(st), mu0).second_moment();
    if (!std::isfinite(m2)) rep.finite = false;
    rep.sup = std::max(rep.sup, m2);
  }
  return rep;
}

}  // namespace mehler
