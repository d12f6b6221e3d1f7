// Integrates a 2D flow with all operators active and tabulates the kernel
// scalars against time, then checks the semigroup property at t = 0.6 + 0.6.

#include <cstdio>

#include "mehler/mehler.hpp"

using namespace mehler;

int main() {
  Mat B(2, 2), C(2, 2), D(2, 2);
  B << 1.0, 0.3, 0.3, 0.8;
  C << 0.5, -0.1, -0.1, 0.4;
  D << -0.2, 0.6, -0.6, -0.1;
  const OperatorSet ops = validate_operator_set(B, C, D, 0.1);

  const Trajectory traj = integrate(ops, 1.2, {2400, false, 1e-10});
  std::printf("   t        s        tr P      tr Q     |R|\n");
  for (double t = 0.2; t <= 1.2001; t += 0.2) {
    const EvolutionState& st = traj.at_time(t);
    std::printf("%5.2f  %8.5f  %8.5f  %8.5f  %8.5f\n", t, st.s,
                st.P.m.trace(), st.Q.m.trace(), st.R.norm());
  }

  const GaussianKernel half = kernel_at(traj.at_time(0.6));
  const GaussianKernel full = kernel_at(traj.at_time(1.2));
  const GaussianKernel glued = compose(half, half);
  std::printf("\nsemigroup check at 0.6 + 0.6: |s - s'| = %.3e\n",
              std::abs(glued.s - full.s));

  Vec x(2), y(2);
  x << 0.4, -0.3;
  y << 0.1, 0.2;
  std::printf("kernel mass at x = (0.4, -0.3): %.6f\n",
              kernel_mass(full, x));
  std::printf("density at y = (0.1, 0.2):      %.6f\n",
              density(full, x, y));
  return 0;
}
