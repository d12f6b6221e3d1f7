// Samples OU paths started at x = 0.8, prints a coarse terminal histogram,
// and estimates one- and two-time cylinder masses with error bars.

#include <cstdio>
#include <vector>

#include "mehler/mehler.hpp"

using namespace mehler;

int main() {
  Mat B = Mat::Identity(1, 1);
  Mat D = -Mat::Identity(1, 1);
  const OperatorSet ou = validate_operator_set(B, Mat::Zero(1, 1), D, 0.0);

  Vec x(1);
  x << 0.8;
  const TimeGrid grid = TimeGrid::uniform(1.0, 20);
  const PathEnsemble ens = sample_paths(ou, x, grid, 40000, 7, 1);

  std::vector<int> hist(21, 0);
  for (const PathSample& p : ens.samples) {
    const double v = p.values.back()[0];
    const int b = static_cast<int>((v + 2.1) / 0.2);
    if (b >= 0 && b < 21) ++hist[static_cast<size_t>(b)];
  }
  std::printf("terminal histogram (x in [-2.1, 2.1], 0.2 bins):\n");
  for (int b = 0; b < 21; ++b) {
    std::printf("%+5.1f │", -2.1 + 0.2 * b + 0.1);
    for (int s = 0; s < hist[static_cast<size_t>(b)] / 60; ++s)
      std::printf("#");
    std::printf("\n");
  }

  CylinderSpec positive;
  Vec lo(1), hi(1);
  lo << 0.0;
  hi << 1e12;
  positive.terminal = Box{lo, hi};
  const CylinderEstimate one = cylinder_mass(ens, positive);

  CylinderSpec two = positive;
  Vec mlo(1), mhi(1);
  mlo << 0.2;
  mhi << 1e12;
  two.constraints.emplace_back(grid.times[10], Box{mlo, mhi});
  const CylinderEstimate both = cylinder_mass(ens, two);

  std::printf("\nP[X_1 >= 0]                = %.4f +- %.4f\n", one.estimate,
              one.stderr_);
  std::printf("P[X_0.5 >= 0.2, X_1 >= 0]  = %.4f +- %.4f\n", both.estimate,
              both.stderr_);
  return 0;
}
