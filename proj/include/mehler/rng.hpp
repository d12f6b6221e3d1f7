#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "mehler/common.hpp"

namespace mehler {

// Counter-based generator (Philox 4x32, 10 rounds). A block is a pure
// function of (counter, key), so any (seed, sample, step) address yields the
// same numbers no matter which worker asks, in which order — the whole
// reproducible-parallelism story rests on this.
struct Philox4x32 {
  static constexpr uint32_t M0 = 0xD2511F53u;
  static constexpr uint32_t M1 = 0xCD9E8D57u;
  static constexpr uint32_t W0 = 0x9E3779B9u;
  static constexpr uint32_t W1 = 0xBB67AE85u;

  static std::array<uint32_t, 4> block(std::array<uint32_t, 4> ctr,
                                       std::array<uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += W0;
        key[1] += W1;
      }
      const uint64_t p0 = static_cast<uint64_t>(M0) * ctr[0];
      const uint64_t p1 = static_cast<uint64_t>(M1) * ctr[2];
      ctr = {static_cast<uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<uint32_t>(p1),
             static_cast<uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<uint32_t>(p0)};
    }
    return ctr;
  }
};

// Stream of doubles addressed by (seed, sample, step). The counter layout is
// {block, step, sample, 0} with the seed as the key, so distinct addresses
// never share a block. Uniforms lie in (0, 1]; normals come from Box-Muller
// pairs.
class NormalStream {
 public:
  NormalStream(uint64_t seed, uint64_t sample, uint64_t step)
      : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
        sample_(static_cast<uint32_t>(sample)),
        step_(static_cast<uint32_t>(step)) {}

  uint64_t next_u64() {
    if (u64_count_ == 0) refill();
    return u64_buf_[--u64_count_];
  }

  // Uniform on (0, 1]: 53 random bits, never exactly 0, so log() is safe.
  double next_uniform() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double next() {
    if (normal_count_ == 0) {
      const double u1 = next_uniform();
      const double u2 = next_uniform();
      const double r = std::sqrt(-2.0 * std::log(u1));
      const double a = 2.0 * std::numbers::pi * u2;
      normal_buf_[0] = r * std::sin(a);
      normal_buf_[1] = r * std::cos(a);
      normal_count_ = 2;
    }
    return normal_buf_[--normal_count_];
  }

  template <typename Vector>
  void fill_normal(Vector& out) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = next();
  }

 private:
  void refill() {
    const auto w = Philox4x32::block({block_++, step_, sample_, 0u}, key_);
    u64_buf_[1] = (static_cast<uint64_t>(w[0]) << 32) | w[1];
    u64_buf_[0] = (static_cast<uint64_t>(w[2]) << 32) | w[3];
    u64_count_ = 2;
  }

  std::array<uint32_t, 2> key_;
  uint32_t sample_;
  uint32_t step_;
  uint32_t block_ = 0;
  std::array<uint64_t, 2> u64_buf_{};
  int u64_count_ = 0;
  std::array<double, 2> normal_buf_{};
  int normal_count_ = 0;
};

}  // namespace mehler
