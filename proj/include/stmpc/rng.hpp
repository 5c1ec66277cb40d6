#pragma once

#include <array>
#include <cstdint>

namespace stmpc {

/// Philox-4x32-10 counter-based generator (Salmon et al. construction).
/// Pure integer arithmetic: the same (counter, key) yields the same output
/// on every platform, which is what makes per-sample streams reproducible
/// independently of batching or thread decomposition.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

namespace philox_const {
inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
inline constexpr int kRounds = 10;
}  // namespace philox_const

/// Map a 64-bit word to a uniform double in (0, 1): 52 mantissa bits plus a
/// half-ulp offset so the endpoints are excluded. 52 bits (not 53) keeps the
/// integer-to-double conversion exact in the vector kernel as well.
inline double u64_to_unit_double(std::uint64_t bits) {
  return static_cast<double>(bits >> 12) * 0x1.0p-52 + 0x1.0p-53;
}

/// Inverse normal CDF for sampling. Same rational approximation as the
/// chance module's quantile but with a fixed, division/sqrt/log-only
/// operation sequence that the AVX2 kernel replicates lane-for-lane, so
/// scalar and vector paths are bit-identical. Accuracy ~1.2e-9 relative.
double sampler_norminv(double u);

/// log(x) with the exact operation sequence shared by the vector kernel
/// (exponent split, [1/sqrt2, sqrt2) reduction, odd atanh series).
double sampler_log(double x);

/// Identifies one logical noise stream. Counter words: (sample, step,
/// block, tag); key words from the 64-bit seed.
struct NoiseStreamKey {
  std::uint64_t seed = 0;
  std::uint32_t tag = 0;
};

/// Two standard normal draws for (sample, step, block). Draw 0 comes from
/// philox words (x0, x1), draw 1 from (x2, x3).
std::array<double, 2> normal_pair(const NoiseStreamKey& key, std::uint32_t sample,
                                  std::uint32_t step, std::uint32_t block);

/// Two uniform (0, 1) draws with the same counter layout.
std::array<double, 2> uniform_pair(const NoiseStreamKey& key, std::uint32_t sample,
                                   std::uint32_t step, std::uint32_t block);

}  // namespace stmpc
