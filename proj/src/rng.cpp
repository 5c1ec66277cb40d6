#include "stmpc/rng.hpp"

#include "sampler_tables.hpp"

#include <bit>
#include <cmath>

namespace stmpc {

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  using namespace philox_const;
  for (int round = 0; round < kRounds; ++round) {
    const std::uint64_t prod0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t prod1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(prod0 >> 32);
    const std::uint32_t lo0 = static_cast<std::uint32_t>(prod0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(prod1 >> 32);
    const std::uint32_t lo1 = static_cast<std::uint32_t>(prod1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

// Coefficient tables shared (by value) with the AVX2 kernel. Kept here in
// one place so both paths are generated from the same literals.
namespace sampler_detail {

const double kAcklamA[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                            -2.759285104469687e+02, 1.383577518672690e+02,
                            -3.066479806614716e+01, 2.506628277459239e+00};
const double kAcklamB[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                            -1.556989798598866e+02, 6.680131188771972e+01,
                            -1.328068155288572e+01};
const double kAcklamC[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                            -2.400758277161838e+00, -2.549732539343734e+00,
                            4.374664141464968e+00,  2.938163982698783e+00};
const double kAcklamD[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                            2.445134137142996e+00, 3.754408661907416e+00};
const double kPLow = 0.02425;
const double kSqrt2 = 1.4142135623730951;
const double kLn2 = 0.6931471805599453;
// odd-series coefficients of atanh(t): t^2/3, t^4/5, ...
const double kAtanh[8] = {1.0 / 3.0,  1.0 / 5.0,  1.0 / 7.0,  1.0 / 9.0,
                          1.0 / 11.0, 1.0 / 13.0, 1.0 / 15.0, 1.0 / 17.0};

}  // namespace sampler_detail

double sampler_log(double x) {
  using namespace sampler_detail;
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
  double e = static_cast<double>(static_cast<std::int64_t>((bits >> 52) & 0x7FF) - 1023);
  double m = std::bit_cast<double>((bits & 0x000FFFFFFFFFFFFFull) | 0x3FF0000000000000ull);
  if (m > kSqrt2) {
    m = m * 0.5;
    e = e + 1.0;
  }
  const double t = (m - 1.0) / (m + 1.0);
  const double s = t * t;
  double p = kAtanh[7];
  p = p * s + kAtanh[6];
  p = p * s + kAtanh[5];
  p = p * s + kAtanh[4];
  p = p * s + kAtanh[3];
  p = p * s + kAtanh[2];
  p = p * s + kAtanh[1];
  p = p * s + kAtanh[0];
  const double atanh_t = t + t * (s * p);
  return e * kLn2 + 2.0 * atanh_t;
}

double sampler_norminv(double u) {
  using namespace sampler_detail;
  const double* a = kAcklamA;
  const double* b = kAcklamB;
  const double* c = kAcklamC;
  const double* d = kAcklamD;
  if (u < kPLow) {
    const double q = std::sqrt(-2.0 * sampler_log(u));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (u > 1.0 - kPLow) {
    const double q = std::sqrt(-2.0 * sampler_log(1.0 - u));
    return -((((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
             ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0));
  }
  const double q = u - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

std::array<double, 2> uniform_pair(const NoiseStreamKey& key, std::uint32_t sample,
                                   std::uint32_t step, std::uint32_t block) {
  const std::array<std::uint32_t, 2> k = {static_cast<std::uint32_t>(key.seed),
                                          static_cast<std::uint32_t>(key.seed >> 32)};
  const std::array<std::uint32_t, 4> ctr = {sample, step, block, key.tag};
  const auto words = philox4x32(ctr, k);
  const std::uint64_t w0 = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  const std::uint64_t w1 = (static_cast<std::uint64_t>(words[2]) << 32) | words[3];
  return {u64_to_unit_double(w0), u64_to_unit_double(w1)};
}

std::array<double, 2> normal_pair(const NoiseStreamKey& key, std::uint32_t sample,
                                  std::uint32_t step, std::uint32_t block) {
  const auto u = uniform_pair(key, sample, step, block);
  return {sampler_norminv(u[0]), sampler_norminv(u[1])};
}

}  // namespace stmpc
