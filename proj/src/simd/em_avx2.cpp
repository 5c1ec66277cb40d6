// AVX2 variant of the Euler-Maruyama batch kernel. Eight samples per
// iteration: Philox words are generated 8-wide in 32-bit lanes, normals via
// the same inverse-CDF polynomial sequence as the scalar reference (no FMA,
// identical operation order), states updated 4-wide. Bitwise equality with
// em_steps_scalar is asserted by the kernel equivalence tests.

#include "stmpc/sim_kernel.hpp"

#include "../sampler_tables.hpp"

#include <immintrin.h>

namespace stmpc::detail {

namespace {

using namespace stmpc::philox_const;
using namespace stmpc::sampler_detail;

// Per-32-bit-lane multiply returning high and low product words.
inline void mul_hilo_epu32(__m256i a, __m256i m, __m256i& hi, __m256i& lo) {
  const __m256i prod_even = _mm256_mul_epu32(a, m);
  const __m256i prod_odd = _mm256_mul_epu32(_mm256_srli_epi64(a, 32), m);
  lo = _mm256_blend_epi32(prod_even, _mm256_slli_epi64(prod_odd, 32), 0xAA);
  hi = _mm256_blend_epi32(_mm256_srli_epi64(prod_even, 32), prod_odd, 0xAA);
}

struct PhiloxWords {
  __m256i x0, x1, x2, x3;
};

inline PhiloxWords philox8(__m256i c0, __m256i c1, __m256i c2, __m256i c3,
                           std::uint32_t key0, std::uint32_t key1) {
  __m256i k0 = _mm256_set1_epi32(static_cast<int>(key0));
  __m256i k1 = _mm256_set1_epi32(static_cast<int>(key1));
  const __m256i m0 = _mm256_set1_epi32(static_cast<int>(kMul0));
  const __m256i m1 = _mm256_set1_epi32(static_cast<int>(kMul1));
  const __m256i w0 = _mm256_set1_epi32(static_cast<int>(kWeyl0));
  const __m256i w1 = _mm256_set1_epi32(static_cast<int>(kWeyl1));
  for (int round = 0; round < kRounds; ++round) {
    __m256i hi0, lo0, hi1, lo1;
    mul_hilo_epu32(c0, m0, hi0, lo0);
    mul_hilo_epu32(c2, m1, hi1, lo1);
    c0 = _mm256_xor_si256(_mm256_xor_si256(hi1, c1), k0);
    c1 = lo1;
    c2 = _mm256_xor_si256(_mm256_xor_si256(hi0, c3), k1);
    c3 = lo0;
    k0 = _mm256_add_epi32(k0, w0);
    k1 = _mm256_add_epi32(k1, w1);
  }
  return {c0, c1, c2, c3};
}

// Exact conversion of 64-bit lanes holding values < 2^52.
inline __m256d u52_to_double(__m256i v) {
  const __m256i magic = _mm256_set1_epi64x(0x4330000000000000ll);
  return _mm256_sub_pd(_mm256_castsi256_pd(_mm256_or_si256(v, magic)),
                       _mm256_set1_pd(0x1.0p52));
}

inline __m256d uniform_from_u64(__m256i w) {
  const __m256d mant = u52_to_double(_mm256_srli_epi64(w, 12));
  return _mm256_add_pd(_mm256_mul_pd(mant, _mm256_set1_pd(0x1.0p-52)),
                       _mm256_set1_pd(0x1.0p-53));
}

// Mirrors sampler_log().
inline __m256d log_pd(__m256d x) {
  const __m256i bits = _mm256_castpd_si256(x);
  const __m256i e_bits =
      _mm256_and_si256(_mm256_srli_epi64(bits, 52), _mm256_set1_epi64x(0x7FF));
  __m256d e = _mm256_sub_pd(u52_to_double(e_bits), _mm256_set1_pd(1023.0));
  __m256d m = _mm256_castsi256_pd(
      _mm256_or_si256(_mm256_and_si256(bits, _mm256_set1_epi64x(0x000FFFFFFFFFFFFFll)),
                      _mm256_set1_epi64x(0x3FF0000000000000ll)));
  const __m256d gt = _mm256_cmp_pd(m, _mm256_set1_pd(kSqrt2), _CMP_GT_OQ);
  m = _mm256_blendv_pd(m, _mm256_mul_pd(m, _mm256_set1_pd(0.5)), gt);
  e = _mm256_add_pd(e, _mm256_and_pd(gt, _mm256_set1_pd(1.0)));

  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d t = _mm256_div_pd(_mm256_sub_pd(m, one), _mm256_add_pd(m, one));
  const __m256d s = _mm256_mul_pd(t, t);
  __m256d p = _mm256_set1_pd(kAtanh[7]);
  for (int i = 6; i >= 0; --i) {
    p = _mm256_add_pd(_mm256_mul_pd(p, s), _mm256_set1_pd(kAtanh[i]));
  }
  const __m256d atanh_t = _mm256_add_pd(t, _mm256_mul_pd(t, _mm256_mul_pd(s, p)));
  return _mm256_add_pd(_mm256_mul_pd(e, _mm256_set1_pd(kLn2)),
                       _mm256_mul_pd(_mm256_set1_pd(2.0), atanh_t));
}

// Mirrors sampler_norminv().
inline __m256d norminv_pd(__m256d u) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d plow = _mm256_set1_pd(kPLow);
  const __m256d lower = _mm256_cmp_pd(u, plow, _CMP_LT_OQ);
  const __m256d upper = _mm256_cmp_pd(u, _mm256_sub_pd(one, plow), _CMP_GT_OQ);
  const __m256d tail_mask = _mm256_or_pd(lower, upper);

  const __m256d ut = _mm256_blendv_pd(u, _mm256_sub_pd(one, u), upper);
  const __m256d q =
      _mm256_sqrt_pd(_mm256_mul_pd(_mm256_set1_pd(-2.0), log_pd(ut)));
  __m256d num = _mm256_set1_pd(kAcklamC[0]);
  for (int i = 1; i < 6; ++i) {
    num = _mm256_add_pd(_mm256_mul_pd(num, q), _mm256_set1_pd(kAcklamC[i]));
  }
  __m256d den = _mm256_set1_pd(kAcklamD[0]);
  for (int i = 1; i < 4; ++i) {
    den = _mm256_add_pd(_mm256_mul_pd(den, q), _mm256_set1_pd(kAcklamD[i]));
  }
  den = _mm256_add_pd(_mm256_mul_pd(den, q), one);
  __m256d tail = _mm256_div_pd(num, den);
  const __m256d signbit = _mm256_set1_pd(-0.0);
  tail = _mm256_blendv_pd(tail, _mm256_xor_pd(tail, signbit), upper);

  const __m256d qc = _mm256_sub_pd(u, _mm256_set1_pd(0.5));
  const __m256d r = _mm256_mul_pd(qc, qc);
  __m256d numc = _mm256_set1_pd(kAcklamA[0]);
  for (int i = 1; i < 6; ++i) {
    numc = _mm256_add_pd(_mm256_mul_pd(numc, r), _mm256_set1_pd(kAcklamA[i]));
  }
  __m256d denc = _mm256_set1_pd(kAcklamB[0]);
  for (int i = 1; i < 5; ++i) {
    denc = _mm256_add_pd(_mm256_mul_pd(denc, r), _mm256_set1_pd(kAcklamB[i]));
  }
  denc = _mm256_add_pd(_mm256_mul_pd(denc, r), one);
  const __m256d central = _mm256_div_pd(_mm256_mul_pd(numc, qc), denc);

  return _mm256_blendv_pd(central, tail, tail_mask);
}

}  // namespace

void em_steps_avx2(EmBatch& batch, const double* A, const double* L, double h, double sqrt_h,
                   int nsteps, std::uint32_t step_base) {
  const int nx = batch.nx;
  const int count = batch.count;
  const int blocks = (nx + 1) / 2;
  const int full = count - count % 8;
  double* x = batch.x.data();
  const double* drift = batch.drift.data();

  const std::uint32_t key0 = static_cast<std::uint32_t>(batch.key.seed);
  const std::uint32_t key1 = static_cast<std::uint32_t>(batch.key.seed >> 32);
  const __m256i lane_ids = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
  const __m256i tag = _mm256_set1_epi32(static_cast<int>(batch.key.tag));
  const __m256d vh = _mm256_set1_pd(h);
  const __m256d vs = _mm256_set1_pd(sqrt_h);

  for (int s = 0; s < full; s += 8) {
    const __m256i samples = _mm256_add_epi32(
        _mm256_set1_epi32(static_cast<int>(batch.sample_base + static_cast<std::uint32_t>(s))),
        lane_ids);
    for (int i = 0; i < nsteps; ++i) {
      const __m256i step =
          _mm256_set1_epi32(static_cast<int>(step_base + static_cast<std::uint32_t>(i)));
      // xi[j][half]: normal draw j for samples s..s+3 (half 0) / s+4..s+7 (half 1)
      __m256d xi[4][2];
      for (int b = 0; b < blocks; ++b) {
        const PhiloxWords words =
            philox8(samples, step, _mm256_set1_epi32(b), tag, key0, key1);
        const __m256i w0a = _mm256_unpacklo_epi32(words.x1, words.x0);  // instances 0,1,4,5
        const __m256i w0b = _mm256_unpackhi_epi32(words.x1, words.x0);  // instances 2,3,6,7
        const __m256i w1a = _mm256_unpacklo_epi32(words.x3, words.x2);
        const __m256i w1b = _mm256_unpackhi_epi32(words.x3, words.x2);
        const __m256d n0a = norminv_pd(uniform_from_u64(w0a));
        const __m256d n0b = norminv_pd(uniform_from_u64(w0b));
        const __m256d n1a = norminv_pd(uniform_from_u64(w1a));
        const __m256d n1b = norminv_pd(uniform_from_u64(w1b));
        xi[2 * b][0] = _mm256_permute2f128_pd(n0a, n0b, 0x20);
        xi[2 * b][1] = _mm256_permute2f128_pd(n0a, n0b, 0x31);
        if (2 * b + 1 < 4) {
          xi[2 * b + 1][0] = _mm256_permute2f128_pd(n1a, n1b, 0x20);
          xi[2 * b + 1][1] = _mm256_permute2f128_pd(n1a, n1b, 0x31);
        }
      }
      for (int half = 0; half < 2; ++half) {
        const int sg = s + 4 * half;
        __m256d xold[4];
        __m256d xnew[4];
        for (int c = 0; c < nx; ++c) xold[c] = _mm256_loadu_pd(&x[c * count + sg]);
        for (int c = 0; c < nx; ++c) {
          __m256d acc = _mm256_loadu_pd(&drift[c * count + sg]);
          for (int j = 0; j < nx; ++j) {
            acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(A[c * nx + j]), xold[j]));
          }
          __m256d noise = _mm256_setzero_pd();
          for (int j = 0; j < nx; ++j) {
            noise = _mm256_add_pd(
                noise, _mm256_mul_pd(_mm256_set1_pd(L[c * nx + j]), xi[j][half]));
          }
          xnew[c] = _mm256_add_pd(_mm256_add_pd(xold[c], _mm256_mul_pd(vh, acc)),
                                  _mm256_mul_pd(vs, noise));
        }
        for (int c = 0; c < nx; ++c) _mm256_storeu_pd(&x[c * count + sg], xnew[c]);
      }
    }
  }

  if (full < count) {
    em_steps_scalar(batch, A, L, h, sqrt_h, nsteps, step_base, full, count);
  }
}

}  // namespace stmpc::detail
