#pragma once

// Internal: literal tables behind sampler_norminv / sampler_log, shared by
// the scalar reference (rng.cpp) and the AVX2 kernel so both paths evaluate
// the same polynomials in the same order.

namespace stmpc::sampler_detail {

extern const double kAcklamA[6];
extern const double kAcklamB[5];
extern const double kAcklamC[6];
extern const double kAcklamD[4];
extern const double kPLow;
extern const double kSqrt2;
extern const double kLn2;
extern const double kAtanh[8];

}  // namespace stmpc::sampler_detail
