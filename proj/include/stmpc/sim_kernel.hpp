#pragma once

#include "stmpc/model.hpp"
#include "stmpc/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace stmpc {

enum class SimKernel { Auto, Scalar, Avx2 };

/// Structure-of-arrays batch of SDE sample paths. Component c of sample s
/// lives at x[c * count + s]. Sample s draws noise from the stream indexed
/// by sample_base + s, so results are independent of how a run is split
/// into batches or threads.
struct EmBatch {
  int nx = 0;
  int count = 0;
  std::uint32_t sample_base = 0;
  NoiseStreamKey key;
  std::vector<double> x;      ///< states, SoA
  std::vector<double> drift;  ///< per-sample constant drift offset B u_s, SoA

  static EmBatch make(int nx, int count, std::uint32_t sample_base, NoiseStreamKey key);
};

/// Advance every sample by nsteps Euler-Maruyama steps of size h:
///   x <- x + h (A x + b) + sqrt(h) L xi,   xi ~ N(0, I)
/// where L L' = Q and b is the batch's per-sample drift. Step i uses noise
/// counter step_base + i. The scalar and AVX2 kernels produce bit-identical
/// results; Auto picks AVX2 when the CPU supports it (overridable with
/// STMPC_SIM_KERNEL=scalar|avx2).
void em_steps(EmBatch& batch, const Matrix& A, const Matrix& L, double h, int nsteps,
              std::uint32_t step_base, SimKernel kernel = SimKernel::Auto);

/// Kernel that Auto resolves to on this machine.
SimKernel active_kernel();
std::string kernel_name(SimKernel k);
bool avx2_available();

namespace detail {
void em_steps_scalar(EmBatch& batch, const double* A, const double* L, double h,
                     double sqrt_h, int nsteps, std::uint32_t step_base, int begin, int end);
void em_steps_avx2(EmBatch& batch, const double* A, const double* L, double h, double sqrt_h,
                   int nsteps, std::uint32_t step_base);
}  // namespace detail

}  // namespace stmpc
