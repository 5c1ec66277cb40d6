// Scalar reference kernel. The AVX2 variant replicates this operation
// sequence lane-for-lane; the equivalence test asserts bitwise equality.
// Keep any arithmetic change here in sync with em_avx2.cpp.

#include "stmpc/sim_kernel.hpp"

#include <cmath>

namespace stmpc::detail {

void em_steps_scalar(EmBatch& batch, const double* A, const double* L, double h,
                     double sqrt_h, int nsteps, std::uint32_t step_base, int begin, int end) {
  const int nx = batch.nx;
  const int count = batch.count;
  const int blocks = (nx + 1) / 2;
  double* x = batch.x.data();
  const double* drift = batch.drift.data();

  double xold[4];
  double xi[4];
  double xnew[4];

  for (int s = begin; s < end; ++s) {
    const std::uint32_t sample = batch.sample_base + static_cast<std::uint32_t>(s);
    for (int i = 0; i < nsteps; ++i) {
      const std::uint32_t step = step_base + static_cast<std::uint32_t>(i);
      for (int b = 0; b < blocks; ++b) {
        const auto pair = normal_pair(batch.key, sample, step, static_cast<std::uint32_t>(b));
        xi[2 * b] = pair[0];
        if (2 * b + 1 < 4) xi[2 * b + 1] = pair[1];
      }
      for (int c = 0; c < nx; ++c) xold[c] = x[c * count + s];
      for (int c = 0; c < nx; ++c) {
        double acc = drift[c * count + s];
        for (int j = 0; j < nx; ++j) acc = acc + A[c * nx + j] * xold[j];
        double noise = 0.0;
        for (int j = 0; j < nx; ++j) noise = noise + L[c * nx + j] * xi[j];
        xnew[c] = xold[c] + h * acc + sqrt_h * noise;
      }
      for (int c = 0; c < nx; ++c) x[c * count + s] = xnew[c];
    }
  }
}

}  // namespace stmpc::detail
