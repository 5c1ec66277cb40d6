#include "stmpc/sim_kernel.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace stmpc {

EmBatch EmBatch::make(int nx, int count, std::uint32_t sample_base, NoiseStreamKey key) {
  EmBatch b;
  b.nx = nx;
  b.count = count;
  b.sample_base = sample_base;
  b.key = key;
  b.x.assign(static_cast<std::size_t>(nx) * count, 0.0);
  b.drift.assign(static_cast<std::size_t>(nx) * count, 0.0);
  return b;
}

bool avx2_available() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

SimKernel active_kernel() {
  static const SimKernel chosen = [] {
    if (const char* env = std::getenv("STMPC_SIM_KERNEL")) {
      const std::string v(env);
      if (v == "scalar") return SimKernel::Scalar;
      if (v == "avx2") return SimKernel::Avx2;
    }
    return avx2_available() ? SimKernel::Avx2 : SimKernel::Scalar;
  }();
  return chosen;
}

std::string kernel_name(SimKernel k) {
  switch (k) {
    case SimKernel::Scalar: return "scalar";
    case SimKernel::Avx2: return "avx2";
    default: return "auto";
  }
}

void em_steps(EmBatch& batch, const Matrix& A, const Matrix& L, double h, int nsteps,
              std::uint32_t step_base, SimKernel kernel) {
  const int nx = batch.nx;
  if (nx < 1 || nx > 4) {
    throw std::invalid_argument("em_steps: state dimension must be in [1, 4]");
  }
  if (A.rows() != nx || A.cols() != nx || L.rows() != nx || L.cols() != nx) {
    throw std::invalid_argument("em_steps: A / L dimension mismatch");
  }
  if (nsteps < 0 || h < 0.0) throw std::invalid_argument("em_steps: bad step parameters");

  double a[16];
  double l[16];
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < nx; ++j) {
      a[i * nx + j] = A(i, j);
      l[i * nx + j] = L(i, j);
    }
  }
  const double sqrt_h = std::sqrt(h);

  SimKernel k = kernel == SimKernel::Auto ? active_kernel() : kernel;
  if (k == SimKernel::Avx2 && !avx2_available()) {
    throw std::runtime_error("em_steps: AVX2 kernel requested but not supported");
  }
  if (k == SimKernel::Avx2) {
    detail::em_steps_avx2(batch, a, l, h, sqrt_h, nsteps, step_base);
  } else {
    detail::em_steps_scalar(batch, a, l, h, sqrt_h, nsteps, step_base, 0, batch.count);
  }
}

}  // namespace stmpc
