#include "stmpc/transcription.hpp"

#include "stmpc/chance.hpp"
#include "stmpc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace stmpc {

PiecewiseConstant shift_reference(const PiecewiseConstant& global, double t0) {
  PiecewiseConstant local;
  local.knots.emplace_back(0.0, global.eval(t0));
  for (const auto& [t, v] : global.knots) {
    if (t > t0) local.knots.emplace_back(t - t0, v);
  }
  return local;
}

namespace {

// sym-coordinate weights w with H' P H = w . pack(P)
Vector hh_sym_weights(const Vector& H) {
  const int n = static_cast<int>(H.size());
  Vector w(sym_size(n));
  int idx = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      w[idx++] = (i == j) ? H[i] * H[i] : 2.0 * H[i] * H[j];
    }
  }
  return w;
}

// trace(M P) = w . pack(P) for symmetric M
Vector trace_sym_weights(const Matrix& M) {
  const int n = static_cast<int>(M.rows());
  Vector w(sym_size(n));
  int idx = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) w[idx++] = (i == j) ? M(i, i) : 2.0 * M(i, j);
  }
  return w;
}

inline int vec_index(int r, int c, int n) { return r * n + c; }

// pack(A E_ab + E_ab A') for every symmetric basis coordinate
Matrix build_lyap_sym(const Matrix& A) {
  const int n = static_cast<int>(A.rows());
  const int ns = sym_size(n);
  Matrix L(ns, ns);
  int col = 0;
  Matrix E(n, n);
  for (int a = 0; a < n; ++a) {
    for (int b = a; b < n; ++b) {
      E.setZero();
      E(a, b) = 1.0;
      E(b, a) = 1.0;
      L.col(col++) = sym_pack(A * E + E * A.transpose());
    }
  }
  return L;
}

// vec(A E_rc) for every full coordinate
Matrix build_drift_full(const Matrix& A) {
  const int n = static_cast<int>(A.rows());
  const int nf = n * n;
  Matrix L = Matrix::Zero(nf, nf);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      // A e_r e_c' has column c equal to A.col(r)
      for (int i = 0; i < n; ++i) L(vec_index(i, c, n), vec_index(r, c, n)) = A(i, r);
    }
  }
  return L;
}

}  // namespace

TranscribedProblem::TranscribedProblem(const Scenario& scenario, const GaussianBelief& belief0,
                                       double r0, const PiecewiseConstant& reference_local,
                                       const TranscribeOptions& opts)
    : scenario_(scenario), belief0_(belief0), r0_(r0), opts_(opts),
      reference_(reference_local) {
  scenario_.validate();
  belief0_.validate();
  if (belief0_.mu.size() != scenario_.model.nx()) {
    throw ValidationError("transcribe: belief dimension mismatch");
  }
  if (scenario_.delta_min > scenario_.delta_max) {
    throw ValidationError("transcribe: delta_min > delta_max");
  }

  layout_.N = scenario_.horizon_n;
  layout_.nx = scenario_.model.nx();
  layout_.nu = scenario_.model.nu();
  layout_.covariance =
      opts.force_covariance >= 0 ? opts.force_covariance != 0 : scenario_.stochastic;

  lyap_sym_ = build_lyap_sym(scenario_.model.A);
  drift_full_ = build_drift_full(scenario_.model.A);
  wcost_sym_ = trace_sym_weights(scenario_.model.C.transpose() * scenario_.cost.Wy *
                                 scenario_.model.C);

  tighten_first_input_ = belief0_.P.cwiseAbs().maxCoeff() > 1e-14;

  const bool tighten = layout_.covariance && scenario_.tightening;
  for (const auto& group : scenario_.constraints) {
    for (int t = 0; t < group.rows(); ++t) {
      const double q =
          tighten && group.epsilon < 0.5 ? normal_quantile(1.0 - group.epsilon) : 0.0;
      if (group.target == ConstraintTarget::State) {
        state_rows_.push_back({group.H[t], group.h[t], q, hh_sym_weights(group.H[t])});
      } else {
        input_rows_.push_back({group.H[t], group.h[t], q});
      }
    }
  }

  // Freeze per-node reference values on the initial-guess time grid so the
  // objective stays smooth in Delta; re-planning at the next trigger
  // re-aligns the frozen grid with real time.
  const auto& basis = radau3();
  const double dguess = 0.5 * (scenario_.delta_min + scenario_.delta_max);
  ref_nodes_.resize(layout_.N);
  for (int k = 0; k < layout_.N; ++k) {
    for (int j = 0; j < 4; ++j) {
      ref_nodes_[k][j] = reference_.eval(dguess * (k + basis.points[j]));
    }
  }
  ref_terminal_ = reference_.eval(dguess * layout_.N);
}

int TranscribedProblem::num_eq() const { return layout_.N * layout_.block_size(); }

int TranscribedProblem::num_ineq() const {
  return 3 * layout_.N * static_cast<int>(state_rows_.size()) +
         layout_.N * static_cast<int>(input_rows_.size()) + layout_.N;
}

void TranscribedProblem::equalities(const Vector& z, Vector& c, Matrix* J) const {
  const DecisionLayout& L = layout_;
  const int nx = L.nx;
  const int ns = L.ns();
  const int nf = L.nf();
  const bool cov = L.covariance;
  const Matrix& A = scenario_.model.A;
  const Matrix& B = scenario_.model.B;
  const Matrix Qd = cov ? scenario_.model.Q : Matrix::Zero(nx, nx);
  const auto& basis = radau3();

  c.setZero(num_eq());
  if (J) J->setZero(num_eq(), L.dim());

  Matrix Kmat(L.nu, nx);
  if (cov) {
    for (int r = 0; r < L.nu; ++r) {
      for (int cc = 0; cc < nx; ++cc) Kmat(r, cc) = z[L.gain() + r * nx + cc];
    }
  }
  const Matrix BK = cov ? Matrix(B * Kmat) : Matrix();

  // K-independent map: full coords dC -> sym coords of BK dC' + dC (BK)'
  Matrix cross_to_sym;
  // sym coords dP -> full coords of BK dP
  Matrix sym_to_cross;
  if (cov) {
    cross_to_sym.resize(ns, nf);
    Matrix E(nx, nx);
    for (int r = 0; r < nx; ++r) {
      for (int cc = 0; cc < nx; ++cc) {
        Matrix M1 = BK.col(cc) * Vector::Unit(nx, r).transpose();
        cross_to_sym.col(vec_index(r, cc, nx)) = sym_pack(M1 + M1.transpose());
      }
    }
    sym_to_cross.resize(nf, ns);
    int col = 0;
    for (int a = 0; a < nx; ++a) {
      for (int b = a; b < nx; ++b) {
        E.setZero();
        E(a, b) = 1.0;
        E(b, a) = 1.0;
        Matrix M = BK * E;
        for (int r = 0; r < nx; ++r) {
          for (int cc = 0; cc < nx; ++cc) sym_to_cross(vec_index(r, cc, nx), col) = M(r, cc);
        }
        ++col;
      }
    }
  }

  const int bs = L.block_size();
  const int per_node = nx + (cov ? ns + nf : 0);

  for (int k = 0; k < L.N; ++k) {
    const int base = k * bs;
    const double dk = z[L.delta(k)];
    const Vector vk = z.segment(L.v(k), L.nu);

    // head: initial condition or continuity
    if (k == 0) {
      c.segment(base, nx) = z.segment(L.mu(0, 0), nx) - belief0_.mu;
      if (J) J->block(base, L.mu(0, 0), nx, nx).setIdentity();
      if (cov) {
        c.segment(base + nx, ns) = z.segment(L.cov(0, 0), ns) - sym_pack(belief0_.P);
        if (J) J->block(base + nx, L.cov(0, 0), ns, ns).setIdentity();
      }
    } else {
      c.segment(base, nx) = z.segment(L.mu(k, 0), nx) - z.segment(L.mu(k - 1, 3), nx);
      if (J) {
        J->block(base, L.mu(k, 0), nx, nx).setIdentity();
        J->block(base, L.mu(k - 1, 3), nx, nx) = -Matrix::Identity(nx, nx);
      }
      if (cov) {
        c.segment(base + nx, ns) = z.segment(L.cov(k, 0), ns) - z.segment(L.cov(k - 1, 3), ns);
        if (J) {
          J->block(base + nx, L.cov(k, 0), ns, ns).setIdentity();
          J->block(base + nx, L.cov(k - 1, 3), ns, ns) = -Matrix::Identity(ns, ns);
        }
      }
    }

    const Matrix Pbar = cov ? sym_unpack(z.segment(L.cov(k, 0), ns), nx) : Matrix();

    // cross-covariance reset: C(k,0) = P(k,0) as a full matrix
    if (cov) {
      const int roff = base + nx + ns;
      for (int r = 0; r < nx; ++r) {
        for (int cc = 0; cc < nx; ++cc) {
          const int row = roff + vec_index(r, cc, nx);
          c[row] = z[L.cross(k, 0) + vec_index(r, cc, nx)] - Pbar(r, cc);
          if (J) {
            (*J)(row, L.cross(k, 0) + vec_index(r, cc, nx)) = 1.0;
            (*J)(row, L.cov(k, 0) + sym_index(std::min(r, cc), std::max(r, cc), nx)) -= 1.0;
          }
        }
      }
    }

    for (int i = 1; i <= 3; ++i) {
      const int noff = base + nx + (cov ? ns + nf : 0) + (i - 1) * per_node;
      const Vector mui = z.segment(L.mu(k, i), nx);

      // mean defect
      {
        Vector acc = Vector::Zero(nx);
        for (int j = 0; j < 4; ++j) acc += basis.diff(i - 1, j) * z.segment(L.mu(k, j), nx);
        const Vector fmu = A * mui + B * vk;
        c.segment(noff, nx) = acc - dk * fmu;
        if (J) {
          for (int j = 0; j < 4; ++j) {
            J->block(noff, L.mu(k, j), nx, nx) +=
                basis.diff(i - 1, j) * Matrix::Identity(nx, nx);
          }
          J->block(noff, L.mu(k, i), nx, nx) -= dk * A;
          J->block(noff, L.v(k), nx, L.nu) = -dk * B;
          J->col(L.delta(k)).segment(noff, nx) = -fmu;
        }
      }

      if (!cov) continue;

      const Matrix Pi = sym_unpack(z.segment(L.cov(k, i), ns), nx);
      Matrix Ci(nx, nx);
      for (int r = 0; r < nx; ++r) {
        for (int cc = 0; cc < nx; ++cc) {
          Ci(r, cc) = z[L.cross(k, i) + vec_index(r, cc, nx)];
        }
      }

      // covariance defect (symmetric coordinates)
      {
        const int poff = noff + nx;
        Vector acc = Vector::Zero(ns);
        for (int j = 0; j < 4; ++j) acc += basis.diff(i - 1, j) * z.segment(L.cov(k, j), ns);
        const Matrix F =
            A * Pi + Pi * A.transpose() + BK * Ci.transpose() + Ci * BK.transpose() + Qd;
        c.segment(poff, ns) = acc - dk * sym_pack(F);
        if (J) {
          for (int j = 0; j < 4; ++j) {
            J->block(poff, L.cov(k, j), ns, ns) +=
                basis.diff(i - 1, j) * Matrix::Identity(ns, ns);
          }
          J->block(poff, L.cov(k, i), ns, ns) -= dk * lyap_sym_;
          J->block(poff, L.cross(k, i), ns, nf) -= dk * cross_to_sym;
          // gain columns
          for (int kr = 0; kr < L.nu; ++kr) {
            for (int kc = 0; kc < nx; ++kc) {
              Matrix T = B.col(kr) * Ci.col(kc).transpose();
              Vector pk = sym_pack(Matrix(T + T.transpose()));
              // dF/dK_{kr,kc} = B e_kr e_kc' C' + C e_kc e_kr' B'; e_kc' C' = col kc of C
              J->col(L.gain() + kr * nx + kc).segment(poff, ns) -= dk * pk;
            }
          }
          J->col(L.delta(k)).segment(poff, ns) = -sym_pack(F);
        }
      }

      // cross-covariance defect (full coordinates); the BK P(t_k) source is
      // frozen at the interval-start covariance
      {
        const int coff = noff + nx + ns;
        Vector acc = Vector::Zero(nf);
        for (int j = 0; j < 4; ++j) {
          acc += basis.diff(i - 1, j) * z.segment(L.cross(k, j), nf);
        }
        const Matrix Fc = A * Ci + BK * Pbar;
        Vector fvec(nf);
        for (int r = 0; r < nx; ++r) {
          for (int cc = 0; cc < nx; ++cc) fvec[vec_index(r, cc, nx)] = Fc(r, cc);
        }
        c.segment(coff, nf) = acc - dk * fvec;
        if (J) {
          for (int j = 0; j < 4; ++j) {
            J->block(coff, L.cross(k, j), nf, nf) +=
                basis.diff(i - 1, j) * Matrix::Identity(nf, nf);
          }
          J->block(coff, L.cross(k, i), nf, nf) -= dk * drift_full_;
          J->block(coff, L.cov(k, 0), nf, ns) -= dk * sym_to_cross;
          for (int kr = 0; kr < L.nu; ++kr) {
            for (int kc = 0; kc < nx; ++kc) {
              // d(B K Pbar)/dK_{kr,kc} = B e_kr (row kc of Pbar)
              for (int cc = 0; cc < nx; ++cc) {
                for (int r = 0; r < nx; ++r) {
                  (*J)(coff + vec_index(r, cc, nx), L.gain() + kr * nx + kc) -=
                      dk * B(r, kr) * Pbar(kc, cc);
                }
              }
            }
          }
          J->col(L.delta(k)).segment(coff, nf) = -fvec;
        }
      }
    }
  }
}

void TranscribedProblem::inequalities(const Vector& z, Vector& c, Matrix* J) const {
  const DecisionLayout& L = layout_;
  const int nx = L.nx;
  const int ns = L.ns();
  const bool cov = L.covariance;

  c.setZero(num_ineq());
  if (J) J->setZero(num_ineq(), L.dim());

  Matrix Kmat;
  if (cov) {
    Kmat.resize(L.nu, nx);
    for (int r = 0; r < L.nu; ++r) {
      for (int cc = 0; cc < nx; ++cc) Kmat(r, cc) = z[L.gain() + r * nx + cc];
    }
  }

  // flat extension below this radicand: keeps the sqrt smooth where the
  // backoff genuinely vanishes (pinned initial covariance)
  constexpr double kRadicandFloor = 1e-14;

  int row = 0;
  // tightened state rows at every collocation node (interval starts
  // duplicate the previous node-3 point; the measured initial state is not
  // a decision): H'mu + q sqrt(H'PH) - h <= 0
  for (const auto& sr : state_rows_) {
    for (int k = 0; k < L.N; ++k) {
      for (int i = 1; i <= 3; ++i) {
        const Vector mui = z.segment(L.mu(k, i), nx);
        double value = sr.H.dot(mui) - sr.h;
        if (J) J->row(row).segment(L.mu(k, i), nx) = sr.H.transpose();
        if (cov && sr.quantile > 0.0) {
          const double radicand = sr.wP.dot(z.segment(L.cov(k, i), ns));
          if (radicand > kRadicandFloor) {
            const double backoff = sr.quantile * std::sqrt(radicand);
            value += backoff;
            if (J) {
              J->row(row).segment(L.cov(k, i), ns) =
                  (0.5 * sr.quantile * sr.quantile / backoff) * sr.wP;
            }
          }
        }
        c[row] = value;
        ++row;
      }
    }
  }

  // tightened input rows at trigger instants: the held input is Gaussian
  // with covariance K P(t_k) K', so the nominal v_k backs off by
  // q sqrt(H'K P K'H)
  for (const auto& ir : input_rows_) {
    for (int k = 0; k < L.N; ++k) {
      const Vector vk = z.segment(L.v(k), L.nu);
      double value = ir.H.dot(vk) - ir.h;
      if (J) J->row(row).segment(L.v(k), L.nu) = ir.H.transpose();
      const bool tighten = cov && ir.quantile > 0.0 && (k > 0 || tighten_first_input_);
      if (tighten) {
        const Matrix Pbar = sym_unpack(z.segment(L.cov(k, 0), ns), nx);
        const Vector w = Kmat.transpose() * ir.H;
        const double radicand = w.dot(Pbar * w);
        if (radicand > kRadicandFloor) {
          const double backoff = ir.quantile * std::sqrt(radicand);
          value += backoff;
          if (J) {
            const double scale = 0.5 * ir.quantile * ir.quantile / backoff;
            J->row(row).segment(L.cov(k, 0), ns) = scale * hh_sym_weights(w).transpose();
            const Vector pw = Pbar * w;
            for (int kr = 0; kr < L.nu; ++kr) {
              for (int kc = 0; kc < nx; ++kc) {
                (*J)(row, L.gain() + kr * nx + kc) = scale * 2.0 * ir.H[kr] * pw[kc];
              }
            }
          }
        }
      }
      c[row] = value;
      ++row;
    }
  }

  // relaxed saturated resource recursion:
  // r_{k+1} <= rho Delta_k + r_k - eta(Delta_k); the r_{k+1} <= r_max side
  // lives in the variable bounds
  const auto& rs = scenario_.resource;
  for (int k = 0; k < L.N; ++k) {
    const double rk = k == 0 ? r0_ : z[L.resource(k - 1)];
    const double dk = z[L.delta(k)];
    c[row] = z[L.resource(k)] - rk - rs.rho * dk + rs.eta(dk);
    if (J) {
      (*J)(row, L.resource(k)) = 1.0;
      if (k > 0) (*J)(row, L.resource(k - 1)) = -1.0;
      (*J)(row, L.delta(k)) = -(rs.rho - rs.eta.slope);
    }
    ++row;
  }
}

void TranscribedProblem::variable_bounds(Vector& lb, Vector& ub) const {
  const DecisionLayout& L = layout_;
  lb = Vector::Constant(L.dim(), -kInfinity);
  ub = Vector::Constant(L.dim(), kInfinity);
  for (int k = 0; k < L.N; ++k) {
    lb[L.delta(k)] = scenario_.delta_min;
    ub[L.delta(k)] = scenario_.delta_max;
    lb[L.resource(k)] = scenario_.resource.r_min;
    ub[L.resource(k)] = scenario_.resource.r_max;
  }
  if (L.covariance) {
    for (int i = 0; i < L.num_gain(); ++i) {
      lb[L.gain() + i] = -opts_.gain_bound;
      ub[L.gain() + i] = opts_.gain_bound;
    }
  }
}

void TranscribedProblem::stage_terms(const Vector& z, int k, int j, double& value,
                                     Vector* dmu, Vector* dv) const {
  const DecisionLayout& L = layout_;
  const Matrix& C = scenario_.model.C;
  const Vector mu = z.segment(L.mu(k, j), L.nx);
  const Vector v = z.segment(L.v(k), L.nu);
  // the scalar reference tracks the first output
  Vector err = C * mu;
  err[0] -= ref_nodes_[k][j];
  value = err.dot(scenario_.cost.Wy * err) + v.dot(scenario_.cost.Wu * v);
  if (dmu) *dmu = 2.0 * C.transpose() * (scenario_.cost.Wy * err);
  if (dv) *dv = 2.0 * (scenario_.cost.Wu * v);
}

double TranscribedProblem::objective(const Vector& z) const {
  const DecisionLayout& L = layout_;
  const auto& basis = radau3();
  double total = 0.0;
  for (int k = 0; k < L.N; ++k) {
    const double dk = z[L.delta(k)];
    double stage_sum = 0.0;
    for (int j = 0; j < 4; ++j) {
      double val = 0.0;
      stage_terms(z, k, j, val, nullptr, nullptr);
      if (opts_.expected_cost_term && L.covariance) {
        val += wcost_sym_.dot(z.segment(L.cov(k, j), L.ns()));
      }
      stage_sum += basis.quad[j] * val;
    }
    total += dk * stage_sum;
    const double dslack = scenario_.delta_max - dk;
    total += scenario_.delta_preference_weight * dslack * dslack;
  }
  if (scenario_.cost.Wterm.size() > 0) {
    Vector err = scenario_.model.C * z.segment(L.mu(L.N - 1, 3), L.nx);
    err[0] -= ref_terminal_;
    total += err.dot(scenario_.cost.Wterm * err);
  }
  return total;
}

Vector TranscribedProblem::objective_gradient(const Vector& z) const {
  const DecisionLayout& L = layout_;
  const auto& basis = radau3();
  Vector g = Vector::Zero(L.dim());
  Vector dmu(L.nx), dv(L.nu);
  for (int k = 0; k < L.N; ++k) {
    const double dk = z[L.delta(k)];
    double stage_sum = 0.0;
    for (int j = 0; j < 4; ++j) {
      double val = 0.0;
      stage_terms(z, k, j, val, &dmu, &dv);
      if (opts_.expected_cost_term && L.covariance) {
        val += wcost_sym_.dot(z.segment(L.cov(k, j), L.ns()));
        g.segment(L.cov(k, j), L.ns()) += dk * basis.quad[j] * wcost_sym_;
      }
      stage_sum += basis.quad[j] * val;
      g.segment(L.mu(k, j), L.nx) += dk * basis.quad[j] * dmu;
      g.segment(L.v(k), L.nu) += dk * basis.quad[j] * dv;
    }
    g[L.delta(k)] += stage_sum;
    g[L.delta(k)] += -2.0 * scenario_.delta_preference_weight * (scenario_.delta_max - dk);
  }
  if (scenario_.cost.Wterm.size() > 0) {
    Vector err = scenario_.model.C * z.segment(L.mu(L.N - 1, 3), L.nx);
    err[0] -= ref_terminal_;
    g.segment(L.mu(L.N - 1, 3), L.nx) +=
        2.0 * scenario_.model.C.transpose() * (scenario_.cost.Wterm * err);
  }
  return g;
}

bool TranscribedProblem::objective_hessian(const Vector& z, Matrix& H) const {
  const DecisionLayout& L = layout_;
  const auto& basis = radau3();
  const Matrix Hmu = 2.0 * scenario_.model.C.transpose() * scenario_.cost.Wy * scenario_.model.C;
  const Matrix Hv = 2.0 * scenario_.cost.Wu;
  H = Matrix::Zero(L.dim(), L.dim());
  Vector dmu(L.nx), dv(L.nu);
  for (int k = 0; k < L.N; ++k) {
    const double dk = z[L.delta(k)];
    for (int j = 0; j < 4; ++j) {
      const double w = basis.quad[j];
      H.block(L.mu(k, j), L.mu(k, j), L.nx, L.nx) += dk * w * Hmu;
      H.block(L.v(k), L.v(k), L.nu, L.nu) += dk * w * Hv;
      double val = 0.0;
      stage_terms(z, k, j, val, &dmu, &dv);
      H.col(L.delta(k)).segment(L.mu(k, j), L.nx) += w * dmu;
      H.row(L.delta(k)).segment(L.mu(k, j), L.nx) += w * dmu.transpose();
      H.col(L.delta(k)).segment(L.v(k), L.nu) += w * dv;
      H.row(L.delta(k)).segment(L.v(k), L.nu) += w * dv.transpose();
      if (opts_.expected_cost_term && L.covariance) {
        H.col(L.delta(k)).segment(L.cov(k, j), L.ns()) += w * wcost_sym_;
        H.row(L.delta(k)).segment(L.cov(k, j), L.ns()) += w * wcost_sym_.transpose();
      }
    }
    H(L.delta(k), L.delta(k)) += 2.0 * scenario_.delta_preference_weight;
  }
  if (scenario_.cost.Wterm.size() > 0) {
    H.block(L.mu(L.N - 1, 3), L.mu(L.N - 1, 3), L.nx, L.nx) +=
        2.0 * scenario_.model.C.transpose() * scenario_.cost.Wterm * scenario_.model.C;
  }
  return true;
}

bool TranscribedProblem::lagrangian_hessian(const Vector& z, const Vector& lambda_eq,
                                            const Vector& lambda_ineq, Matrix& H) const {
  const DecisionLayout& L = layout_;
  const int nx = L.nx;
  const int ns = L.ns();
  const int nf = L.nf();
  const bool cov = L.covariance;
  const Matrix& A = scenario_.model.A;
  const Matrix& B = scenario_.model.B;

  objective_hessian(z, H);
  if (lambda_eq.size() != num_eq() || lambda_ineq.size() != num_ineq()) return true;

  Matrix Kmat;
  Matrix cross_to_sym, sym_to_cross;
  if (cov) {
    Kmat.resize(L.nu, nx);
    for (int r = 0; r < L.nu; ++r) {
      for (int cc = 0; cc < nx; ++cc) Kmat(r, cc) = z[L.gain() + r * nx + cc];
    }
    const Matrix BK = B * Kmat;
    cross_to_sym.resize(ns, nf);
    for (int r = 0; r < nx; ++r) {
      for (int cc = 0; cc < nx; ++cc) {
        Matrix M1 = BK.col(cc) * Vector::Unit(nx, r).transpose();
        cross_to_sym.col(vec_index(r, cc, nx)) = sym_pack(M1 + M1.transpose());
      }
    }
    sym_to_cross.resize(nf, ns);
    Matrix E(nx, nx);
    int col = 0;
    for (int a = 0; a < nx; ++a) {
      for (int b = a; b < nx; ++b) {
        E.setZero();
        E(a, b) = 1.0;
        E(b, a) = 1.0;
        Matrix M = BK * E;
        for (int r = 0; r < nx; ++r) {
          for (int cc = 0; cc < nx; ++cc) sym_to_cross(vec_index(r, cc, nx), col) = M(r, cc);
        }
        ++col;
      }
    }
  }

  auto add_sym = [&](int row, int col, double v) {
    H(row, col) += v;
    if (row != col) H(col, row) += v;
  };
  auto add_vec = [&](int row_base, int col, const Vector& v) {
    for (int i = 0; i < v.size(); ++i) add_sym(row_base + i, col, v[i]);
  };

  const int bs = L.block_size();
  const int per_node = nx + (cov ? ns + nf : 0);

  for (int k = 0; k < L.N; ++k) {
    const int base = k * bs;
    const double dk = z[L.delta(k)];
    const Matrix Pbar = cov ? sym_unpack(z.segment(L.cov(k, 0), ns), nx) : Matrix();

    for (int i = 1; i <= 3; ++i) {
      const int noff = base + nx + (cov ? ns + nf : 0) + (i - 1) * per_node;

      // mean defect: -Delta (A mu_i + B v_k) is bilinear in (Delta, mu/v)
      const Vector lmu = lambda_eq.segment(noff, nx);
      add_vec(L.mu(k, i), L.delta(k), Vector(-A.transpose() * lmu));
      add_vec(L.v(k), L.delta(k), Vector(-B.transpose() * lmu));

      if (!cov) continue;

      const Vector lP = lambda_eq.segment(noff + nx, ns);
      const Vector lC = lambda_eq.segment(noff + nx + ns, nf);
      Matrix Ci(nx, nx);
      for (int r = 0; r < nx; ++r) {
        for (int cc = 0; cc < nx; ++cc) {
          Ci(r, cc) = z[L.cross(k, i) + vec_index(r, cc, nx)];
        }
      }
      // trace-weight matrix W with lP' pack(F) = tr(W F)
      Matrix W(nx, nx);
      {
        int idx = 0;
        for (int a = 0; a < nx; ++a) {
          for (int b = a; b < nx; ++b) {
            W(a, b) = a == b ? lP[idx] : 0.5 * lP[idx];
            W(b, a) = W(a, b);
            ++idx;
          }
        }
      }

      // covariance defect: cross terms with Delta, K x cross bilinearity
      add_vec(L.cov(k, i), L.delta(k), Vector(-lyap_sym_.transpose() * lP));
      add_vec(L.cross(k, i), L.delta(k), Vector(-cross_to_sym.transpose() * lP));
      const Matrix WB = W * B;
      for (int kr = 0; kr < L.nu; ++kr) {
        for (int kc = 0; kc < nx; ++kc) {
          Matrix T = B.col(kr) * Ci.col(kc).transpose();
          add_sym(L.gain() + kr * nx + kc, L.delta(k),
                  -lP.dot(sym_pack(Matrix(T + T.transpose()))));
          for (int a = 0; a < nx; ++a) {
            // d^2 / dK_{kr,kc} dC_{a,kc'}: nonzero only for kc' == kc
            add_sym(L.gain() + kr * nx + kc, L.cross(k, i) + vec_index(a, kc, nx),
                    -2.0 * dk * WB(a, kr));
          }
        }
      }

      // cross-covariance defect: Delta crosses and K x P(t_k) bilinearity
      Matrix Lc(nx, nx);
      for (int r = 0; r < nx; ++r) {
        for (int cc = 0; cc < nx; ++cc) Lc(r, cc) = lC[vec_index(r, cc, nx)];
      }
      add_vec(L.cross(k, i), L.delta(k), Vector(-drift_full_.transpose() * lC));
      add_vec(L.cov(k, 0), L.delta(k), Vector(-sym_to_cross.transpose() * lC));
      const Matrix BtLcP = B.transpose() * Lc * Pbar;
      const Matrix LctB = Lc.transpose() * B;
      for (int kr = 0; kr < L.nu; ++kr) {
        for (int kc = 0; kc < nx; ++kc) {
          add_sym(L.gain() + kr * nx + kc, L.delta(k), -BtLcP(kr, kc));
          for (int a = 0; a < nx; ++a) {
            for (int b = a; b < nx; ++b) {
              double val = 0.0;
              if (kc == a) val += LctB(b, kr);
              if (a != b && kc == b) val += LctB(a, kr);
              if (val != 0.0) {
                add_sym(L.gain() + kr * nx + kc, L.cov(k, 0) + sym_index(a, b, nx),
                        -dk * val);
              }
            }
          }
        }
      }
    }
  }

  // inequality curvature: the sqrt backoffs
  constexpr double kRadicandFloor = 1e-14;
  int row = 0;
  for (const auto& sr : state_rows_) {
    for (int k = 0; k < L.N; ++k) {
      for (int i = 1; i <= 3; ++i, ++row) {
        const double lam = lambda_ineq[row];
        if (lam == 0.0 || !cov || sr.quantile <= 0.0) continue;
        const double radicand = sr.wP.dot(z.segment(L.cov(k, i), ns));
        if (radicand <= kRadicandFloor) continue;
        const double s2 = -0.25 * sr.quantile / std::pow(radicand, 1.5);
        H.block(L.cov(k, i), L.cov(k, i), ns, ns) += lam * s2 * sr.wP * sr.wP.transpose();
      }
    }
  }
  for (const auto& ir : input_rows_) {
    for (int k = 0; k < L.N; ++k, ++row) {
      const double lam = lambda_ineq[row];
      const bool tighten = cov && ir.quantile > 0.0 && (k > 0 || tighten_first_input_);
      if (lam == 0.0 || !tighten) continue;
      const Matrix Pb = sym_unpack(z.segment(L.cov(k, 0), ns), nx);
      const Vector w = Kmat.transpose() * ir.H;
      const double radicand = w.dot(Pb * w);
      if (radicand <= kRadicandFloor) continue;
      const double s1 = 0.5 * ir.quantile / std::sqrt(radicand);
      const double s2 = -0.25 * ir.quantile / std::pow(radicand, 1.5);
      const Vector pw = Pb * w;
      const int nk = L.num_gain();
      Vector grad(nk + ns);  // d radicand / d(K, Pbar)
      for (int kr = 0; kr < L.nu; ++kr) {
        for (int kc = 0; kc < nx; ++kc) grad[kr * nx + kc] = 2.0 * ir.H[kr] * pw[kc];
      }
      grad.tail(ns) = hh_sym_weights(w);
      Matrix hr = Matrix::Zero(nk + ns, nk + ns);  // d^2 radicand
      for (int kr = 0; kr < L.nu; ++kr) {
        for (int kc = 0; kc < nx; ++kc) {
          for (int kr2 = 0; kr2 < L.nu; ++kr2) {
            for (int kc2 = 0; kc2 < nx; ++kc2) {
              hr(kr * nx + kc, kr2 * nx + kc2) = 2.0 * ir.H[kr] * ir.H[kr2] * Pb(kc, kc2);
            }
          }
          int idx = 0;
          for (int a = 0; a < nx; ++a) {
            for (int b = a; b < nx; ++b, ++idx) {
              double val = 0.0;
              if (kc == a) val += w[b];
              if (a != b && kc == b) val += w[a];
              hr(kr * nx + kc, nk + idx) = 2.0 * ir.H[kr] * val;
              hr(nk + idx, kr * nx + kc) = hr(kr * nx + kc, nk + idx);
            }
          }
        }
      }
      const Matrix Hrow = lam * (s2 * grad * grad.transpose() + s1 * hr);
      // scatter into (gain, cov(k,0)) coordinates
      std::vector<int> map(nk + ns);
      for (int t = 0; t < nk; ++t) map[t] = L.gain() + t;
      for (int t = 0; t < ns; ++t) map[nk + t] = L.cov(k, 0) + t;
      for (int a = 0; a < nk + ns; ++a) {
        for (int b = 0; b < nk + ns; ++b) H(map[a], map[b]) += Hrow(a, b);
      }
    }
  }
  return true;
}

bool TranscribedProblem::eliminate(const Matrix& JE, const Vector& cE,
                                   EqElimination& out) const {
  const DecisionLayout& L = layout_;
  const int bs = L.block_size();
  const int mc = L.num_controls();
  const int sb = L.states_begin();
  const int N = L.N;
  if (JE.rows() != N * bs || JE.cols() != L.dim()) return false;

  auto lus = std::make_shared<std::vector<Eigen::PartialPivLU<Matrix>>>();
  auto prev = std::make_shared<std::vector<Matrix>>();
  lus->reserve(N);
  prev->reserve(N);
  for (int k = 0; k < N; ++k) {
    Matrix diag = JE.block(k * bs, sb + k * bs, bs, bs);
    lus->emplace_back(diag);
    const Vector udiag = lus->back().matrixLU().diagonal().cwiseAbs();
    if (udiag.minCoeff() < 1e-12 * std::max(1.0, udiag.maxCoeff())) return false;
    prev->push_back(k == 0 ? Matrix::Zero(bs, bs)
                           : Matrix(JE.block(k * bs, sb + (k - 1) * bs, bs, bs)));
  }

  const int n = L.dim();
  out.Z.resize(n, mc);
  out.Z.topRows(mc).setIdentity();
  Matrix Xprev;
  for (int k = 0; k < N; ++k) {
    Matrix rhs = -JE.block(k * bs, 0, bs, mc);
    if (k > 0) rhs -= (*prev)[k] * Xprev;
    Matrix Xk = (*lus)[k].solve(rhs);
    out.Z.block(sb + k * bs, 0, bs, mc) = Xk;
    Xprev = std::move(Xk);
  }

  const int dim = n;
  out.primal = [lus, prev, bs, sb, N, dim](const Vector& rhs) {
    Vector d = Vector::Zero(dim);
    Vector yprev;
    for (int k = 0; k < N; ++k) {
      Vector rk = rhs.segment(k * bs, bs);
      if (k > 0) rk -= (*prev)[k] * yprev;
      Vector yk = (*lus)[k].solve(rk);
      d.segment(sb + k * bs, bs) = yk;
      yprev = std::move(yk);
    }
    return d;
  };
  out.particular = out.primal(-cE);

  out.multipliers = [lus, prev, bs, sb, N](const Vector& rhs) {
    Vector lam(N * bs);
    Vector next;
    for (int k = N - 1; k >= 0; --k) {
      Vector rk = rhs.segment(sb + k * bs, bs);
      if (k + 1 < N) rk -= (*prev)[k + 1].transpose() * next;
      Vector lk = (*lus)[k].transpose().solve(rk);
      lam.segment(k * bs, bs) = lk;
      next = std::move(lk);
    }
    return lam;
  };
  return true;
}

Vector TranscribedProblem::guess_from(const std::vector<double>& deltas,
                                      const std::vector<Vector>& vs, const Matrix& K) const {
  const DecisionLayout& L = layout_;
  const int nx = L.nx;
  const int nu = L.nu;
  const auto& basis = radau3();
  const LinearSdeModel& model = scenario_.model;
  if (static_cast<int>(deltas.size()) != L.N || static_cast<int>(vs.size()) != L.N) {
    throw std::invalid_argument("guess_from: wrong horizon length");
  }
  Vector z = Vector::Zero(L.dim());
  if (L.covariance) {
    for (int r = 0; r < nu; ++r) {
      for (int c = 0; c < nx; ++c) z[L.gain() + r * nx + c] = K(r, c);
    }
  }

  Vector mu = belief0_.mu;
  Matrix P = belief0_.P;
  double r = r0_;
  for (int k = 0; k < L.N; ++k) {
    const double dk = std::clamp(deltas[k], scenario_.delta_min, scenario_.delta_max);
    z[L.delta(k)] = dk;
    z.segment(L.v(k), nu) = vs[k];
    for (int j = 0; j < 4; ++j) {
      const DiscreteMaps m = discrete_maps(model, basis.points[j] * dk);
      z.segment(L.mu(k, j), nx) = m.Phi * mu + m.Gamma * vs[k];
      if (L.covariance) {
        const Matrix Acl = m.Phi + m.Gamma * K;
        const Matrix Pj = symmetrize(Acl * P * Acl.transpose() + m.Wn);
        const Matrix Cj = Acl * P;
        z.segment(L.cov(k, j), L.ns()) = sym_pack(Pj);
        for (int rr = 0; rr < nx; ++rr) {
          for (int cc = 0; cc < nx; ++cc) {
            z[L.cross(k, j) + vec_index(rr, cc, nx)] = Cj(rr, cc);
          }
        }
      }
    }
    mu = z.segment(L.mu(k, 3), nx);
    if (L.covariance) P = sym_unpack(z.segment(L.cov(k, 3), L.ns()), nx);
    r = std::min(std::max(resource_step(r, dk, scenario_.resource), scenario_.resource.r_min),
                 scenario_.resource.r_max);
    z[L.resource(k)] = r;
  }
  return z;
}

Vector TranscribedProblem::initial_guess() const {
  const DecisionLayout& L = layout_;
  const int nx = L.nx;
  const int nu = L.nu;
  const LinearSdeModel& model = scenario_.model;

  const double dguess = 0.5 * (scenario_.delta_min + scenario_.delta_max);

  const DiscreteMaps maps = discrete_maps(model, dguess);

  // finite-horizon tracking LQR on the discretized mean (value function
  // x'S x - 2 s'x)
  const Matrix Qk = dguess * model.C.transpose() * scenario_.cost.Wy * model.C;
  const Matrix Rk =
      dguess * scenario_.cost.Wu + 1e-9 * Matrix::Identity(nu, nu);
  std::vector<Matrix> Huu_inv(L.N), Mx(L.N);
  std::vector<Vector> mv(L.N);
  Matrix S = Matrix::Zero(nx, nx);
  Vector s = Vector::Zero(nx);
  if (scenario_.cost.Wterm.size() > 0) {
    S = model.C.transpose() * scenario_.cost.Wterm * model.C;
    s = model.C.transpose() * scenario_.cost.Wterm.col(0) * ref_terminal_;
  }
  for (int k = L.N - 1; k >= 0; --k) {
    const double refk = ref_nodes_[k][1];
    const Vector qk = dguess * model.C.transpose() * scenario_.cost.Wy.col(0) * refk;
    const Matrix Huu = Rk + maps.Gamma.transpose() * S * maps.Gamma;
    const Matrix M = maps.Gamma.transpose() * S * maps.Phi;
    const Vector m = -maps.Gamma.transpose() * s;
    Eigen::LLT<Matrix> llt(Huu);
    Huu_inv[k] = llt.solve(Matrix::Identity(nu, nu));
    Mx[k] = M;
    mv[k] = m;
    const Matrix Snew = Qk + maps.Phi.transpose() * S * maps.Phi - M.transpose() * Huu_inv[k] * M;
    const Vector snew = qk + maps.Phi.transpose() * s + M.transpose() * (Huu_inv[k] * m);
    S = 0.5 * (Snew + Snew.transpose());
    s = snew;
  }

  std::vector<double> deltas(L.N, dguess);
  std::vector<Vector> vs(L.N);
  Vector mu = belief0_.mu;
  for (int k = 0; k < L.N; ++k) {
    vs[k] = -(Huu_inv[k] * (Mx[k] * mu + mv[k]));
    mu = maps.Phi * mu + maps.Gamma * vs[k];
  }
  return guess_from(deltas, vs, Matrix::Zero(nu, nx));
}

std::unique_ptr<TranscribedProblem> transcribe(const Scenario& scenario,
                                               const GaussianBelief& belief0, double r0,
                                               const PiecewiseConstant& reference_local,
                                               const TranscribeOptions& opts) {
  return std::make_unique<TranscribedProblem>(scenario, belief0, r0, reference_local, opts);
}

double objective_value(const TranscribedProblem& problem, const Vector& z) {
  if (z.size() != problem.dim()) {
    throw std::invalid_argument("objective_value: decision vector has wrong dimension");
  }
  return problem.objective(z);
}

std::pair<AffineFeedbackPlan, PlanPrediction> extract_plan(const TranscribedProblem& problem,
                                                           const Vector& z,
                                                           double residual_tol, bool certify) {
  const DecisionLayout& L = problem.layout();
  const Scenario& sc = problem.scenario();
  const int nx = L.nx;

  AffineFeedbackPlan plan;
  plan.schedule.delta_min = sc.delta_min;
  plan.schedule.delta_max = sc.delta_max;
  plan.K = Matrix::Zero(L.nu, nx);
  if (L.covariance) {
    for (int r = 0; r < L.nu; ++r) {
      for (int c = 0; c < nx; ++c) plan.K(r, c) = z[L.gain() + r * nx + c];
    }
  }
  for (int k = 0; k < L.N; ++k) {
    plan.schedule.deltas.push_back(
        std::clamp(z[L.delta(k)], sc.delta_min, sc.delta_max));
    plan.v.push_back(z.segment(L.v(k), L.nu));
  }

  const double psd_tol = certify ? 1e-6 : kInfinity;

  PlanPrediction pred;
  pred.trigger_times = plan.schedule.trigger_times(0.0);
  pred.resources.push_back(problem.r0());
  for (int k = 0; k < L.N; ++k) pred.resources.push_back(z[L.resource(k)]);

  for (int k = 0; k < L.N; ++k) {
    const Vector mu = z.segment(L.mu(k, 0), nx);
    Matrix P = Matrix::Zero(nx, nx);
    if (L.covariance) {
      // solver-tolerance asymmetry is projected out before downstream use;
      // uncertified extractions clip whatever the iterate carries
      P = project_psd(sym_unpack(z.segment(L.cov(k, 0), L.ns()), nx), psd_tol);
    }
    pred.beliefs.emplace_back(mu, P);
    if (L.covariance) {
      Matrix Ce(nx, nx);
      for (int r = 0; r < nx; ++r) {
        for (int c = 0; c < nx; ++c) Ce(r, c) = z[L.cross(k, 3) + vec_index(r, c, nx)];
      }
      pred.cross_end.push_back(Ce);
    }
  }
  {
    const Vector mu = z.segment(L.mu(L.N - 1, 3), nx);
    Matrix P = Matrix::Zero(nx, nx);
    if (L.covariance) {
      P = project_psd(sym_unpack(z.segment(L.cov(L.N - 1, 3), L.ns()), nx), psd_tol);
    }
    pred.beliefs.emplace_back(mu, P);
  }

  Vector cE(problem.num_eq()), cI(problem.num_ineq());
  problem.equalities(z, cE, nullptr);
  problem.inequalities(z, cI, nullptr);
  pred.max_equality_residual = cE.size() > 0 ? cE.cwiseAbs().maxCoeff() : 0.0;
  pred.max_inequality_violation = cI.size() > 0 ? std::max(0.0, cI.maxCoeff()) : 0.0;

  // certification against the sqrt-form tightened rows
  if (L.covariance && sc.tightening) {
    for (const auto& group : sc.constraints) {
      for (int t = 0; t < group.rows(); ++t) {
        for (int k = 0; k < L.N; ++k) {
          if (group.target == ConstraintTarget::State) {
            for (int i = 1; i <= 3; ++i) {
              const Matrix P =
                  project_psd(sym_unpack(z.segment(L.cov(k, i), L.ns()), nx), psd_tol);
              const auto row = tighten_state_row(group.H[t], group.h[t], group.epsilon, P);
              const double viol =
                  group.H[t].dot(z.segment(L.mu(k, i), nx)) - row.h_tight;
              pred.max_tightening_violation = std::max(pred.max_tightening_violation, viol);
            }
          } else {
            const Matrix P =
                project_psd(sym_unpack(z.segment(L.cov(k, 0), L.ns()), nx), psd_tol);
            const auto row =
                tighten_input_row(group.H[t], group.h[t], group.epsilon, plan.K, P);
            const double viol = group.H[t].dot(plan.v[k]) - row.h_tight;
            pred.max_tightening_violation = std::max(pred.max_tightening_violation, viol);
          }
        }
      }
    }
  }

  // exactness of the min() relaxation: each resource level should be tight
  // against the recursion or against saturation
  for (int k = 0; k < L.N; ++k) {
    const double rk = pred.resources[k];
    const double dk = plan.schedule.deltas[k];
    const double recursion = sc.resource.rho * dk + rk - sc.resource.eta(dk);
    const double slack =
        std::min(recursion - pred.resources[k + 1], sc.resource.r_max - pred.resources[k + 1]);
    pred.resource_relaxation_slack = std::max(pred.resource_relaxation_slack, slack);
  }
  pred.resource_relaxation_exact = pred.resource_relaxation_slack <= 1e-6;

  if (certify) {
    const double residual =
        std::max(pred.max_equality_residual, pred.max_inequality_violation);
    if (residual > residual_tol) {
      throw std::runtime_error("extract_plan: constraint residual " +
                               std::to_string(residual) + " above tolerance");
    }
  }
  return {std::move(plan), std::move(pred)};
}

}  // namespace stmpc
