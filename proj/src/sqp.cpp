#include "stmpc/sqp.hpp"

#include <algorithm>
#include <deque>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <vector>

namespace stmpc {

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterations: return "max-iterations";
    case SolveStatus::InfeasibleDetected: return "infeasible-detected";
    case SolveStatus::NumericalFailure: return "numerical-failure";
  }
  return "unknown";
}

namespace {

// ---------------------------------------------------------------------------
// Elastic strictly convex QP:  min 1/2 y'G y + f'y + M s + 1/2 eps s^2
//                              s.t. A y - c <= s,  s >= 0
// solved by a primal active-set method. The elastic variable doubles as the
// phase-1 mechanism and as the infeasibility relaxation: when the rows are
// consistent the exact-penalty property drives s to zero.
// ---------------------------------------------------------------------------

struct QpResult {
  Vector y;
  Vector duals;        // one per row of A, >= 0
  double elastic = 0.0;
  int pivots = 0;
  bool ok = false;
};

QpResult solve_elastic_qp(const Matrix& G, const Vector& f, const Matrix& A, const Vector& c,
                          double big_m, std::vector<int>* warm_set = nullptr) {
  const int m = static_cast<int>(G.rows());
  const int nr = static_cast<int>(A.rows());
  const int ma = m + 1;
  // curvature of the elastic keeps the unconstrained base point at s = -1,
  // so the Schur solves below stay well scaled
  const double eps_s = big_m;

  QpResult res;
  res.y = Vector::Zero(m);
  res.duals = Vector::Zero(nr);

  Matrix Gt = Matrix::Zero(ma, ma);
  Gt.topLeftCorner(m, m) = G;
  Gt(m, m) = eps_s;
  Eigen::LLT<Matrix> llt(Gt);
  if (llt.info() != Eigen::Success) return res;

  Vector ft(ma);
  ft.head(m) = f;
  ft[m] = big_m;
  const Vector base = llt.solve(-ft);

  // rows 0..nr-1: (a_i, -1) w <= c_i ; row nr: (0, -1) w <= 0
  Matrix rows_aug = Matrix::Zero(nr + 1, ma);
  rows_aug.topLeftCorner(nr, m) = A;
  rows_aug.col(m).setConstant(-1.0);
  auto row_dot = [&](int i, const Vector& w) { return rows_aug.row(i).dot(w); };
  auto row_vec = [&](int i) { return rows_aug.row(i).transpose(); };

  Vector w = Vector::Zero(ma);
  double worst = 0.0;
  for (int i = 0; i < nr; ++i) worst = std::max(worst, -c[i]);
  w[m] = worst + 1.0;

  std::vector<int> W;
  Matrix GiAt;  // Gt^{-1} Aw', one column per working row

  // working-set warm start: adopt the previous set when its
  // equality-constrained minimizer is feasible for every row
  if (warm_set != nullptr && !warm_set->empty() &&
      static_cast<int>(warm_set->size()) <= ma) {
    std::vector<int> cand;
    for (int i : *warm_set) {
      if (i >= 0 && i <= nr) cand.push_back(i);
    }
    if (!cand.empty()) {
      Matrix GiAt_c(ma, cand.size());
      for (std::size_t a = 0; a < cand.size(); ++a) {
        GiAt_c.col(a) = llt.solve(row_vec(cand[a]));
      }
      const int nw = static_cast<int>(cand.size());
      Matrix S(nw, nw);
      Vector rhs(nw);
      for (int a = 0; a < nw; ++a) {
        for (int b = 0; b < nw; ++b) S(a, b) = row_vec(cand[a]).dot(GiAt_c.col(b));
        rhs[a] = row_dot(cand[a], base) - (cand[a] == nr ? 0.0 : c[cand[a]]);
      }
      S.diagonal().array() += 1e-13 * (1.0 + S.diagonal().cwiseAbs().maxCoeff());
      Eigen::LDLT<Matrix> sldlt(S);
      Vector mu_c = sldlt.solve(rhs);
      if (sldlt.info() == Eigen::Success && mu_c.allFinite()) {
        Vector w_c = base - GiAt_c * mu_c;
        bool feasible = w_c.allFinite();
        for (int i = 0; i <= nr && feasible; ++i) {
          const double ci = i == nr ? 0.0 : c[i];
          if (row_dot(i, w_c) > ci + 1e-9 * (1.0 + std::abs(ci))) feasible = false;
        }
        if (feasible) {
          w = w_c;
          W = cand;
          GiAt = GiAt_c;
        }
      }
    }
  }
  const int pivot_limit = 60 + 12 * ma + 2 * nr;
  Vector mu;

  for (int pivot = 0; pivot < pivot_limit; ++pivot) {
    res.pivots = pivot;
    Vector wstar;
    if (W.empty()) {
      wstar = base;
    } else {
      const int nw = static_cast<int>(W.size());
      Matrix S(nw, nw);
      Vector rhs(nw);
      for (int a = 0; a < nw; ++a) {
        const auto row = rows_aug.row(W[a]);
        for (int b = 0; b < nw; ++b) S(a, b) = row.dot(GiAt.col(b));
        rhs[a] = row.dot(base) - (W[a] == nr ? 0.0 : c[W[a]]);
      }
      S.diagonal().array() += 1e-13 * (1.0 + S.diagonal().cwiseAbs().maxCoeff());
      Eigen::LDLT<Matrix> sldlt(S);
      mu = sldlt.solve(rhs);
      mu += sldlt.solve(rhs - S * mu);  // one refinement pass
      if (sldlt.info() != Eigen::Success || !mu.allFinite()) return res;
      wstar = base - GiAt.leftCols(nw) * mu;
    }

    const Vector d = wstar - w;
    if (d.lpNorm<Eigen::Infinity>() <= 1e-11 * (1.0 + w.lpNorm<Eigen::Infinity>())) {
      if (W.empty()) break;  // unconstrained minimum feasible
      int drop = -1;
      double mu_min = -1e-9;
      for (int a = 0; a < static_cast<int>(W.size()); ++a) {
        if (mu[a] < mu_min) {
          mu_min = mu[a];
          drop = a;
        }
      }
      if (drop < 0) {
        for (int a = 0; a < static_cast<int>(W.size()); ++a) {
          if (W[a] != nr) res.duals[W[a]] = std::max(0.0, mu[a]);
        }
        break;
      }
      W.erase(W.begin() + drop);
      Matrix next(ma, W.size());
      for (int a = 0; a < static_cast<int>(W.size()); ++a) {
        next.col(a) = GiAt.col(a >= drop ? a + 1 : a);
      }
      GiAt = next;
      continue;
    }

    double alpha = 1.0;
    int blocker = -1;
    for (int i = 0; i <= nr; ++i) {
      if (std::find(W.begin(), W.end(), i) != W.end()) continue;
      const double ad = row_dot(i, d) - 0.0;
      if (ad > 1e-12) {
        const double ci = i == nr ? 0.0 : c[i];
        const double dist = (ci - row_dot(i, w)) / ad;
        if (dist < alpha - 1e-12) {
          alpha = std::max(dist, 0.0);
          blocker = i;
        }
      }
    }
    w += alpha * d;
    if (blocker >= 0) {
      W.push_back(blocker);
      GiAt.conservativeResize(ma, W.size());
      GiAt.col(W.size() - 1) = llt.solve(row_vec(blocker));
    }
  }

  res.y = w.head(m);
  res.elastic = std::max(0.0, w[m]);
  res.ok = w.allFinite();
  if (warm_set != nullptr) *warm_set = W;
  return res;
}

// ---------------------------------------------------------------------------
// SQP driver
// ---------------------------------------------------------------------------

struct Evaluation {
  double f = 0.0;
  Vector g;
  Vector cE;
  Matrix JE;
  Vector cI;
  Matrix JI;
  bool finite = false;
};

struct Violation {
  double l1 = 0.0;
  double linf = 0.0;
};

Violation violation_of(const Vector& cE, const Vector& cI) {
  Violation v;
  for (int i = 0; i < cE.size(); ++i) {
    v.l1 += std::abs(cE[i]);
    v.linf = std::max(v.linf, std::abs(cE[i]));
  }
  for (int i = 0; i < cI.size(); ++i) {
    const double viol = std::max(0.0, cI[i]);
    v.l1 += viol;
    v.linf = std::max(v.linf, viol);
  }
  return v;
}

}  // namespace

KktResiduals verify_kkt(const NlpProblem& problem, const Vector& z, const Vector& lambda_eq,
                        const Vector& lambda_ineq, const Vector& lambda_lb,
                        const Vector& lambda_ub) {
  KktResiduals r;
  Vector cE(problem.num_eq()), cI(problem.num_ineq());
  Matrix JE(problem.num_eq(), problem.dim()), JI(problem.num_ineq(), problem.dim());
  problem.equalities(z, cE, &JE);
  problem.inequalities(z, cI, &JI);
  Vector lb, ub;
  problem.variable_bounds(lb, ub);

  Vector stat = problem.objective_gradient(z);
  if (lambda_eq.size() > 0) stat += JE.transpose() * lambda_eq;
  if (lambda_ineq.size() > 0) stat += JI.transpose() * lambda_ineq;
  if (lambda_ub.size() > 0) stat += lambda_ub;
  if (lambda_lb.size() > 0) stat -= lambda_lb;
  r.stationarity = stat.size() > 0 ? stat.lpNorm<Eigen::Infinity>() : 0.0;

  const Violation v = violation_of(cE, cI);
  double bound_viol = 0.0;
  for (int i = 0; i < z.size(); ++i) {
    if (std::isfinite(lb[i])) bound_viol = std::max(bound_viol, lb[i] - z[i]);
    if (std::isfinite(ub[i])) bound_viol = std::max(bound_viol, z[i] - ub[i]);
  }
  r.feasibility = std::max(v.linf, bound_viol);

  double comp = 0.0;
  for (int i = 0; i < cI.size(); ++i) {
    if (lambda_ineq.size() > 0) comp = std::max(comp, std::abs(lambda_ineq[i] * cI[i]));
  }
  for (int i = 0; i < z.size(); ++i) {
    if (lambda_lb.size() > 0 && std::isfinite(lb[i])) {
      comp = std::max(comp, std::abs(lambda_lb[i] * (lb[i] - z[i])));
    }
    if (lambda_ub.size() > 0 && std::isfinite(ub[i])) {
      comp = std::max(comp, std::abs(lambda_ub[i] * (z[i] - ub[i])));
    }
  }
  r.complementarity = comp;
  return r;
}

double check_derivatives(const NlpProblem& problem, const Vector& z, double scale) {
  double worst = 0.0;
  auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
  };

  const Vector g = problem.objective_gradient(z);
  const Vector gf = fd_objective_gradient(problem, z, scale);
  for (int i = 0; i < z.size(); ++i) worst = std::max(worst, rel(g[i], gf[i]));

  if (problem.num_eq() > 0) {
    Vector c(problem.num_eq());
    Matrix J(problem.num_eq(), problem.dim());
    problem.equalities(z, c, &J);
    const Matrix Jf = fd_equality_jacobian(problem, z, scale);
    worst = std::max(worst, (J - Jf).cwiseAbs().maxCoeff() /
                                std::max(1.0, Jf.cwiseAbs().maxCoeff()));
    for (int i = 0; i < J.rows(); ++i) {
      for (int j = 0; j < J.cols(); ++j) worst = std::max(worst, rel(J(i, j), Jf(i, j)));
    }
  }
  if (problem.num_ineq() > 0) {
    Vector c(problem.num_ineq());
    Matrix J(problem.num_ineq(), problem.dim());
    problem.inequalities(z, c, &J);
    const Matrix Jf = fd_inequality_jacobian(problem, z, scale);
    for (int i = 0; i < J.rows(); ++i) {
      for (int j = 0; j < J.cols(); ++j) worst = std::max(worst, rel(J(i, j), Jf(i, j)));
    }
  }
  return worst;
}

namespace {

Evaluation evaluate(const NlpProblem& p, const Vector& z, const SolveOptions& opts,
                    bool with_derivatives = true) {
  Evaluation e;
  e.f = p.objective(z);
  e.cE.resize(p.num_eq());
  e.cI.resize(p.num_ineq());
  if (!with_derivatives) {
    p.equalities(z, e.cE, nullptr);
    p.inequalities(z, e.cI, nullptr);
    e.finite = std::isfinite(e.f) && e.cE.allFinite() && e.cI.allFinite();
    return e;
  }
  e.JE.resize(p.num_eq(), p.dim());
  e.JI.resize(p.num_ineq(), p.dim());
  if (opts.fd_derivatives) {
    e.g = fd_objective_gradient(p, z, opts.fd_step);
    p.equalities(z, e.cE, nullptr);
    p.inequalities(z, e.cI, nullptr);
    if (p.num_eq() > 0) e.JE = fd_equality_jacobian(p, z, opts.fd_step);
    if (p.num_ineq() > 0) e.JI = fd_inequality_jacobian(p, z, opts.fd_step);
  } else {
    e.g = p.objective_gradient(z);
    p.equalities(z, e.cE, &e.JE);
    p.inequalities(z, e.cI, &e.JI);
  }
  e.finite = std::isfinite(e.f) && e.g.allFinite() && e.cE.allFinite() && e.cI.allFinite() &&
             e.JE.allFinite() && e.JI.allFinite();
  return e;
}

}  // namespace

namespace {

// Newton refinement on the KKT system with a frozen active set. Once the
// main loop has identified the actives, the remaining nonlinear system is
// smooth and a few Newton steps close the residuals to machine precision;
// degenerate row swaps can no longer cause cycling.
struct PolishResult {
  bool ok = false;
  Vector z;
  Vector lamE, lamI, lamLb, lamUb;
};

PolishResult polish_active_set(const NlpProblem& problem, const SolveOptions& opts, Vector z,
                               Vector lamE, const Vector& lamI_in, const Vector& lamLb_in,
                               const Vector& lamUb_in, const Vector& lb, const Vector& ub,
                               const std::vector<int>& lb_rows,
                               const std::vector<int>& ub_rows) {
  PolishResult out;
  const int n = problem.dim();
  const int mI = problem.num_ineq();

  // frozen active set over [general rows | lb rows | ub rows]
  std::vector<int> active_general;
  std::vector<int> active_lb, active_ub;
  for (int i = 0; i < mI; ++i) {
    if (lamI_in[i] > 1e-10) active_general.push_back(i);
  }
  for (int i : lb_rows) {
    if (lamLb_in[i] > 1e-10) active_lb.push_back(i);
  }
  for (int i : ub_rows) {
    if (lamUb_in[i] > 1e-10) active_ub.push_back(i);
  }
  const int nw = static_cast<int>(active_general.size() + active_lb.size() + active_ub.size());
  // grossly oversized active sets cannot identify a vertex; skip early
  if (nw > problem.dim() - problem.num_eq() + 8) return out;

  Vector mu = Vector::Zero(nw);
  {
    int t = 0;
    for (int i : active_general) mu[t++] = lamI_in[i];
    for (int i : active_lb) mu[t++] = lamLb_in[i];
    for (int i : active_ub) mu[t++] = lamUb_in[i];
  }

  double best_res = kInfinity;
  for (int it = 0; it < 8; ++it) {
    Evaluation ev = evaluate(problem, z, opts);
    if (!ev.finite) return out;

    EqElimination elim;
    if (!problem.eliminate(ev.JE, ev.cE, elim)) elim = dense_eliminate(ev.JE, ev.cE);
    const int m = static_cast<int>(elim.Z.cols());

    // active rows in reduced coordinates
    Matrix Aw(nw, m);
    Vector cw(nw);
    {
      int t = 0;
      for (int i : active_general) {
        Aw.row(t) = ev.JI.row(i) * elim.Z;
        cw[t] = -(ev.cI[i] + ev.JI.row(i).dot(elim.particular));
        ++t;
      }
      for (int i : active_lb) {
        Aw.row(t) = -elim.Z.row(i);
        cw[t] = z[i] + elim.particular[i] - lb[i];
        ++t;
      }
      for (int i : active_ub) {
        Aw.row(t) = elim.Z.row(i);
        cw[t] = ub[i] - z[i] - elim.particular[i];
        ++t;
      }
    }

    // reconstruct full-space multiplier vectors for the Hessian call
    Vector lamI_full = Vector::Zero(mI);
    Vector lamLb_full = Vector::Zero(n);
    Vector lamUb_full = Vector::Zero(n);
    {
      int t = 0;
      for (int i : active_general) lamI_full[i] = mu[t++];
      for (int i : active_lb) lamLb_full[i] = mu[t++];
      for (int i : active_ub) lamUb_full[i] = mu[t++];
    }

    Matrix H;
    Matrix G;
    if (problem.lagrangian_hessian(z, lamE, lamI_full, H)) {
      G = elim.Z.transpose() * (0.5 * (H + H.transpose())) * elim.Z;
    } else {
      G = Matrix::Identity(m, m);
      H = Matrix::Identity(n, n);
    }

    // KKT system of the equality-constrained subproblem
    Matrix K = Matrix::Zero(m + nw, m + nw);
    K.topLeftCorner(m, m) = 0.5 * (G + G.transpose());
    if (nw > 0) {
      K.topRightCorner(m, nw) = Aw.transpose();
      K.bottomLeftCorner(nw, m) = Aw;
      // dual regularization: dependent active rows (degenerate node
      // constraints) otherwise make the KKT matrix singular
      K.bottomRightCorner(nw, nw).diagonal().array() -= 1e-10;
    }
    Vector rhs(m + nw);
    rhs.head(m) = -(elim.Z.transpose() * (ev.g + H * elim.particular));
    rhs.tail(nw) = cw;
    Eigen::FullPivLU<Matrix> lu(K);
    const Vector sol = lu.solve(rhs);
    if (!sol.allFinite() || (K * sol - rhs).lpNorm<Eigen::Infinity>() >
                                1e-8 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) {
      return out;
    }
    const Vector y = sol.head(m);
    mu = sol.tail(nw);
    const Vector d = elim.particular + elim.Z * y;
    z += d;

    // multipliers for the equality block
    {
      int t = 0;
      for (int i : active_general) lamI_full[i] = mu[t++];
      for (int i : active_lb) lamLb_full[i] = mu[t++];
      for (int i : active_ub) lamUb_full[i] = mu[t++];
    }
    Evaluation ev2 = evaluate(problem, z, opts);
    if (!ev2.finite) return out;
    Vector rhsE = -ev2.g;
    if (mI > 0) rhsE -= ev2.JI.transpose() * lamI_full;
    rhsE -= lamUb_full - lamLb_full;
    EqElimination elim2;
    if (!problem.eliminate(ev2.JE, ev2.cE, elim2)) elim2 = dense_eliminate(ev2.JE, ev2.cE);
    lamE = problem.num_eq() > 0 ? elim2.multipliers(rhsE) : Vector();

    const KktResiduals res = verify_kkt(problem, z, lamE, lamI_full, lamLb_full, lamUb_full);
    const double total = std::max({res.stationarity, res.feasibility, res.complementarity});
    if (total < best_res) best_res = total;
    else if (it > 2) return out;  // not contracting

    if (res.feasibility <= opts.constraint_tol && res.stationarity <= 0.5 * opts.kkt_tol &&
        res.complementarity <= 0.5 * opts.kkt_tol) {
      // frozen set must be consistent: nonnegative duals, no new violations
      if (nw > 0 && mu.minCoeff() < -1e-9) return out;
      out.ok = true;
      out.z = z;
      out.lamE = lamE;
      out.lamI = lamI_full;
      out.lamLb = lamLb_full;
      out.lamUb = lamUb_full;
      return out;
    }
  }
  return out;
}

}  // namespace

SolveResult solve(const NlpProblem& problem, const Vector& z0, const SolveOptions& opts) {
  const int n = problem.dim();
  const int mI = problem.num_ineq();

  SolveResult out;
  Vector lb, ub;
  problem.variable_bounds(lb, ub);

  Vector z = z0.cwiseMax(lb).cwiseMin(ub);
  Evaluation ev = evaluate(problem, z, opts);
  if (!ev.finite) {
    out.z = z;
    out.message = "initial point not finite";
    return out;
  }

  std::vector<int> lb_rows, ub_rows;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(lb[i])) lb_rows.push_back(i);
    if (std::isfinite(ub[i])) ub_rows.push_back(i);
  }

  // quasi-Newton model of the reduced (null-space) Lagrangian Hessian,
  // seeded from the projected exact objective Hessian when available
  Matrix Br;
  bool br_valid = false;
  bool has_seed = false;
  auto seed_reduced = [&](const Vector& at, const Matrix& Z) {
    Matrix H;
    const int m = static_cast<int>(Z.cols());
    if (!problem.objective_hessian(at, H)) {
      has_seed = false;
      return Matrix(Matrix::Identity(m, m));
    }
    has_seed = true;
    Matrix G = Z.transpose() * (0.5 * (H + H.transpose())) * Z;
    G = 0.5 * (G + G.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(G);
    const double floor_ev = std::max(1e-6, 1e-8 * es.eigenvalues().cwiseAbs().maxCoeff());
    Vector evals = es.eigenvalues().cwiseMax(floor_ev);
    return Matrix(es.eigenvectors() * evals.asDiagonal() * es.eigenvectors().transpose());
  };
  bool br_scaled = false;
  int b_resets = 0;

  Vector lamE = Vector::Zero(problem.num_eq());
  Vector lamI = Vector::Zero(mI);
  Vector lamLb = Vector::Zero(n);
  Vector lamUb = Vector::Zero(n);
  if (opts.warm != nullptr && opts.warm->lambda_eq.size() == lamE.size() &&
      opts.warm->lambda_ineq.size() == mI && opts.warm->lambda_lb.size() == n &&
      opts.warm->lambda_ub.size() == n) {
    lamE = opts.warm->lambda_eq;
    lamI = opts.warm->lambda_ineq.cwiseMax(0.0);
    lamLb = opts.warm->lambda_lb.cwiseMax(0.0);
    lamUb = opts.warm->lambda_ub.cwiseMax(0.0);
  }

  double nu = opts.penalty_init;

  Vector z_best = z;
  double theta_best = violation_of(ev.cE, ev.cI).linf;
  double f_best = ev.f;
  Vector lamE_best = lamE, lamI_best = lamI, lamLb_best = lamLb, lamUb_best = lamUb;

  int polish_cooldown = 0;
  int polish_backoff = 2;
  std::vector<int> qp_working_set;
  int elastic_streak = 0;
  double theta_at_streak_start = theta_best;
  int zero_steps = 0;
  int nu_high_streak = 0;
  std::deque<double> merit_history;
  double nu_of_history = nu;
  // Levenberg-style damping of the reduced Hessian: grows when the line
  // search keeps rejecting steps, so the model cannot cycle on long steps
  double lm_damp = 0.0;
  int iter = 0;
  std::string stop_message;
  SolveStatus status = SolveStatus::MaxIterations;

  double dnorm_log = 0.0;
  auto log_line = [&](int it, double alpha, double elastic, int pivots, double theta,
                      double stat, double comp) {
    if (!opts.log) return;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"iter\":%d,\"f\":%.9e,\"theta\":%.3e,\"stat\":%.3e,\"comp\":%.3e,"
                  "\"nu\":%.3e,\"alpha\":%.3e,\"elastic\":%.3e,\"pivots\":%d,\"dnorm\":%.3e}",
                  it, ev.f, theta, stat, comp, nu, alpha, elastic, pivots, dnorm_log);
    (*opts.log) << buf << "\n";
  };

  for (iter = 0; iter < opts.max_iterations; ++iter) {
    // -- convergence test with the current multiplier estimates
    const Violation v_now = violation_of(ev.cE, ev.cI);
    Vector stat_vec = ev.g;
    if (problem.num_eq() > 0) stat_vec += ev.JE.transpose() * lamE;
    if (mI > 0) stat_vec += ev.JI.transpose() * lamI;
    stat_vec += lamUb - lamLb;
    const double stat = n > 0 ? stat_vec.lpNorm<Eigen::Infinity>() : 0.0;
    double comp = 0.0;
    for (int i = 0; i < mI; ++i) comp = std::max(comp, std::abs(lamI[i] * ev.cI[i]));
    for (int i : lb_rows) comp = std::max(comp, std::abs(lamLb[i] * (lb[i] - z[i])));
    for (int i : ub_rows) comp = std::max(comp, std::abs(lamUb[i] * (z[i] - ub[i])));

    const bool better_feas = v_now.linf <= opts.constraint_tol;
    if ((better_feas && (theta_best > opts.constraint_tol || ev.f <= f_best)) ||
        (!better_feas && v_now.linf < theta_best && theta_best > opts.constraint_tol)) {
      z_best = z;
      theta_best = v_now.linf;
      f_best = ev.f;
      lamE_best = lamE;
      lamI_best = lamI;
      lamLb_best = lamLb;
      lamUb_best = lamUb;
    }

    if (v_now.linf <= opts.constraint_tol && stat <= opts.kkt_tol && comp <= opts.kkt_tol) {
      status = SolveStatus::Converged;
      z_best = z;
      lamE_best = lamE;
      lamI_best = lamI;
      lamLb_best = lamLb;
      lamUb_best = lamUb;
      break;
    }

    // near-stationary and feasible: freeze the identified active set and
    // let Newton close the KKT residuals (breaks degenerate-row cycling)
    const bool have_multipliers =
        iter > 0 || opts.warm != nullptr;
    if (v_now.linf <= 1e-5 && stat <= 5e-2 && have_multipliers && polish_cooldown == 0) {
      PolishResult pol = polish_active_set(problem, opts, z, lamE, lamI, lamLb, lamUb, lb,
                                           ub, lb_rows, ub_rows);
      if (pol.ok) {
        Vector cI_chk(mI);
        problem.inequalities(pol.z, cI_chk, nullptr);
        if (mI == 0 || cI_chk.maxCoeff() <= opts.constraint_tol) {
          status = SolveStatus::Converged;
          z_best = pol.z;
          lamE_best = pol.lamE;
          lamI_best = pol.lamI;
          lamLb_best = pol.lamLb;
          lamUb_best = pol.lamUb;
          break;
        }
      }
      polish_backoff = std::min(32, 2 * polish_backoff);
      polish_cooldown = polish_backoff;
    }
    if (polish_cooldown > 0) --polish_cooldown;

    // -- QP subproblem in the equality null space
    EqElimination elim;
    if (!problem.eliminate(ev.JE, ev.cE, elim)) elim = dense_eliminate(ev.JE, ev.cE);
    const int m = static_cast<int>(elim.Z.cols());
    const Vector& dp = elim.particular;
    const Vector& lamE_pred = lamE;
    const Vector& lamI_pred = lamI;

    if (!br_valid || Br.rows() != m) {
      Br = seed_reduced(z, elim.Z);
      br_scaled = has_seed;
      br_valid = true;
    }
    Matrix G;
    Matrix H_lag;
    const bool newton =
        problem.lagrangian_hessian(z, lamE_pred, lamI_pred, H_lag);
    if (newton) {
      G = elim.Z.transpose() * (0.5 * (H_lag + H_lag.transpose())) * elim.Z;
      G = 0.5 * (G + G.transpose());
      Eigen::SelfAdjointEigenSolver<Matrix> es(G);
      const double floor_ev =
          std::max(1e-8, 1e-10 * es.eigenvalues().cwiseAbs().maxCoeff());
      // negative curvature is flipped, not floored: flooring would invite
      // huge steps along those directions
      Vector evals = es.eigenvalues().cwiseAbs().cwiseMax(floor_ev);
      G = es.eigenvectors() * evals.asDiagonal() * es.eigenvectors().transpose();
    } else {
      G = Br;
    }
    if (lm_damp > 0.0) {
      G.diagonal().array() += lm_damp * (1.0 + G.diagonal().cwiseAbs().maxCoeff());
    }
    {
      Eigen::LLT<Matrix> probe(G);
      double jitter = std::max(opts.regularization_floor, 1e-10);
      int tries = 0;
      while (probe.info() != Eigen::Success && tries < 6) {
        G.diagonal().array() += jitter * (1.0 + G.diagonal().cwiseAbs().maxCoeff());
        probe.compute(G);
        jitter *= 100.0;
        ++tries;
      }
    }
    const Vector fr = newton
                          ? Vector(elim.Z.transpose() * (ev.g + H_lag * dp))
                          : Vector(elim.Z.transpose() * ev.g + G * (elim.Z.transpose() * dp));

    const int n_rows = mI + static_cast<int>(lb_rows.size() + ub_rows.size());
    Matrix Arows(n_rows, m);
    Vector crows(n_rows);
    if (mI > 0) {
      Arows.topRows(mI) = ev.JI * elim.Z;
      crows.head(mI) = -(ev.cI + ev.JI * dp);
    }
    int rr = mI;
    for (int i : lb_rows) {
      Arows.row(rr) = -elim.Z.row(i);
      crows[rr] = z[i] + dp[i] - lb[i];
      ++rr;
    }
    for (int i : ub_rows) {
      Arows.row(rr) = elim.Z.row(i);
      crows[rr] = ub[i] - z[i] - dp[i];
      ++rr;
    }

    // fixed elastic weight: the exact-penalty property only needs it above
    // the true multipliers, and coupling it to nu feeds dual spikes back
    // into the merit penalty
    const double big_m = 1e6;
    QpResult qp = solve_elastic_qp(G, fr, Arows, crows, big_m, &qp_working_set);
    Vector d = dp + elim.Z * qp.y;
    dnorm_log = d.lpNorm<Eigen::Infinity>();
    if (!qp.ok || !d.allFinite()) {
      if (b_resets < 3) {
        br_valid = false;
        lm_damp = std::max(10.0 * lm_damp, 1e-3);
        ++b_resets;
        lamE.setZero();
        lamI.setZero();
        lamLb.setZero();
        lamUb.setZero();
        continue;
      }
      status = SolveStatus::NumericalFailure;
      stop_message = "QP subproblem failed";
      break;
    }

    // -- first-order multiplier estimates
    Vector lamI_new = qp.duals.head(mI);
    Vector lamLb_new = Vector::Zero(n);
    Vector lamUb_new = Vector::Zero(n);
    rr = mI;
    for (int i : lb_rows) lamLb_new[i] = qp.duals[rr++];
    for (int i : ub_rows) lamUb_new[i] = qp.duals[rr++];
    Vector rhs = -ev.g;
    if (newton) rhs -= H_lag * d;
    if (mI > 0) rhs -= ev.JI.transpose() * lamI_new;
    rhs -= lamUb_new - lamLb_new;
    Vector lamE_new = problem.num_eq() > 0 ? elim.multipliers(rhs) : Vector();

    // -- zero step: the QP is stationary at z; refresh multipliers and let
    // the convergence or infeasibility test decide
    if (d.lpNorm<Eigen::Infinity>() <= 1e-13 * (1.0 + z.lpNorm<Eigen::Infinity>())) {
      lamE = lamE_new;
      lamI = lamI_new;
      lamLb = lamLb_new;
      lamUb = lamUb_new;
      const double theta_now = violation_of(ev.cE, ev.cI).linf;
      if (qp.elastic > 1e-6 && theta_now > 10.0 * opts.constraint_tol) {
        status = SolveStatus::InfeasibleDetected;
        stop_message = "stationary infeasible point";
        ++iter;
        break;
      }
      lm_damp = lm_damp > 1e-8 ? lm_damp / 3.0 : 0.0;
      ++zero_steps;
      if (zero_steps >= 3) {
        status = SolveStatus::MaxIterations;
        stop_message = "stalled at a zero step without passing the KKT test";
        ++iter;
        break;
      }
      continue;
    }

    double dual_norm =
        std::max({lamE_new.size() > 0 ? lamE_new.lpNorm<Eigen::Infinity>() : 0.0,
                  lamI_new.size() > 0 ? lamI_new.lpNorm<Eigen::Infinity>() : 0.0,
                  lamLb_new.lpNorm<Eigen::Infinity>(), lamUb_new.lpNorm<Eigen::Infinity>()});
    // on relaxed subproblems the duals are penalty artifacts, not
    // multiplier estimates; cap their influence on the merit penalty
    if (qp.elastic > 1e-8) dual_norm = std::min(dual_norm, 1e3);
    if (nu < opts.penalty_margin * dual_norm) {
      nu = std::max(opts.penalty_margin * dual_norm, 2.0 * nu);
      nu_high_streak = 0;
    } else if (nu > 10.0 * std::max(opts.penalty_margin * dual_norm, opts.penalty_init)) {
      // a stale spike in nu strangles the line search; relax it once the
      // dual estimates have settled well below it
      if (++nu_high_streak >= 3) {
        nu = std::max(opts.penalty_margin * dual_norm, opts.penalty_init);
        nu_high_streak = 0;
      }
    } else {
      nu_high_streak = 0;
    }

    // -- l1 merit line search with one second-order-correction retry;
    // Armijo compares against the worst recent accepted merit so that
    // curvature-induced merit blips (Maratos) cannot stall full steps
    const Violation v0 = violation_of(ev.cE, ev.cI);
    const double phi0 = ev.f + nu * v0.l1;
    if (nu != nu_of_history) {
      merit_history.clear();
      nu_of_history = nu;
    }
    merit_history.push_back(phi0);
    if (merit_history.size() > 5) merit_history.pop_front();
    const double phi_ref = *std::max_element(merit_history.begin(), merit_history.end());
    const Violation v_lin = violation_of(ev.cE + ev.JE * d, ev.cI + ev.JI * d);
    double descent = ev.g.dot(d) - nu * (v0.l1 - v_lin.l1);
    if (descent > -1e-14) descent = -1e-14;

    double alpha = std::min(1.0, opts.max_step / std::max(1e-12, d.lpNorm<Eigen::Infinity>()));
    bool accepted = false;
    bool tried_soc = false;
    Evaluation ev_try;
    Vector z_try;
    while (alpha > 1e-12) {
      z_try = z + alpha * d;
      ev_try = evaluate(problem, z_try, opts, /*with_derivatives=*/false);
      if (ev_try.finite) {
        const double phi_try = ev_try.f + nu * violation_of(ev_try.cE, ev_try.cI).l1;
        if (phi_try <= phi_ref + 1e-4 * alpha * descent) {
          accepted = true;
          break;
        }
        if (!tried_soc && alpha == 1.0 && problem.num_eq() > 0 && elim.primal) {
          tried_soc = true;
          const Vector d_soc = elim.primal(-ev_try.cE);
          const Vector z_soc = z + d + d_soc;
          Evaluation ev_soc = evaluate(problem, z_soc, opts, /*with_derivatives=*/false);
          if (ev_soc.finite) {
            const double phi_soc = ev_soc.f + nu * violation_of(ev_soc.cE, ev_soc.cI).l1;
            if (phi_soc <= phi_ref + 1e-4 * descent) {
              z_try = z_soc;
              ev_try = ev_soc;
              accepted = true;
              break;
            }
          }
        }
      }
      alpha *= 0.5;
    }
    if (accepted) ev_try = evaluate(problem, z_try, opts);

    if (!accepted) {
      lm_damp = std::max(10.0 * lm_damp, 1e-3);
      if (v0.linf <= opts.constraint_tol && zero_steps < 3) {
        lamE = lamE_new;
        lamI = lamI_new;
        lamLb = lamLb_new;
        lamUb = lamUb_new;
        ++zero_steps;
        continue;
      }
      if (b_resets < 3) {
        br_valid = false;
        ++b_resets;
        continue;
      }
      status = SolveStatus::NumericalFailure;
      stop_message = "line search failed";
      break;
    }

    // -- reduced-space BFGS on the Lagrangian gradient (Powell damping)
    Vector gL_old = ev.g;
    Vector gL_new = ev_try.g;
    if (problem.num_eq() > 0) {
      gL_old += ev.JE.transpose() * lamE_new;
      gL_new += ev_try.JE.transpose() * lamE_new;
    }
    if (mI > 0) {
      gL_old += ev.JI.transpose() * lamI_new;
      gL_new += ev_try.JI.transpose() * lamI_new;
    }
    const Vector s_r = elim.Z.transpose() * (z_try - z);
    Vector y_r = elim.Z.transpose() * (gL_new - gL_old);
    const double ss = s_r.squaredNorm();
    if (!newton && ss > 1e-24) {
      if (!br_scaled) {
        const double sy0 = s_r.dot(y_r);
        if (sy0 > 1e-12 * std::sqrt(ss) * y_r.norm()) {
          Br *= y_r.squaredNorm() / sy0;
          br_scaled = true;
        }
      }
      const Vector Bs = Br * s_r;
      const double sBs = s_r.dot(Bs);
      double sy = s_r.dot(y_r);
      if (sy < 0.2 * sBs && sBs > 0.0) {
        const double theta_damp = 0.8 * sBs / (sBs - sy);
        y_r = theta_damp * y_r + (1.0 - theta_damp) * Bs;
        sy = s_r.dot(y_r);
      }
      if (sy > 1e-12 * sBs && sBs > 0.0) {
        Br += (y_r * y_r.transpose()) / sy - (Bs * Bs.transpose()) / sBs;
      }
    }

    if (alpha >= 0.99) {
      lm_damp = lm_damp > 1e-8 ? lm_damp / 3.0 : 0.0;
    } else if (alpha < 0.1) {
      lm_damp = std::max(4.0 * lm_damp, 1e-4);
    }
    zero_steps = 0;

    z = z_try;
    ev = ev_try;
    lamE = lamE_new;
    lamI = lamI_new;
    lamLb = lamLb_new;
    lamUb = lamUb_new;

    const double theta_now = violation_of(ev.cE, ev.cI).linf;
    if (qp.elastic > 1e-6) {
      if (elastic_streak == 0) theta_at_streak_start = theta_now;
      ++elastic_streak;
      if (elastic_streak >= 10 && theta_now > 100.0 * opts.constraint_tol &&
          theta_now > 0.999 * theta_at_streak_start) {
        status = SolveStatus::InfeasibleDetected;
        stop_message = "elastic relaxation persistently active";
        ++iter;
        break;
      }
    } else {
      elastic_streak = 0;
    }

    log_line(iter, alpha, qp.elastic, qp.pivots, theta_now, stat, comp);
  }

  out.status = status;
  out.z = z_best;
  out.iterations = iter;
  out.lambda_eq = lamE_best;
  out.lambda_ineq = lamI_best;
  out.lambda_lb = lamLb_best;
  out.lambda_ub = lamUb_best;
  out.objective = problem.objective(z_best);
  const KktResiduals cert =
      verify_kkt(problem, z_best, lamE_best, lamI_best, lamLb_best, lamUb_best);
  out.kkt_residual = std::max(cert.stationarity, cert.complementarity);
  out.constraint_residual = cert.feasibility;
  out.message = stop_message;
  if (status == SolveStatus::Converged &&
      (out.kkt_residual > 10.0 * opts.kkt_tol ||
       out.constraint_residual > 10.0 * opts.constraint_tol)) {
    out.status = SolveStatus::MaxIterations;
    out.message = "certificate mismatch";
  }
  return out;
}

}  // namespace stmpc
