#include "lqmpc/qp.hpp"

#include <algorithm>
#include <cmath>

namespace lqmpc {

void QpProblem::validate() const {
  const Eigen::Index d = H.rows();
  const Eigen::Index c = M.rows();
  if (H.cols() != d || q.size() != d || M.cols() != d || lb.size() != c ||
      ub.size() != c)
    throw std::invalid_argument("QpProblem: dimension mismatch");
  if ((H - H.transpose()).cwiseAbs().maxCoeff() >
      tol::kSymmetry * (1.0 + H.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("QpProblem: H not symmetric");
  for (Eigen::Index i = 0; i < c; ++i) {
    if (lb(i) > ub(i))
      throw std::invalid_argument("QpProblem: lb > ub at row " +
                                  std::to_string(i));
  }
}

namespace {

double inf_norm(const Vector& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

struct RhoVector {
  Vector rho;      // per-constraint penalty
  Vector rho_inv;  // elementwise inverse
};

RhoVector make_rho(const QpProblem& p, double base) {
  const Eigen::Index c = p.M.rows();
  RhoVector r;
  r.rho.resize(c);
  for (Eigen::Index i = 0; i < c; ++i) {
    const bool lo_free = is_free_bound(p.lb(i)) && p.lb(i) < 0;
    const bool hi_free = is_free_bound(p.ub(i)) && p.ub(i) > 0;
    if (lo_free && hi_free)
      r.rho(i) = 1e-6 * base;  // unconstrained row
    else if (p.ub(i) - p.lb(i) < 1e-14)
      r.rho(i) = 1e3 * base;  // equality row
    else
      r.rho(i) = base;
  }
  r.rho_inv = r.rho.cwiseInverse();
  return r;
}

}  // namespace

QpSolution qp_solve(const QpProblem& p, const QpSettings& st) {
  p.validate();
  const Eigen::Index d = p.H.rows();
  const Eigen::Index c = p.M.rows();

  QpSolution sol;
  sol.z = Vector::Zero(d);
  sol.y = Vector::Zero(c);
  Vector v = Vector::Zero(c);  // ADMM copy of Mz

  double rho_base = st.rho;
  RhoVector rv = make_rho(p, rho_base);
  Eigen::LDLT<Matrix> kkt;
  auto factor = [&]() {
    Matrix reduced = p.H + st.sigma * Matrix::Identity(d, d) +
                     p.M.transpose() * rv.rho.asDiagonal() * p.M;
    kkt.compute(reduced);
  };
  factor();

  auto residuals = [&](double& rp, double& rd, double& rp_ref,
                       double& rd_ref) {
    const Vector mz = p.M * sol.z;
    const Vector hz = p.H * sol.z;
    const Vector mty = p.M.transpose() * sol.y;
    rp = inf_norm(mz - v);
    rd = inf_norm(hz + p.q + mty);
    rp_ref = std::max(inf_norm(mz), inf_norm(v));
    rd_ref = std::max({inf_norm(hz), inf_norm(mty), inf_norm(p.q)});
  };

  // Candidate from the reduced KKT system of the currently classified active
  // set; returns true (and installs it) when it meets the residual targets.
  auto try_polish = [&](double target_p, double target_d) {
    classify_active(p, sol, st.tau_act);
    std::vector<int> act;
    act.insert(act.end(), sol.active_upper.begin(), sol.active_upper.end());
    act.insert(act.end(), sol.active_lower.begin(), sol.active_lower.end());
    std::sort(act.begin(), act.end());
    const Eigen::Index na = static_cast<Eigen::Index>(act.size());
    Matrix ma(na, d);
    Vector ba(na);
    for (Eigen::Index k = 0; k < na; ++k) {
      const int i = act[static_cast<size_t>(k)];
      ma.row(k) = p.M.row(i);
      ba(k) = (sol.y(i) > 0) ? p.ub(i) : p.lb(i);
    }
    Matrix kkt_full(d + na, d + na);
    const double reg = 1e-11;
    kkt_full.topLeftCorner(d, d) = p.H + reg * Matrix::Identity(d, d);
    kkt_full.topRightCorner(d, na) = ma.transpose();
    kkt_full.bottomLeftCorner(na, d) = ma;
    kkt_full.bottomRightCorner(na, na) = -reg * Matrix::Identity(na, na);
    Vector rhs(d + na);
    rhs.head(d) = -p.q;
    rhs.tail(na) = ba;
    Eigen::PartialPivLU<Matrix> lu(kkt_full);
    Vector xy = lu.solve(rhs);
    // Two refinement steps against the unregularized system.
    Matrix kkt_exact = kkt_full;
    kkt_exact.topLeftCorner(d, d) = p.H;
    kkt_exact.bottomRightCorner(na, na).setZero();
    xy += lu.solve(rhs - kkt_exact * xy);
    xy += lu.solve(rhs - kkt_exact * xy);

    Vector z_pol = xy.head(d);
    Vector y_pol = Vector::Zero(c);
    for (Eigen::Index k = 0; k < na; ++k)
      y_pol(act[static_cast<size_t>(k)]) = xy(d + k);
    if (!z_pol.allFinite() || !y_pol.allFinite()) return false;

    const Vector mz = p.M * z_pol;
    const Vector viol = (mz - p.ub).cwiseMax(0.0) + (p.lb - mz).cwiseMax(0.0);
    const double rp_pol = inf_norm(viol);
    const double rd_pol = inf_norm(p.H * z_pol + p.q + p.M.transpose() * y_pol);
    if (rp_pol > target_p || rd_pol > target_d) return false;
    sol.z = z_pol;
    sol.y = y_pol;
    sol.s = mz;
    sol.primal_residual = rp_pol;
    sol.dual_residual = rd_pol;
    sol.polished = true;
    classify_active(p, sol, st.tau_act);
    return true;
  };

  // ADMM only has to identify the active set; the polish step delivers the
  // requested accuracy. Failed polish attempts tighten the detection
  // tolerance until the plain ADMM criterion takes over.
  double detect_eps = std::max(st.eps_abs, 1e-4);

  int it = 0;
  for (; it < st.max_iter; ++it) {
    const Vector rhs =
        st.sigma * sol.z - p.q + p.M.transpose() * (rv.rho.asDiagonal() * v -
                                                    sol.y);
    const Vector z_tilde = kkt.solve(rhs);
    const Vector s_tilde = p.M * z_tilde;

    const Vector z_prev = sol.z;
    const Vector y_prev = sol.y;
    sol.z = st.alpha * z_tilde + (1.0 - st.alpha) * z_prev;
    const Vector s_relaxed = st.alpha * s_tilde + (1.0 - st.alpha) * v;
    const Vector v_prev = v;
    v = (s_relaxed + rv.rho_inv.cwiseProduct(sol.y))
            .cwiseMax(p.lb)
            .cwiseMin(p.ub);
    sol.y += rv.rho.cwiseProduct(s_relaxed - v);

    if ((it + 1) % st.check_interval != 0) continue;

    double rp, rd, rp_ref, rd_ref;
    residuals(rp, rd, rp_ref, rd_ref);
    const double strict_p = st.eps_abs + st.eps_rel * rp_ref;
    const double strict_d = st.eps_abs + st.eps_rel * rd_ref;
    if (rp <= strict_p && rd <= strict_d) {
      sol.status = QpStatus::kSolved;
      sol.iterations = it + 1;
      break;
    }
    if (st.polish && rp <= detect_eps + st.eps_rel * rp_ref &&
        rd <= detect_eps + st.eps_rel * rd_ref) {
      if (try_polish(strict_p, strict_d)) {
        sol.status = QpStatus::kSolved;
        sol.iterations = it + 1;
        return sol;
      }
      detect_eps = std::max(st.eps_abs, detect_eps * 1e-2);
    }

    // Infeasibility certificates from iterate deltas.
    const Vector dy = sol.y - y_prev;
    const Vector dz = sol.z - z_prev;
    const double dy_norm = inf_norm(dy);
    const double dz_norm = inf_norm(dz);
    if (dy_norm > 0.0) {
      double support = 0.0;
      bool unbounded_support = false;
      for (Eigen::Index i = 0; i < c; ++i) {
        if (dy(i) > 0) {
          if (is_free_bound(p.ub(i))) unbounded_support = true;
          support += p.ub(i) * dy(i);
        } else if (dy(i) < 0) {
          if (is_free_bound(p.lb(i))) unbounded_support = true;
          support += p.lb(i) * dy(i);
        }
      }
      if (!unbounded_support &&
          inf_norm(p.M.transpose() * dy) <= st.eps_infeas * dy_norm &&
          support <= -st.eps_infeas * dy_norm) {
        sol.status = QpStatus::kPrimalInfeasible;
        sol.iterations = it + 1;
        break;
      }
    }
    if (dz_norm > 0.0) {
      const Vector mdz = p.M * dz;
      bool directions_ok = true;
      for (Eigen::Index i = 0; i < c; ++i) {
        if (mdz(i) > st.eps_infeas * dz_norm && !is_free_bound(p.ub(i)))
          directions_ok = false;
        if (mdz(i) < -st.eps_infeas * dz_norm && !is_free_bound(p.lb(i)))
          directions_ok = false;
      }
      if (directions_ok && inf_norm(p.H * dz) <= st.eps_infeas * dz_norm &&
          p.q.dot(dz) <= -st.eps_infeas * dz_norm) {
        sol.status = QpStatus::kDualInfeasible;
        sol.iterations = it + 1;
        break;
      }
    }

    // Residual-balancing rho adaptation (deterministic, iteration-driven).
    const double rp_rel = rp / std::max(rp_ref, 1e-30);
    const double rd_rel = rd / std::max(rd_ref, 1e-30);
    const double scale = std::sqrt(rp_rel / std::max(rd_rel, 1e-30));
    if (scale > 5.0 || scale < 0.2) {
      rho_base = std::clamp(rho_base * scale, 1e-8, 1e8);
      rv = make_rho(p, rho_base);
      factor();
    }
  }
  if (sol.status != QpStatus::kSolved && sol.status != QpStatus::kMaxIter)
    return sol;  // infeasibility certificate
  if (sol.iterations == 0) sol.iterations = it;

  sol.s = p.M * sol.z;
  {
    double rp, rd, rp_ref, rd_ref;
    residuals(rp, rd, rp_ref, rd_ref);
    sol.primal_residual = rp;
    sol.dual_residual = rd;
  }

  classify_active(p, sol, st.tau_act);

  if (st.polish && sol.status == QpStatus::kSolved)
    (void)try_polish(sol.primal_residual + 1e-15, sol.dual_residual + 1e-15);
  return sol;
}

void classify_active(const QpProblem& p, QpSolution& sol, double tau_act) {
  sol.active_upper.clear();
  sol.active_lower.clear();
  for (Eigen::Index i = 0; i < sol.y.size(); ++i) {
    if (sol.y(i) > tau_act && !is_free_bound(p.ub(i)))
      sol.active_upper.push_back(static_cast<int>(i));
    else if (sol.y(i) < -tau_act && !is_free_bound(p.lb(i)))
      sol.active_lower.push_back(static_cast<int>(i));
  }
}

QpGradients qp_differentiate(const QpProblem& p, const QpSolution& sol,
                             const Vector& dL_dz) {
  if (sol.status != QpStatus::kSolved)
    throw std::invalid_argument("qp_differentiate: problem not solved");
  const Eigen::Index d = p.H.rows();
  const Eigen::Index c = p.M.rows();
  if (dL_dz.size() != d)
    throw std::invalid_argument("qp_differentiate: seed size mismatch");

  std::vector<int> act;
  act.insert(act.end(), sol.active_upper.begin(), sol.active_upper.end());
  act.insert(act.end(), sol.active_lower.begin(), sol.active_lower.end());
  std::sort(act.begin(), act.end());
  const Eigen::Index na = static_cast<Eigen::Index>(act.size());

  Matrix ma(na, d);
  for (Eigen::Index k = 0; k < na; ++k)
    ma.row(k) = p.M.row(act[static_cast<size_t>(k)]);

  Matrix kkt(d + na, d + na);
  kkt.topLeftCorner(d, d) = p.H;
  kkt.topRightCorner(d, na) = ma.transpose();
  kkt.bottomLeftCorner(na, d) = ma;
  kkt.bottomRightCorner(na, na).setZero();
  Vector rhs = Vector::Zero(d + na);
  rhs.head(d) = dL_dz;

  Vector ab;
  try {
    ab = solve(kkt, Matrix(rhs));
  } catch (const SingularMatrixError& e) {
    throw SingularKkt(std::string("degenerate active set: ") + e.what());
  }
  const Vector a = ab.head(d);
  const Vector b = ab.tail(na);

  QpGradients g;
  g.dq = -a;
  g.dH = -0.5 * (a * sol.z.transpose() + sol.z * a.transpose());
  g.dM = Matrix::Zero(c, d);
  g.dlb = Vector::Zero(c);
  g.dub = Vector::Zero(c);
  for (Eigen::Index k = 0; k < na; ++k) {
    const int i = act[static_cast<size_t>(k)];
    g.dM.row(i) =
        -(sol.y(i) * a.transpose() + b(k) * sol.z.transpose());
    if (sol.y(i) > 0)
      g.dub(i) = b(k);
    else
      g.dlb(i) = b(k);
  }
  return g;
}

NodeRef qp_custom_node(Tape& tape, NodeRef h, NodeRef q, NodeRef m, NodeRef lb,
                       NodeRef ub, const QpSettings& settings) {
  QpProblem prob;
  prob.H = tape.value(h);
  prob.q = tape.value(q);
  prob.M = tape.value(m);
  prob.lb = tape.value(lb);
  prob.ub = tape.value(ub);
  auto sol = std::make_shared<QpSolution>(qp_solve(prob, settings));
  if (sol->status != QpStatus::kSolved)
    throw std::runtime_error("qp_custom_node: QP solve failed (status " +
                             std::to_string(static_cast<int>(sol->status)) +
                             ")");
  Matrix z = sol->z;
  auto backward = [sol](const std::vector<Matrix>& pv, const Matrix&,
                        const Matrix& adj) -> std::vector<Matrix> {
    QpProblem p;
    p.H = pv[0];
    p.q = pv[1];
    p.M = pv[2];
    p.lb = pv[3];
    p.ub = pv[4];
    QpGradients g = qp_differentiate(p, *sol, Vector(adj));
    return {g.dH, Matrix(g.dq), g.dM, Matrix(g.dlb), Matrix(g.dub)};
  };
  return tape.custom({h, q, m, lb, ub}, z, backward);
}

}  // namespace lqmpc
