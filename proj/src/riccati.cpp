#include "lqmpc/riccati.hpp"

#include <cmath>

namespace lqmpc {

namespace {

Matrix dare_rhs(const Matrix& a, const Matrix& b, const Matrix& q,
                const Matrix& r, const Matrix& p) {
  const Matrix btp = b.transpose() * p;
  const Matrix m3 = r + btp * b;
  const Matrix gain_term = a.transpose() * btp.transpose() *
                           solve(m3, btp * a);
  return a.transpose() * p * a - gain_term + q;
}

void check_inputs(const Matrix& a, const Matrix& b, const Matrix& q,
                  const Matrix& r) {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n ||
      r.rows() != m || r.cols() != m)
    throw std::invalid_argument("solve_dare: dimension mismatch");
  const double qs = (q - q.transpose()).cwiseAbs().maxCoeff();
  const double rs = (r - r.transpose()).cwiseAbs().maxCoeff();
  if (qs > tol::kSymmetry * (1.0 + q.cwiseAbs().maxCoeff()) ||
      rs > tol::kSymmetry * (1.0 + r.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("solve_dare: Q or R not symmetric");
  Eigen::LLT<Matrix> llt(0.5 * (r + r.transpose()));
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("solve_dare: R not positive definite");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (q + q.transpose()));
  if (es.eigenvalues().minCoeff() < -1e-8)
    throw std::invalid_argument("solve_dare: Q not positive semidefinite");
}

// Structured doubling iteration. Converges quadratically to the stabilizing
// solution when it exists; throws when an intermediate inverse breaks down.
Matrix doubling_iteration(const Matrix& a0, const Matrix& g0,
                          const Matrix& q0) {
  const Eigen::Index n = a0.rows();
  Matrix ak = a0, gk = g0, pk = q0;
  for (int it = 0; it < 200; ++it) {
    const Matrix w = Matrix::Identity(n, n) + gk * pk;
    const Matrix wia = solve(w, ak);       // (I + G P)^{-1} A
    const Matrix wig = solve(w, gk);       // (I + G P)^{-1} G
    const Matrix a_next = ak * wia;
    const Matrix g_next = gk + ak * wig * ak.transpose();
    const Matrix p_next = pk + ak.transpose() * pk * wia;
    const double delta = (p_next - pk).cwiseAbs().maxCoeff();
    ak = a_next;
    gk = 0.5 * (g_next + g_next.transpose());
    pk = 0.5 * (p_next + p_next.transpose());
    if (!pk.allFinite())
      throw NoStabilizingSolution("DARE doubling iteration diverged");
    if (delta <= tol::kDareIterate * (1.0 + pk.cwiseAbs().maxCoeff()))
      return pk;
  }
  throw NoStabilizingSolution("DARE doubling iteration did not converge");
}

Matrix damped_fixed_point(const Matrix& a, const Matrix& b, const Matrix& q,
                          const Matrix& r) {
  Matrix p = q;
  const double damping = 0.5;
  for (int it = 0; it < 100000; ++it) {
    Matrix next = (1.0 - damping) * p + damping * dare_rhs(a, b, q, r, p);
    next = Matrix(0.5 * (next + next.transpose().eval()));
    const double delta = (next - p).cwiseAbs().maxCoeff();
    p = next;
    if (!p.allFinite())
      throw NoStabilizingSolution("DARE fixed-point iteration diverged");
    if (delta <= tol::kDareIterate * (1.0 + p.cwiseAbs().maxCoeff())) return p;
  }
  throw NoStabilizingSolution("DARE fixed-point iteration did not converge");
}

}  // namespace

DareSolution solve_dare(const Matrix& a, const Matrix& b, const Matrix& q,
                        const Matrix& r) {
  check_inputs(a, b, q, r);
  const Matrix g = b * solve(r, Matrix(b.transpose()));

  Matrix p;
  try {
    p = doubling_iteration(a, 0.5 * (g + g.transpose()),
                           Matrix(0.5 * (q + q.transpose())));
  } catch (const SingularMatrixError&) {
    p = damped_fixed_point(a, b, q, r);
  } catch (const NoStabilizingSolution&) {
    p = damped_fixed_point(a, b, q, r);
  }

  DareSolution sol;
  sol.P = 0.5 * (p + p.transpose());
  sol.M3 = r + b.transpose() * sol.P * b;
  try {
    sol.M2 = solve(sol.M3, Matrix::Identity(r.rows(), r.rows()));
  } catch (const SingularMatrixError& e) {
    throw IllConditioned(std::string("DARE: R + B'PB factorization failed: ") +
                         e.what());
  }
  sol.M1 = sol.P - sol.P * b * sol.M2 * b.transpose() * sol.P;
  sol.K = -sol.M2 * b.transpose() * sol.P * a;
  sol.residual_norm = (sol.P - dare_rhs(a, b, q, r, sol.P)).norm();
  sol.closed_loop_radius = spectral_radius(a + b * sol.K);
  if (!(sol.closed_loop_radius < 1.0 - tol::kStabilityMargin))
    throw NoStabilizingSolution("DARE solution is not stabilizing (rho = " +
                                std::to_string(sol.closed_loop_radius) + ")");
  return sol;
}

DareJacobians dare_jacobians(const DareSolution& sol, const Matrix& a,
                             const Matrix& b, const Matrix& q,
                             const Matrix& r) {
  (void)q;
  (void)r;
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  const Matrix& p = sol.P;
  const Matrix& m1 = sol.M1;
  const Matrix& m2 = sol.M2;

  const Matrix at_at = kron(a.transpose(), a.transpose());
  const Matrix pb = p * b;
  const Matrix pbm2bt = pb * m2 * b.transpose();
  const Matrix in2 = Matrix::Identity(n * n, n * n);
  const Matrix vnn = commutation_matrix(n, n);
  const Matrix vmm = commutation_matrix(m, m);
  const Matrix eyen = Matrix::Identity(n, n);
  const Matrix eyem = Matrix::Identity(m, m);

  const Matrix z1 =
      in2 - at_at * (in2 - kron(pbm2bt, eyen) - kron(eyen, pbm2bt) +
                     kron(pb, pb) * kron(m2, m2) *
                         kron(b.transpose(), b.transpose()));
  const Matrix z2 = (vnn + in2) * kron(eyen, a.transpose() * m1);
  const Matrix z3 =
      at_at * (kron(pb, pb) * kron(m2, m2) *
                   (Matrix::Identity(m * m, m * m) + vmm) *
                   kron(eyem, b.transpose() * p) -
               (in2 + vnn) * kron(pb * m2, p));
  const Matrix z5 = at_at * kron(pb, pb) * kron(m2, m2);

  DareJacobians jac;
  try {
    // One factorization of Z1 serves all four right-hand sides.
    Eigen::PartialPivLU<Matrix> lu(z1);
    const Vector diag = lu.matrixLU().diagonal().cwiseAbs();
    const double cond =
        diag.minCoeff() == 0.0 ? std::numeric_limits<double>::infinity()
                               : diag.maxCoeff() / diag.minCoeff();
    if (!(cond < tol::kCondLimit)) throw SingularMatrixError(cond);
    jac.dP_dA = lu.solve(z2);
    jac.dP_dB = lu.solve(z3);
    jac.dP_dQ = lu.solve(in2);
    jac.dP_dR = lu.solve(z5);
  } catch (const SingularMatrixError& e) {
    throw Z1Singular(std::string("DARE Jacobians: Z1 is singular: ") +
                     e.what());
  }
  return jac;
}

GainJacobians gain_jacobians(const DareSolution& sol, const Matrix& a,
                             const Matrix& b, const Matrix& q, const Matrix& r,
                             const DareJacobians& jac) {
  (void)q;
  (void)r;
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  const Matrix& p = sol.P;
  const Matrix& m2 = sol.M2;
  const Matrix btp = b.transpose() * p;
  const Matrix w = btp * a;  // B'PA
  const Matrix u = p * a;

  // K = -M2 W; dM2 = -(M2 (x) M2) dM3 folds into the C block below.
  const Matrix c = kron(w.transpose() * m2, m2);
  const Matrix t = kron(a.transpose(), m2 * b.transpose()) -
                   c * kron(b.transpose(), b.transpose());
  const Matrix eyem = Matrix::Identity(m, m);
  const Matrix vmm = commutation_matrix(m, m);

  GainJacobians g;
  g.dK_dA = -(t * jac.dP_dA + kron(Matrix::Identity(n, n), m2 * btp));
  g.dK_dB = -(t * jac.dP_dB -
              c * (Matrix::Identity(m * m, m * m) + vmm) * kron(eyem, btp) +
              kron(u.transpose(), m2) * commutation_matrix(n, m));
  g.dK_dQ = -(t * jac.dP_dQ);
  g.dK_dR = -(t * jac.dP_dR - c);
  return g;
}

namespace {

struct DareNodeCache {
  DareSolution sol;
  bool have_jac = false;
  DareJacobians pj;
  GainJacobians kj;

  void ensure_jacobians(const Matrix& a, const Matrix& b, const Matrix& q,
                        const Matrix& r) {
    if (have_jac) return;
    pj = dare_jacobians(sol, a, b, q, r);
    kj = gain_jacobians(sol, a, b, q, r, pj);
    have_jac = true;
  }
};

}  // namespace

std::pair<NodeRef, NodeRef> dare_custom_node(Tape& tape, NodeRef a, NodeRef b,
                                             NodeRef q, NodeRef r) {
  const Matrix av = tape.value(a);
  const Matrix bv = tape.value(b);
  const Matrix qv = tape.value(q);
  const Matrix rv = tape.value(r);
  auto cache = std::make_shared<DareNodeCache>();
  cache->sol = solve_dare(av, bv, qv, rv);
  const Eigen::Index n = av.rows();
  const Eigen::Index m = bv.cols();

  auto backward_p = [cache, n, m](const std::vector<Matrix>& pv, const Matrix&,
                                  const Matrix& adj) -> std::vector<Matrix> {
    cache->ensure_jacobians(pv[0], pv[1], pv[2], pv[3]);
    const Matrix g = vec(adj);
    return {unvec(cache->pj.dP_dA.transpose() * g, n, n),
            unvec(cache->pj.dP_dB.transpose() * g, n, m),
            unvec(cache->pj.dP_dQ.transpose() * g, n, n),
            unvec(cache->pj.dP_dR.transpose() * g, m, m)};
  };
  auto backward_k = [cache, n, m](const std::vector<Matrix>& pv, const Matrix&,
                                  const Matrix& adj) -> std::vector<Matrix> {
    cache->ensure_jacobians(pv[0], pv[1], pv[2], pv[3]);
    const Matrix g = vec(adj);
    return {unvec(cache->kj.dK_dA.transpose() * g, n, n),
            unvec(cache->kj.dK_dB.transpose() * g, n, m),
            unvec(cache->kj.dK_dQ.transpose() * g, n, n),
            unvec(cache->kj.dK_dR.transpose() * g, m, m)};
  };

  NodeRef pn = tape.custom({a, b, q, r}, cache->sol.P, backward_p);
  NodeRef kn = tape.custom({a, b, q, r}, cache->sol.K, backward_k);
  return {pn, kn};
}

}  // namespace lqmpc
