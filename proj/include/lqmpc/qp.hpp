#pragma once

#include <vector>

#include "lqmpc/graph.hpp"
#include "lqmpc/linalg.hpp"

namespace lqmpc {

// Degenerate active set: the reduced KKT system is singular.
struct SingularKkt : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// min 1/2 z'Hz + q'z  s.t.  lb <= Mz <= ub.
// Bound entries at +-kInfinity mean "no bound".
struct QpProblem {
  Matrix H;   // d x d, symmetric PSD
  Vector q;   // d
  Matrix M;   // c x d
  Vector lb;  // c
  Vector ub;  // c

  void validate() const;
};

struct QpSettings {
  double eps_abs = tol::kQpEps;
  double eps_rel = tol::kQpEps;
  double eps_infeas = 1e-10;
  int max_iter = 200000;
  int check_interval = 25;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;  // over-relaxation
  double tau_act = tol::kActiveDual;
  bool polish = true;
};

enum class QpStatus { kSolved, kMaxIter, kPrimalInfeasible, kDualInfeasible };

// Sign convention: stationarity Hz + q + M'y = 0 with y_i > 0 for an active
// upper bound and y_i < 0 for an active lower bound.
struct QpSolution {
  Vector z;  // primal
  Vector y;  // dual
  Vector s;  // Mz
  std::vector<int> active_upper;
  std::vector<int> active_lower;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  QpStatus status = QpStatus::kMaxIter;
  int iterations = 0;
  bool polished = false;
};

struct QpGradients {
  Matrix dH;
  Vector dq;
  Matrix dM;
  Vector dlb;
  Vector dub;
};

// ADMM to the requested tolerances followed by an active-set polish step.
QpSolution qp_solve(const QpProblem& p, const QpSettings& settings = {});

// Strong-activity classification from dual signs. Sentinel bounds are never
// classified active.
void classify_active(const QpProblem& p, QpSolution& sol, double tau_act);

// Gradients of a loss L(z*) with seed dL/dz through the reduced KKT system
// of the computed active set. Throws SingularKkt on a degenerate set.
QpGradients qp_differentiate(const QpProblem& p, const QpSolution& sol,
                             const Vector& dL_dz);

// Tape node: forward = qp_solve + classification, backward = qp_differentiate.
NodeRef qp_custom_node(Tape& tape, NodeRef h, NodeRef q, NodeRef m, NodeRef lb,
                       NodeRef ub, const QpSettings& settings = {});

}  // namespace lqmpc
