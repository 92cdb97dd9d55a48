#pragma once

#include <optional>
#include <vector>

#include "lqmpc/graph.hpp"
#include "lqmpc/linalg.hpp"
#include "lqmpc/qp.hpp"
#include "lqmpc/riccati.hpp"

namespace lqmpc {

struct LtiSystem {
  Matrix A;  // n x n
  Matrix B;  // n x m
  double dt = 1.0;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index m() const { return B.cols(); }
};

enum class MpcForm { kStandard, kPrestabilized };

struct MpcSpec {
  LtiSystem system;
  Matrix Q;            // n x n, PSD
  Matrix R;            // m x m, PD
  Matrix QN;           // n x n terminal cost (DARE P when set by the trainer)
  std::optional<Matrix> K;  // pre-stabilizing gain, m x n
  int N = 1;
  Vector x_lo, x_hi;   // state box, sentinels allowed
  Vector u_lo, u_hi;   // input box, u_lo <= 0 <= u_hi
  double ku = 100.0;
  double kx = 100.0;
  MpcForm form = MpcForm::kPrestabilized;

  void validate() const;
  // Solves the DARE for (A,B,Q,R) and installs QN = P, K.
  void install_terminal_cost();
};

// Tape handles for every differentiable MPC parameter. Fixed quantities can
// be registered as constants; shapes must match the spec.
struct MpcParamNodes {
  NodeRef A, B, Q, R, QN, K;
  NodeRef x_lo, x_hi, u_lo, u_hi;  // column vectors
  NodeRef ku, kx;                  // 1x1
};

// Register every spec parameter as a tape input (K/QN from the DARE node when
// use_dare is set, otherwise from the spec fields).
MpcParamNodes record_params(Tape& tape, const MpcSpec& spec, bool use_dare);

// Condensed QP of the MPC problem recorded on a tape. Decision vector layout:
// [controls (N*m) | r slacks (N*m) | s slacks (N*n)].
struct CondensedQpNodes {
  NodeRef H, q, M, lb, ub;
  // u_hat = input_map * z_u + input_shift (identity / zero for the standard
  // form; K-dependent for the pre-stabilized form).
  NodeRef input_map;
  NodeRef input_shift;
  Matrix Phi, Psi;  // prediction-matrix values, for diagnostics
  Eigen::Index n = 0, m = 0;
  int N = 0;
};

CondensedQpNodes assemble_standard(Tape& tape, const MpcParamNodes& p, int N,
                                   const Vector& x_t);
CondensedQpNodes assemble_prestabilized(Tape& tape, const MpcParamNodes& p,
                                        int N, const Vector& x_t);

// Value-level condensed QP for simulation paths.
struct CondensedQp {
  QpProblem problem;
  Matrix input_map;
  Vector input_shift;
  Matrix Phi, Psi;
  Eigen::Index n = 0, m = 0;
  int N = 0;
};

CondensedQp assemble(const MpcSpec& spec, const Vector& x_t);

struct MpcStep {
  Vector u;             // implemented control
  Matrix u_hat;         // m x N full optimized control sequence
  Matrix delta_u;       // m x N raw decision block (equals u_hat for standard)
  Matrix x_hat;         // n x (N+1) predicted states including x_0
  double max_slack_r = 0.0;
  double max_slack_s = 0.0;
  QpSolution qp;
};

MpcStep mpc_step(const MpcSpec& spec, const Vector& x_t,
                 const QpSettings& settings = {});

struct Trajectory {
  std::vector<Vector> states;             // x_0 .. x_T
  std::vector<Vector> controls;           // u_0 .. u_{T-1}
  std::vector<Matrix> predicted_controls; // per step, m x N
  std::vector<Matrix> predicted_states;   // per step, n x (N+1)
  double dt = 1.0;

  int steps() const { return static_cast<int>(controls.size()); }
};

Trajectory simulate_closed_loop(const MpcSpec& spec, const Vector& x0, int T,
                                const QpSettings& settings = {});

struct ExpertResult {
  Trajectory trajectory;
  int horizon;          // accepted N_inf
  double max_deviation; // worst prediction-vs-closed-loop gap at acceptance
};

// Installs QN = P and K from the DARE, then grows the horizon (doubling, then
// binary-search refinement to the minimal matching value) until open-loop
// predictions match the closed loop to match_tol everywhere.
ExpertResult generate_expert(MpcSpec spec, const Vector& x0, int T,
                             double match_tol = tol::kMatchTol,
                             int horizon_cap = 256,
                             const QpSettings& settings = {});

}  // namespace lqmpc
