#pragma once

#include <memory>
#include <utility>

#include "lqmpc/graph.hpp"
#include "lqmpc/linalg.hpp"

namespace lqmpc {

struct NoStabilizingSolution : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IllConditioned : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The implicit-function hypothesis fails at this parameter point; the caller
// must abort the training step with a diagnostic.
struct Z1Singular : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DareSolution {
  Matrix P;   // stabilizing solution, symmetric
  Matrix K;   // LQR gain, K = -(R + B'PB)^{-1} B'PA
  Matrix M1;  // P - P B M2 B' P
  Matrix M2;  // M3^{-1}
  Matrix M3;  // R + B'PB
  double residual_norm = 0.0;
  double closed_loop_radius = 0.0;  // rho(A + BK)
};

struct DareJacobians {
  Matrix dP_dA;  // n^2 x n^2
  Matrix dP_dB;  // n^2 x nm
  Matrix dP_dQ;  // n^2 x n^2
  Matrix dP_dR;  // n^2 x m^2
};

struct GainJacobians {
  Matrix dK_dA;  // mn x n^2
  Matrix dK_dB;  // mn x nm
  Matrix dK_dQ;  // mn x n^2
  Matrix dK_dR;  // mn x m^2
};

// Unique stabilizing DARE solution by structured doubling, with a damped
// fixed-point fallback. Q must be PSD and R PD (checked).
DareSolution solve_dare(const Matrix& a, const Matrix& b, const Matrix& q,
                        const Matrix& r);

// Analytic Jacobians of vec(P) with respect to vec(A), vec(B), vec(Q), vec(R)
// obtained from the implicitly differentiated fixed point.
DareJacobians dare_jacobians(const DareSolution& sol, const Matrix& a,
                             const Matrix& b, const Matrix& q, const Matrix& r);

// Chain rule through K = -M2 B'PA on top of the P Jacobians.
GainJacobians gain_jacobians(const DareSolution& sol, const Matrix& a,
                             const Matrix& b, const Matrix& q, const Matrix& r,
                             const DareJacobians& jac);

// Records (P, K) as custom nodes on the tape. Jacobians are computed lazily
// on the first backward touch and shared between the two outputs.
std::pair<NodeRef, NodeRef> dare_custom_node(Tape& tape, NodeRef a, NodeRef b,
                                             NodeRef q, NodeRef r);

}  // namespace lqmpc
