#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <stdexcept>
#include <string>

namespace lqmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Central tolerance table. Tests and solvers read the same constants.
namespace tol {
inline constexpr double kSymmetry = 1e-10;        // symmetry enforcement
inline constexpr double kSolveResidual = 1e-10;   // linear solve residual
inline constexpr double kDareResidual = 1e-9;     // DARE fixed-point residual
inline constexpr double kDareIterate = 1e-13;     // DARE iterate change
inline constexpr double kStabilityMargin = 1e-9;  // rho(A+BK) < 1 - margin
inline constexpr double kCondLimit = 1e12;        // singularity threshold
inline constexpr double kActiveDual = 1e-8;       // strong-activity dual threshold
inline constexpr double kQpEps = 1e-10;           // ADMM eps_abs / eps_rel
inline constexpr double kMatchTol = 1e-8;         // expert prediction match
}  // namespace tol

// "No bound" sentinel used only inside QP bound vectors.
inline constexpr double kInfinity = 1e20;

inline bool is_free_bound(double v) { return std::abs(v) >= kInfinity; }

struct SingularMatrixError : std::runtime_error {
  double condition_estimate;
  explicit SingularMatrixError(double cond)
      : std::runtime_error("matrix is singular to working precision (cond ~ " +
                           std::to_string(cond) + ")"),
        condition_estimate(cond) {}
};

// Column-stacking: entry (i,j) of A lands at row j*rows + i.
Matrix vec(const Matrix& a);

// Inverse of vec for a known target shape.
Matrix unvec(const Matrix& v, Eigen::Index rows, Eigen::Index cols);

// Permutation V_{m,n} with V * vec(A) = vec(A^T) for A in R^{m x n}.
Matrix commutation_matrix(Eigen::Index m, Eigen::Index n);

Matrix kron(const Matrix& a, const Matrix& b);

// Scaling-and-squaring with a (13,13) Pade approximant.
Matrix expm(const Matrix& a);

// X with A X = B via partially pivoted LU; throws SingularMatrixError when the
// estimated condition number exceeds tol::kCondLimit.
Matrix solve(const Matrix& a, const Matrix& b);

double spectral_radius(const Matrix& a);

// CSV fragment: "rows,cols" header then one comma-separated line per row,
// 17 significant digits.
void write_matrix_csv(std::ostream& os, const Matrix& a);
Matrix read_matrix_csv(std::istream& is);

std::string matrix_to_csv(const Matrix& a);
Matrix matrix_from_csv(const std::string& text);

}  // namespace lqmpc
