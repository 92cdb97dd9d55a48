#include "lqmpc/linalg.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace lqmpc {

Matrix vec(const Matrix& a) {
  Matrix out(a.size(), 1);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) out(k++, 0) = a(i, j);
  return out;
}

Matrix unvec(const Matrix& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols)
    throw std::invalid_argument("unvec: size mismatch");
  Matrix out(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = v(k++);
  return out;
}

Matrix commutation_matrix(Eigen::Index m, Eigen::Index n) {
  Matrix v = Matrix::Zero(m * n, m * n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      // vec(A) index of A(i,j) is j*m+i; vec(A^T) index is i*n+j.
      v(i * n + j, j * m + i) = 1.0;
    }
  return v;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

namespace {

// (13,13) Pade numerator/denominator split: expm(A) ~ (V-U)^{-1} (V+U).
void pade13(const Matrix& a, Matrix& u, Matrix& v) {
  static const double b[] = {64764752532480000., 32382376266240000.,
                             7771770303897600.,  1187353796428800.,
                             129060195264000.,   10559470521600.,
                             670442572800.,      33522128640.,
                             1323241920.,        40840800.,
                             960960.,            16380.,
                             182.,               1.};
  const Eigen::Index n = a.rows();
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  u = a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
           b[3] * a2 + b[1] * ident);
  v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 +
      b[2] * a2 + b[0] * ident;
}

}  // namespace

Matrix expm(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("expm: non-square");
  if (!a.allFinite()) throw std::invalid_argument("expm: non-finite input");
  const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();  // inf-norm
  // theta_13 for the (13,13) approximant
  const double theta = 5.371920351148152;
  int squarings = 0;
  Matrix scaled = a;
  if (norm > theta) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / theta)));
    scaled = a / std::pow(2.0, squarings);
  }
  Matrix u, v;
  pade13(scaled, u, v);
  Matrix r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < squarings; ++i) r = r * r;
  return r;
}

Matrix solve(const Matrix& a, const Matrix& b) {
  if (a.rows() != a.cols()) throw std::invalid_argument("solve: non-square A");
  if (b.rows() != a.rows()) throw std::invalid_argument("solve: row mismatch");
  Eigen::PartialPivLU<Matrix> lu(a);
  // Cheap condition estimate from the U factor; exact conditioning is not
  // needed, only a singularity trip-wire.
  const Vector diag = lu.matrixLU().diagonal().cwiseAbs();
  const double dmax = diag.maxCoeff();
  const double dmin = diag.minCoeff();
  const double cond = (dmin == 0.0) ? std::numeric_limits<double>::infinity()
                                    : dmax / dmin;
  if (!(cond < tol::kCondLimit)) throw SingularMatrixError(cond);
  return lu.solve(b);
}

double spectral_radius(const Matrix& a) {
  if (a.rows() != a.cols())
    throw std::invalid_argument("spectral_radius: non-square");
  if (!a.allFinite())
    throw std::invalid_argument("spectral_radius: non-finite input");
  if (a.rows() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(a, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("spectral_radius: eigenvalue iteration failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

void write_matrix_csv(std::ostream& os, const Matrix& a) {
  os << a.rows() << "," << a.cols() << "\n";
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (j) os << ",";
      os << a(i, j);
    }
    os << "\n";
  }
}

Matrix read_matrix_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("matrix csv: missing header");
  std::istringstream head(line);
  Eigen::Index rows, cols;
  char comma;
  if (!(head >> rows >> comma >> cols) || comma != ',')
    throw std::runtime_error("matrix csv: bad header '" + line + "'");
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!std::getline(is, line))
      throw std::runtime_error("matrix csv: truncated");
    std::istringstream row(line);
    std::string cell;
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!std::getline(row, cell, ','))
        throw std::runtime_error("matrix csv: short row");
      out(i, j) = std::stod(cell);
    }
  }
  return out;
}

std::string matrix_to_csv(const Matrix& a) {
  std::ostringstream os;
  write_matrix_csv(os, a);
  return os.str();
}

Matrix matrix_from_csv(const std::string& text) {
  std::istringstream is(text);
  return read_matrix_csv(is);
}

}  // namespace lqmpc
