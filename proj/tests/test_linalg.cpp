#include <doctest.h>

#include <sstream>

#include "lqmpc/linalg.hpp"
#include "test_util.hpp"

using namespace lqmpc;
using lqmpc::testing::TestRng;

TEST_CASE("vec stacks columns") {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  Matrix v = vec(a);
  CHECK(v(0) == 1);
  CHECK(v(1) == 3);
  CHECK(v(2) == 2);
  CHECK(v(3) == 4);

  Matrix s(1, 1);
  s << 5;
  CHECK(vec(s)(0) == 5);

  Matrix col(2, 1);
  col << 1, 2;
  CHECK(vec(col) == col);

  CHECK(unvec(v, 2, 2) == a);
}

TEST_CASE("commutation matrix maps vec(A) to vec(A^T)") {
  CHECK(commutation_matrix(1, 1)(0, 0) == 1.0);

  Matrix v22 = commutation_matrix(2, 2);
  Matrix expect = Matrix::Zero(4, 4);
  expect(0, 0) = expect(3, 3) = 1;
  expect(1, 2) = expect(2, 1) = 1;
  CHECK((v22 - expect).cwiseAbs().maxCoeff() == 0.0);

  TestRng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix a = rng.matrix(2, 3);
    Matrix lhs = commutation_matrix(2, 3) * vec(a);
    Matrix rhs = vec(Matrix(a.transpose()));
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() == 0.0);
  }

  // V_{m,n} V_{n,m} = I for small sizes.
  for (Eigen::Index m = 1; m <= 5; ++m)
    for (Eigen::Index n = 1; n <= 5; ++n) {
      Matrix prod = commutation_matrix(m, n) * commutation_matrix(n, m);
      CHECK((prod - Matrix::Identity(m * n, m * n)).cwiseAbs().maxCoeff() ==
            0.0);
    }
}

TEST_CASE("kron definition and identities") {
  Matrix one(1, 1);
  one << 3;
  Matrix d = kron(Matrix::Identity(2, 2), one);
  CHECK(d(0, 0) == 3);
  CHECK(d(1, 1) == 3);
  CHECK(d(0, 1) == 0);

  Matrix swap(2, 2);
  swap << 0, 1, 1, 0;
  Matrix blocks = kron(Matrix::Identity(2, 2), swap);
  CHECK(blocks.rows() == 4);
  CHECK(blocks(0, 1) == 1);
  CHECK(blocks(2, 3) == 1);
  CHECK(blocks(0, 2) == 0);

  TestRng rng(7);
  SUBCASE("vec(AXB) = (B^T kron A) vec(X)") {
    for (int trial = 0; trial < 20; ++trial) {
      Matrix a = rng.matrix(2, 2), x = rng.matrix(2, 2), b = rng.matrix(2, 2);
      Matrix lhs = vec(Matrix(a * x * b));
      Matrix rhs = kron(Matrix(b.transpose()), a) * vec(x);
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("mixed product") {
    for (int trial = 0; trial < 20; ++trial) {
      Matrix a = rng.matrix(2, 3), b = rng.matrix(3, 2), c = rng.matrix(3, 2),
             d2 = rng.matrix(2, 3);
      Matrix lhs = kron(a, b) * kron(c, d2);
      Matrix rhs = kron(Matrix(a * c), Matrix(b * d2));
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

namespace {

Matrix expm_taylor(const Matrix& a, int terms) {
  Matrix acc = Matrix::Identity(a.rows(), a.cols());
  Matrix term = acc;
  for (int k = 1; k <= terms; ++k) {
    term = term * a / static_cast<double>(k);
    acc += term;
  }
  return acc;
}

}  // namespace

TEST_CASE("matrix exponential") {
  CHECK((expm(Matrix::Zero(2, 2)) - Matrix::Identity(2, 2))
            .cwiseAbs()
            .maxCoeff() < 1e-15);

  const double dt = 0.3;
  Matrix nil(2, 2);
  nil << 0, dt, 0, 0;
  Matrix e = expm(nil);
  CHECK(e(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(e(0, 1) == doctest::Approx(dt).epsilon(1e-14));
  CHECK(e(1, 0) == 0.0);

  // Damped oscillator generator against a 40-term Taylor series.
  Matrix ac(2, 2);
  ac << 0, 1, -1, -1;
  Matrix lhs = expm(Matrix(ac * 0.2));
  Matrix rhs = expm_taylor(ac * 0.2, 40);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

  TestRng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a = rng.matrix(4, 4);
    a *= 2.0 / std::max(1.0, a.norm());
    Matrix prod = expm(a) * expm(Matrix(-a));
    CHECK((prod - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
  }

  CHECK_THROWS_AS((void)expm(Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("linear solve") {
  Matrix b(3, 2);
  b << 1, 2, 3, 4, 5, 6;
  CHECK((solve(Matrix::Identity(3, 3), b) - b).cwiseAbs().maxCoeff() <
        1e-14);

  Matrix d(2, 2);
  d << 2, 0, 0, 4;
  Matrix inv = solve(d, Matrix::Identity(2, 2));
  CHECK(inv(0, 0) == doctest::Approx(0.5));
  CHECK(inv(1, 1) == doctest::Approx(0.25));

  TestRng rng(5);
  Matrix a = rng.spd(5, 1.0);
  Matrix rhs = rng.matrix(5, 3);
  Matrix x = solve(a, rhs);
  CHECK((a * x - rhs).norm() <= tol::kSolveResidual * (1.0 + rhs.norm()));

  Matrix sing = Matrix::Zero(2, 2);
  sing(0, 0) = 1.0;
  CHECK_THROWS_AS((void)solve(sing, Matrix::Identity(2, 2)),
                  SingularMatrixError);
}

TEST_CASE("spectral radius") {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 0.5;
  d(1, 1) = -0.9;
  CHECK(spectral_radius(d) == doctest::Approx(0.9).epsilon(1e-12));

  Matrix rot(2, 2);
  rot << 0, 1, -1, 0;
  CHECK(spectral_radius(rot) == doctest::Approx(1.0).epsilon(1e-9));

  // Companion matrix of z^2 - 0.5 z - 0.3.
  Matrix comp(2, 2);
  comp << 0, 1, 0.3, 0.5;
  const double root = (0.5 + std::sqrt(0.25 + 1.2)) / 2.0;
  CHECK(spectral_radius(comp) == doctest::Approx(root).epsilon(1e-9));
}

TEST_CASE("matrix csv round trip") {
  TestRng rng(9);
  Matrix a = rng.matrix(3, 4, -10, 10);
  a(1, 2) = 1.0 / 3.0;
  Matrix back = matrix_from_csv(matrix_to_csv(a));
  CHECK((a - back).cwiseAbs().maxCoeff() == 0.0);
}
