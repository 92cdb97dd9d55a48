#include <doctest.h>

#include "lqmpc/graph.hpp"
#include "test_util.hpp"

using namespace lqmpc;
using lqmpc::testing::TestRng;

TEST_CASE("forward recording computes values and checks shapes") {
  Tape tape;
  TestRng rng(1);
  Matrix av = rng.matrix(2, 3), bv = rng.matrix(3, 2), cv = rng.matrix(2, 2);
  NodeRef a = tape.input(av);
  NodeRef b = tape.input(bv);
  NodeRef c = tape.input(cv);

  NodeRef ab = tape.matmul(a, b);
  CHECK(tape.value(ab).rows() == 2);
  CHECK(tape.value(ab).cols() == 2);

  NodeRef sum = tape.add(ab, c);
  CHECK((tape.value(sum) - (av * bv + cv)).cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS((void)tape.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)tape.matmul(a, c), std::invalid_argument);
}

TEST_CASE("scalar product rule") {
  Tape tape;
  NodeRef a = tape.input(Matrix::Constant(1, 1, 3.0));
  NodeRef b = tape.input(Matrix::Constant(1, 1, 4.0));
  NodeRef y = tape.matmul(a, b);
  tape.backward(y, Matrix::Ones(1, 1));
  CHECK(tape.adjoint(a)(0, 0) == doctest::Approx(4.0));
  CHECK(tape.adjoint(b)(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("transpose adjoint") {
  Tape tape;
  TestRng rng(2);
  NodeRef a = tape.input(rng.matrix(2, 3));
  NodeRef y = tape.transpose(a);
  Matrix g = rng.matrix(3, 2);
  tape.backward(y, g);
  CHECK((tape.adjoint(a) - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("repeated consumer accumulates") {
  // y = A * A; adjA = G A^T + A^T G.
  Tape tape;
  TestRng rng(3);
  Matrix av = rng.matrix(3, 3);
  NodeRef a = tape.input(av);
  NodeRef y = tape.matmul(a, a);
  Matrix g = rng.matrix(3, 3);
  tape.backward(y, g);
  Matrix expect = g * av.transpose() + av.transpose() * g;
  CHECK((tape.adjoint(a) - expect).cwiseAbs().maxCoeff() < 1e-13);
}

namespace {

// Builds a tape mixing every built-in op and returns the scalar output value.
double mixed_forward(const Matrix& a, const Matrix& b, const Matrix& c,
                     Matrix* adj_a = nullptr, Matrix* adj_b = nullptr,
                     Matrix* adj_c = nullptr) {
  Tape tape;
  NodeRef na = tape.input(a);
  NodeRef nb = tape.input(b);
  NodeRef nc = tape.input(c);
  NodeRef prod = tape.matmul(na, nb);                 // 2x2
  NodeRef mixed = tape.sub(prod, tape.transpose(nc)); // 2x2
  NodeRef scaled = tape.scalar_mul(0.7, mixed);
  NodeRef stack = tape.concat_rows({scaled, tape.add(prod, prod)});  // 4x2
  NodeRef wide = tape.concat_cols({stack, stack});                   // 4x4
  NodeRef vecd = tape.matmul(wide, tape.constant(Matrix::Ones(4, 1)));
  NodeRef y = tape.matmul(tape.transpose(vecd), vecd);  // 1x1
  if (adj_a) {
    tape.backward(y, Matrix::Ones(1, 1));
    *adj_a = tape.adjoint(na);
    *adj_b = tape.adjoint(nb);
    *adj_c = tape.adjoint(nc);
  }
  return tape.value(y)(0, 0);
}

}  // namespace

TEST_CASE("backward matches finite differences on a mixed tape") {
  TestRng rng(4);
  Matrix a = rng.matrix(2, 3), b = rng.matrix(3, 2), c = rng.matrix(2, 2);
  Matrix ga, gb, gc;
  mixed_forward(a, b, c, &ga, &gb, &gc);

  const double h = 1e-6;
  auto check_grad = [&](Matrix m, const Matrix& grad, int which) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        Matrix mp = m, mm = m;
        mp(i, j) += h;
        mm(i, j) -= h;
        double fp, fm;
        if (which == 0) {
          fp = mixed_forward(mp, b, c);
          fm = mixed_forward(mm, b, c);
        } else if (which == 1) {
          fp = mixed_forward(a, mp, c);
          fm = mixed_forward(a, mm, c);
        } else {
          fp = mixed_forward(a, b, mp);
          fm = mixed_forward(a, b, mm);
        }
        const double fd = (fp - fm) / (2 * h);
        CHECK(grad(i, j) ==
              doctest::Approx(fd).epsilon(1e-6).scale(1.0 + std::abs(fd)));
      }
  };
  check_grad(a, ga, 0);
  check_grad(b, gb, 1);
  check_grad(c, gc, 2);
}

TEST_CASE("replay determinism") {
  TestRng rng(5);
  Matrix a = rng.matrix(2, 3), b = rng.matrix(3, 2), c = rng.matrix(2, 2);
  const double y1 = mixed_forward(a, b, c);
  const double y2 = mixed_forward(a, b, c);
  CHECK(y1 == y2);  // bit identical
}

TEST_CASE("custom node rule invocation") {
  Tape tape;
  NodeRef a = tape.input(Matrix::Constant(1, 1, 2.0));
  // y = a^3 with a hand-registered backward.
  const double av = tape.value(a)(0, 0);
  NodeRef y = tape.custom(
      {a}, Matrix::Constant(1, 1, av * av * av),
      [](const std::vector<Matrix>& pv, const Matrix&, const Matrix& adj) {
        const double x = pv[0](0, 0);
        return std::vector<Matrix>{Matrix::Constant(1, 1, 3 * x * x * adj(0, 0))};
      });
  tape.backward(y, Matrix::Ones(1, 1));
  CHECK(tape.adjoint(a)(0, 0) == doctest::Approx(12.0));
}
