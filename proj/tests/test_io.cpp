#include <doctest.h>

#include <sstream>

#include "lqmpc/io.hpp"
#include "lqmpc/plants.hpp"
#include "test_util.hpp"

using namespace lqmpc;

namespace {

Trajectory sample_trajectory() {
  MsdParams params;
  MpcSpec spec;
  spec.system = msd_discretize(params);
  spec.Q = Matrix::Identity(2, 2);
  spec.R = Matrix::Constant(1, 1, 2.0);
  spec.N = 3;
  spec.x_lo = Vector::Constant(2, -kInfinity);
  spec.x_hi = Vector::Constant(2, kInfinity);
  spec.u_lo = Vector::Constant(1, -kInfinity);
  spec.u_hi = Vector::Constant(1, kInfinity);
  spec.form = MpcForm::kPrestabilized;
  spec.install_terminal_cost();
  Vector x0(2);
  x0 << 0.3, -1.7;
  return simulate_closed_loop(spec, x0, 6);
}

}  // namespace

TEST_CASE("trajectory CSV round trip is exact") {
  Trajectory traj = sample_trajectory();
  std::ostringstream os;
  write_trajectory_csv(os, traj);

  std::istringstream is(os.str());
  Trajectory back = read_trajectory_csv(is, 2, 1, traj.dt);
  REQUIRE(back.states.size() == traj.states.size());
  REQUIRE(back.controls.size() == traj.controls.size());
  for (size_t i = 0; i < traj.states.size(); ++i)
    CHECK((back.states[i] - traj.states[i]).cwiseAbs().maxCoeff() == 0.0);
  for (size_t i = 0; i < traj.controls.size(); ++i)
    CHECK((back.controls[i] - traj.controls[i]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.dt == traj.dt);
}

TEST_CASE("trajectory CSV header names every channel") {
  Trajectory traj = sample_trajectory();
  std::ostringstream os;
  write_trajectory_csv(os, traj);
  std::string first_line = os.str().substr(0, os.str().find('\n'));
  CHECK(first_line == "t,x_0,x_1,u_0");
}

TEST_CASE("matrix CSV round trip is exact") {
  lqmpc::testing::TestRng rng(5);
  Matrix m = rng.matrix(4, 3);
  std::ostringstream os;
  write_matrix_csv(os, m);
  std::istringstream is(os.str());
  Matrix back = read_matrix_csv(is);
  CHECK((m - back).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("train record CSV carries the abort diagnostic") {
  TrainRecord rec;
  rec.imitation_loss = {1.0, 0.5};
  rec.reference_loss = {2.0, 1.5};
  rec.failures = {0, 1};
  rec.aborted = true;
  rec.abort_reason = "no stabilizing solution";
  rec.abort_iteration = 1;
  std::ostringstream os;
  write_train_record_csv(os, rec);
  const std::string text = os.str();
  CHECK(text.find("iter,imitation_loss,reference_loss,failures") !=
        std::string::npos);
  CHECK(text.find("no stabilizing solution") != std::string::npos);
  CHECK(text.find("1,0.5") != std::string::npos);
}

TEST_CASE("QP dump names all sections") {
  QpProblem p;
  p.H = Matrix::Identity(2, 2);
  p.q = Vector::Constant(2, -1.0);
  p.M = Matrix::Identity(2, 2);
  p.lb = Vector::Constant(2, -kInfinity);
  p.ub = Vector::Constant(2, kInfinity);
  QpSolution sol = qp_solve(p);
  std::ostringstream os;
  dump_qp(os, p, sol);
  for (const char* section : {"H", "q", "M", "lb", "ub", "z", "y"})
    CHECK(os.str().find(std::string("# ") + section) != std::string::npos);
}

TEST_CASE("SVG chart is well formed") {
  Matrix series(10, 2);
  for (int i = 0; i < 10; ++i) {
    series(i, 0) = std::sin(0.5 * i);
    series(i, 1) = std::exp(-0.1 * i);
  }
  std::ostringstream os;
  write_svg_chart(os, series, "decay");
  const std::string svg = os.str();
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("decay") != std::string::npos);
}
