#include "lqmpc/plants.hpp"

#include <random>

namespace lqmpc {

LtiSystem msd_discretize(const MsdParams& p) {
  if (p.mass <= 0.0 || p.dt <= 0.0)
    throw std::invalid_argument("msd_discretize: need mass > 0 and dt > 0");
  Matrix ac(2, 2);
  ac << 0.0, 1.0, -p.stiffness / p.mass, -p.damping / p.mass;
  Matrix bc(2, 1);
  bc << 0.0, 1.0 / p.mass;

  // exp([[Ac, Bc], [0, 0]] dt) carries (A, B) in its top blocks.
  Matrix aug = Matrix::Zero(3, 3);
  aug.topLeftCorner(2, 2) = ac;
  aug.topRightCorner(2, 1) = bc;
  const Matrix e = expm(aug * p.dt);

  LtiSystem sys;
  sys.A = e.topLeftCorner(2, 2);
  sys.B = e.topRightCorner(2, 1);
  sys.dt = p.dt;
  return sys;
}

PlatoonModel platoon_build(const PlatoonParams& p) {
  if (p.vehicles < 2)
    throw std::invalid_argument("platoon_build: need at least 2 vehicles");
  if (!(p.y_min < p.y_ss) || !(p.brake_max < 0.0) || !(p.accel_max > 0.0) ||
      p.dt <= 0.0)
    throw std::invalid_argument("platoon_build: bad parameters");

  const Eigen::Index nd = p.vehicles - 1;  // relative coordinates
  const Eigen::Index n = 2 * nd;
  const Eigen::Index m = p.vehicles;

  // Bidiagonal difference matrix mapping accelerations to relative ones.
  Matrix bhat = Matrix::Zero(nd, m);
  for (Eigen::Index i = 0; i < nd; ++i) {
    bhat(i, i) = -1.0;
    bhat(i, i + 1) = 1.0;
  }

  PlatoonModel model;
  model.system.A = Matrix::Identity(n, n);
  model.system.A.topRightCorner(nd, nd) = p.dt * Matrix::Identity(nd, nd);
  model.system.B = Matrix::Zero(n, m);
  model.system.B.topRows(nd) = 0.5 * p.dt * p.dt * bhat;
  model.system.B.bottomRows(nd) = p.dt * bhat;
  model.system.dt = p.dt;

  model.x_lo = Vector::Constant(n, -kInfinity);
  model.x_lo.head(nd).setConstant(p.y_min - p.y_ss);
  model.x_hi = Vector::Constant(n, kInfinity);
  model.u_lo = Vector::Constant(m, p.brake_max);
  model.u_hi = Vector::Constant(m, p.accel_max);
  return model;
}

std::vector<Vector> sample_initial_conditions(const PlatoonParams& p,
                                              int count, std::uint64_t seed,
                                              double margin, double span,
                                              double v_max) {
  if (count < 1)
    throw std::invalid_argument("sample_initial_conditions: count >= 1");
  const Eigen::Index nd = p.vehicles - 1;
  std::mt19937_64 gen(seed);
  auto uniform = [&gen](double lo, double hi) {
    const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  };
  std::vector<Vector> out;
  out.reserve(static_cast<size_t>(count));
  for (int c = 0; c < count; ++c) {
    Vector x(2 * nd);
    for (Eigen::Index i = 0; i < nd; ++i)
      x(i) = uniform(p.y_min - p.y_ss + margin, span);
    for (Eigen::Index i = 0; i < nd; ++i)
      x(nd + i) = uniform(-v_max, v_max);
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace lqmpc
