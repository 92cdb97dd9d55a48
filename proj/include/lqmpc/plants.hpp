#pragma once

#include <cstdint>

#include "lqmpc/mpc.hpp"

namespace lqmpc {

struct MsdParams {
  double mass = 1.0;
  double damping = 1.0;
  double stiffness = 1.0;
  double dt = 0.2;
};

// Zero-order-hold discretization of the mass-spring-damper via the augmented
// matrix exponential; no continuous-dynamics inverse is needed.
LtiSystem msd_discretize(const MsdParams& p);

struct PlatoonParams {
  int vehicles = 10;      // n_v >= 2
  double dt = 0.7;
  double y_ss = 30.0;     // target separation
  double y_min = 10.0;    // safe separation
  double accel_max = 2.5; // a > 0
  double brake_max = -5.0;// b < 0
};

struct PlatoonModel {
  LtiSystem system;  // n = 2(n_v - 1), m = n_v
  Vector x_lo, x_hi;
  Vector u_lo, u_hi;
};

PlatoonModel platoon_build(const PlatoonParams& p);

// Seeded uniform feasible initial conditions: relative positions strictly
// above the safety bound, bounded relative velocities.
std::vector<Vector> sample_initial_conditions(const PlatoonParams& p,
                                              int count, std::uint64_t seed,
                                              double margin = 2.0,
                                              double span = 20.0,
                                              double v_max = 2.0);

}  // namespace lqmpc
