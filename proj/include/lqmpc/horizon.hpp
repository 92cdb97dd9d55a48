#pragma once

#include <cstdint>

#include "lqmpc/mpc.hpp"

namespace lqmpc {

struct HorizonQuery {
  Vector box_lo;          // axis-aligned sampling box for initial states
  Vector box_hi;
  double epsilon = 1e-6;  // action-delta tolerance
  int samples = 500;
  double shrink = 0.5;    // eta, box scale factor about the origin
  std::uint64_t seed = 0;
  int max_shrinks = 40;
};

struct HorizonCandidate {
  int candidate;        // N_bar tested
  double box_scale;     // cumulative shrink applied to the box
  int violations;       // samples violating the tail-delta bound
  double max_tail_delta;
  bool accepted;
};

struct HorizonResult {
  bool accepted = false;
  int horizon = 0;            // accepted N_bar (valid when accepted)
  int suggested_horizon = 0;  // N + 1 on failure
  Vector box_lo, box_hi;      // box at acceptance
  std::vector<HorizonCandidate> log;
};

// Sampled verification that the optimized control deltas vanish beyond a
// candidate horizon, with box shrinking about the origin on failure. The spec
// must be pre-stabilized with the DARE gain so delta-u is defined.
HorizonResult verify_reduce(const MpcSpec& spec, const HorizonQuery& query,
                            const QpSettings& settings = {});

}  // namespace lqmpc
