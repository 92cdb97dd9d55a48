#pragma once

#include <cstdint>
#include <vector>

#include "lqmpc/mpc.hpp"

namespace lqmpc {

enum class Learnable { kA, kB, kQ, kR, kBounds, kKu, kKx };

struct TrainConfig {
  std::vector<Learnable> learnable;
  bool diagonal_q = false;  // diagonal-only structure mask for Q
  bool diagonal_r = false;
  double beta = 0.0;     // model-error weight
  int iterations = 1000;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double psd_floor = 1e-8;  // eigenvalue / diagonal clamp for learned Q, R
  QpSettings qp;
};

struct TrainRecord {
  std::vector<double> imitation_loss;  // one entry per iteration
  std::vector<double> reference_loss;  // ||vec X - vec X_true||^2 over S
  std::vector<int> failures;           // skipped samples per iteration
  bool aborted = false;
  std::string abort_reason;
  int abort_iteration = -1;
};

// One (trajectory, start index) training sample; windows that would overrun
// the trajectory end are dropped at sample extraction.
struct Sample {
  const Trajectory* trajectory;
  int t;
};

std::vector<Sample> make_samples(const std::vector<Trajectory>& batch, int N);

// Eq-style imitation loss recorded on the tape: mean over samples of
// ||u_{t:t+N} - u_hat*(x_t)||^2 + beta ||A x_t + B u_t - x_{t+1}||^2.
// Returns a 1x1 node. The spec must use the pre-stabilized form.
NodeRef imitation_loss(Tape& tape, const MpcParamNodes& params, int N,
                       const std::vector<Sample>& samples, double beta,
                       const QpSettings& qp = {});

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  int t = 0;
};

// Standard bias-corrected Adam over a parameter list; masks (same shapes,
// entries 0 or 1) are applied to the gradients before the update.
void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads,
               const std::vector<Matrix>& masks, AdamState& state,
               const TrainConfig& cfg);

struct TrainResult {
  MpcSpec spec;  // final learned spec (QN, K refreshed from the DARE)
  TrainRecord record;
};

// Infinite-horizon MPC learning loop: each iteration solves the DARE, solves
// the per-sample MPC QPs on a tape, backpropagates, and applies one Adam
// update to the learnable subset. `reference` provides the ground-truth
// parameters for the reported reference loss.
TrainResult train(const TrainConfig& cfg, const std::vector<Trajectory>& batch,
                  const MpcSpec& init, const MpcSpec& reference);

}  // namespace lqmpc
