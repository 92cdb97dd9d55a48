#pragma once

#include <string>

#include "lqmpc/learn.hpp"
#include "lqmpc/mpc.hpp"

namespace lqmpc {

// Trajectory CSV: header `t, x_0.., u_0..`, one row per step, 17 digits.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
Trajectory read_trajectory_csv(std::istream& is, Eigen::Index n,
                               Eigen::Index m, double dt);

// Per-step prediction dump: one CSV per time step, states as columns.
void write_prediction_csv(std::ostream& os, const Matrix& predicted_states,
                          double dt, int start_step);

// TrainRecord CSV: `iter, imitation_loss, reference_loss, failures`.
void write_train_record_csv(std::ostream& os, const TrainRecord& rec);

// QP dump (problem + solution) for offline cross-checking: a sequence of
// named matrix-CSV sections.
void dump_qp(std::ostream& os, const QpProblem& p, const QpSolution& sol);

// Minimal SVG polyline chart: one series per column of `series`, x axis from
// the row index scaled by x_step.
void write_svg_chart(std::ostream& os, const Matrix& series,
                     const std::string& title, double x_step = 1.0,
                     bool log_y = false);

}  // namespace lqmpc
