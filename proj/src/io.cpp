#include "lqmpc/io.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace lqmpc {

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const Eigen::Index n = traj.states.empty() ? 0 : traj.states[0].size();
  const Eigen::Index m = traj.controls.empty() ? 0 : traj.controls[0].size();
  os << "t";
  for (Eigen::Index i = 0; i < n; ++i) os << ",x_" << i;
  for (Eigen::Index i = 0; i < m; ++i) os << ",u_" << i;
  os << "\n" << std::setprecision(17);
  for (size_t t = 0; t < traj.states.size(); ++t) {
    os << static_cast<double>(t) * traj.dt;
    for (Eigen::Index i = 0; i < n; ++i) os << "," << traj.states[t](i);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (t < traj.controls.size())
        os << "," << traj.controls[t](i);
      else
        os << ",";  // terminal state row has no control
    }
    os << "\n";
  }
}

Trajectory read_trajectory_csv(std::istream& is, Eigen::Index n,
                               Eigen::Index m, double dt) {
  Trajectory traj;
  traj.dt = dt;
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("trajectory csv: missing header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');  // t column
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!std::getline(row, cell, ','))
        throw std::runtime_error("trajectory csv: short state row");
      x(i) = std::stod(cell);
    }
    traj.states.push_back(x);
    Vector u(m);
    bool has_u = true;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!std::getline(row, cell, ',') || cell.empty()) {
        has_u = false;
        break;
      }
      u(i) = std::stod(cell);
    }
    if (has_u) traj.controls.push_back(u);
  }
  return traj;
}

void write_prediction_csv(std::ostream& os, const Matrix& predicted_states,
                          double dt, int start_step) {
  os << "k,t";
  for (Eigen::Index i = 0; i < predicted_states.rows(); ++i)
    os << ",xhat_" << i;
  os << "\n" << std::setprecision(17);
  for (Eigen::Index k = 0; k < predicted_states.cols(); ++k) {
    os << k << "," << (start_step + static_cast<double>(k)) * dt;
    for (Eigen::Index i = 0; i < predicted_states.rows(); ++i)
      os << "," << predicted_states(i, k);
    os << "\n";
  }
}

void write_train_record_csv(std::ostream& os, const TrainRecord& rec) {
  os << "iter,imitation_loss,reference_loss,failures\n"
     << std::setprecision(17);
  for (size_t i = 0; i < rec.imitation_loss.size(); ++i) {
    os << i << "," << rec.imitation_loss[i] << "," << rec.reference_loss[i]
       << "," << rec.failures[i] << "\n";
  }
  if (rec.aborted)
    os << "# aborted at iteration " << rec.abort_iteration << ": "
       << rec.abort_reason << "\n";
}

void dump_qp(std::ostream& os, const QpProblem& p, const QpSolution& sol) {
  auto section = [&os](const char* name, const Matrix& m) {
    os << "# " << name << "\n";
    write_matrix_csv(os, m);
  };
  section("H", p.H);
  section("q", p.q);
  section("M", p.M);
  section("lb", p.lb);
  section("ub", p.ub);
  section("z", sol.z);
  section("y", sol.y);
  section("s", sol.s);
  os << "# residuals\n"
     << std::setprecision(17) << sol.primal_residual << ","
     << sol.dual_residual << "\n";
}

void write_svg_chart(std::ostream& os, const Matrix& series,
                     const std::string& title, double x_step, bool log_y) {
  const int w = 720, h = 420, pad = 50;
  const Eigen::Index rows = series.rows();
  const Eigen::Index cols = series.cols();
  Matrix plot = series;
  if (log_y)
    plot = series.array().max(1e-300).log10().matrix();
  double ymin = plot.minCoeff(), ymax = plot.maxCoeff();
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
  const double xmax = static_cast<double>(rows - 1) * x_step;

  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
     << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\">"
     << title << (log_y ? " (log10)" : "") << "</text>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad
     << "\" y2=\"" << h - pad << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad
     << "\" y2=\"" << h - pad << "\" stroke=\"black\"/>\n";
  os << std::setprecision(6);
  os << "<text x=\"" << pad << "\" y=\"" << h - pad + 16 << "\">0</text>\n"
     << "<text x=\"" << w - pad << "\" y=\"" << h - pad + 16
     << "\" text-anchor=\"end\">" << xmax << "</text>\n"
     << "<text x=\"" << pad - 4 << "\" y=\"" << h - pad
     << "\" text-anchor=\"end\">" << ymin << "</text>\n"
     << "<text x=\"" << pad - 4 << "\" y=\"" << pad + 4
     << "\" text-anchor=\"end\">" << ymax << "</text>\n";
  for (Eigen::Index c = 0; c < cols; ++c) {
    os << "<polyline fill=\"none\" stroke=\"" << palette[c % 8]
       << "\" stroke-width=\"1.5\" points=\"";
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double x =
          pad + (w - 2 * pad) * (rows > 1 ? static_cast<double>(r) / (rows - 1)
                                          : 0.0);
      const double y =
          h - pad - (h - 2 * pad) * (plot(r, c) - ymin) / (ymax - ymin);
      os << x << "," << y << " ";
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
}

}  // namespace lqmpc
