// Batch CLI for the differentiable infinite-horizon MPC toolkit.
//
// Verbs:
//   gen-expert      generate expert demonstrations with a grown horizon
//   train           learn MPC parameters from expert demonstrations
//   simulate        closed-loop simulation of a configured controller
//   verify-horizon  sampled horizon verification and reduction
//   gradcheck       finite-difference audit of the analytic gradients
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure,
// 4 gradient-audit failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lqmpc/horizon.hpp"
#include "lqmpc/io.hpp"
#include "lqmpc/learn.hpp"
#include "lqmpc/plants.hpp"
#include "lqmpc/riccati.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lqmpc;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

Vector json_vector(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  Eigen::Index i = 0;
  for (const auto& e : j) {
    if (e.is_string() && e.get<std::string>() == "inf")
      v(i++) = kInfinity;
    else if (e.is_string() && e.get<std::string>() == "-inf")
      v(i++) = -kInfinity;
    else
      v(i++) = e.get<double>();
  }
  return v;
}

Matrix json_matrix(const json& j) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = j[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
  return m;
}

struct Config {
  json root;
  std::string experiment;  // "msd" or "platoon"

  MsdParams msd;
  Vector msd_x0;

  PlatoonParams platoon;
  int platoon_instances = 3;

  MpcSpec spec;           // fully built, terminal cost installed
  int expert_steps = 50;
  double match_tol = 1e-8;
  int horizon_cap = 256;

  TrainConfig train;
  double init_perturbation = 0.5;  // uniform half-width added to learned A
  double cost_init_max = 3.0;      // U[0, max] diagonal init for learned Q/R

  HorizonQuery horizon;
};

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

Learnable parse_learnable(const std::string& name) {
  if (name == "A") return Learnable::kA;
  if (name == "B") return Learnable::kB;
  if (name == "Q") return Learnable::kQ;
  if (name == "R") return Learnable::kR;
  if (name == "bounds") return Learnable::kBounds;
  if (name == "ku") return Learnable::kKu;
  if (name == "kx") return Learnable::kKx;
  throw ConfigError("unknown learnable parameter: " + name);
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  Config cfg;
  try {
    in >> cfg.root;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  const json& root = cfg.root;

  cfg.experiment = get_or<std::string>(root, "experiment", "msd");
  if (cfg.experiment != "msd" && cfg.experiment != "platoon")
    throw ConfigError("experiment must be \"msd\" or \"platoon\"");

  Vector x_lo, x_hi, u_lo, u_hi;
  if (cfg.experiment == "msd") {
    const json j = root.value("msd", json::object());
    cfg.msd.mass = get_or(j, "mass", 1.0);
    cfg.msd.damping = get_or(j, "damping", 1.0);
    cfg.msd.stiffness = get_or(j, "stiffness", 1.0);
    cfg.msd.dt = get_or(j, "dt", 0.2);
    cfg.spec.system = msd_discretize(cfg.msd);
    cfg.msd_x0 = j.contains("x0") ? json_vector(j.at("x0"))
                                  : (Vector(2) << 0.0, 3.0).finished();
    x_lo = (Vector(2) << -1.0, -kInfinity).finished();
    x_hi = (Vector(2) << 1.0, kInfinity).finished();
    u_lo = Vector::Constant(1, -kInfinity);
    u_hi = Vector::Constant(1, 0.5);
    cfg.spec.Q = Matrix::Identity(2, 2);
    cfg.spec.R = Matrix::Constant(1, 1, 2.0);
  } else {
    const json j = root.value("platoon", json::object());
    cfg.platoon.vehicles = get_or(j, "vehicles", 4);
    cfg.platoon.dt = get_or(j, "dt", 0.7);
    cfg.platoon.y_ss = get_or(j, "y_ss", 30.0);
    cfg.platoon.y_min = get_or(j, "y_min", 10.0);
    cfg.platoon.accel_max = get_or(j, "accel_max", 2.5);
    cfg.platoon.brake_max = get_or(j, "brake_max", -5.0);
    cfg.platoon_instances = get_or(j, "instances", 3);
    PlatoonModel model = platoon_build(cfg.platoon);
    cfg.spec.system = model.system;
    x_lo = model.x_lo;
    x_hi = model.x_hi;
    u_lo = model.u_lo;
    u_hi = model.u_hi;
    cfg.spec.Q = Matrix::Identity(model.system.n(), model.system.n());
    cfg.spec.R = 2.0 * Matrix::Identity(model.system.m(), model.system.m());
  }

  const json mpc = root.value("mpc", json::object());
  cfg.spec.N = get_or(mpc, "N", cfg.experiment == "msd" ? 6 : 15);
  if (mpc.contains("Q")) cfg.spec.Q = json_matrix(mpc.at("Q"));
  if (mpc.contains("R")) cfg.spec.R = json_matrix(mpc.at("R"));
  cfg.spec.x_lo = mpc.contains("x_lo") ? json_vector(mpc.at("x_lo")) : x_lo;
  cfg.spec.x_hi = mpc.contains("x_hi") ? json_vector(mpc.at("x_hi")) : x_hi;
  cfg.spec.u_lo = mpc.contains("u_lo") ? json_vector(mpc.at("u_lo")) : u_lo;
  cfg.spec.u_hi = mpc.contains("u_hi") ? json_vector(mpc.at("u_hi")) : u_hi;
  cfg.spec.ku = get_or(mpc, "ku", 100.0);
  cfg.spec.kx = get_or(mpc, "kx", 100.0);
  const std::string form = get_or<std::string>(mpc, "form", "prestabilized");
  if (form == "standard")
    cfg.spec.form = MpcForm::kStandard;
  else if (form == "prestabilized")
    cfg.spec.form = MpcForm::kPrestabilized;
  else
    throw ConfigError("mpc.form must be \"standard\" or \"prestabilized\"");
  try {
    cfg.spec.install_terminal_cost();
    cfg.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid MPC configuration: ") + e.what());
  }

  const json expert = root.value("expert", json::object());
  cfg.expert_steps = get_or(expert, "steps", cfg.experiment == "msd" ? 50 : 29);
  cfg.match_tol = get_or(expert, "match_tol", 1e-8);
  cfg.horizon_cap = get_or(expert, "horizon_cap", 256);

  const json tr = root.value("train", json::object());
  for (const auto& name :
       get_or(tr, "learnable", std::vector<std::string>{}))
    cfg.train.learnable.push_back(parse_learnable(name));
  cfg.train.diagonal_q = get_or(tr, "diagonal_q", cfg.experiment == "platoon");
  cfg.train.diagonal_r = get_or(tr, "diagonal_r", cfg.experiment == "platoon");
  cfg.train.beta = get_or(tr, "beta", 0.0);
  cfg.train.iterations = get_or(tr, "iterations", 300);
  cfg.train.lr = get_or(tr, "lr", 1e-3);
  cfg.init_perturbation = get_or(tr, "init_perturbation", 0.5);
  cfg.cost_init_max = get_or(tr, "cost_init_max", 3.0);

  const json hz = root.value("horizon", json::object());
  cfg.horizon.box_lo = hz.contains("box_lo")
                           ? json_vector(hz.at("box_lo"))
                           : Vector(-0.5 * Vector::Ones(cfg.spec.system.n()));
  cfg.horizon.box_hi = hz.contains("box_hi")
                           ? json_vector(hz.at("box_hi"))
                           : Vector(0.5 * Vector::Ones(cfg.spec.system.n()));
  cfg.horizon.epsilon = get_or(hz, "epsilon", 1e-6);
  cfg.horizon.samples = get_or(hz, "samples", 500);
  cfg.horizon.shrink = get_or(hz, "shrink", 0.5);
  cfg.horizon.max_shrinks = get_or(hz, "max_shrinks", 40);
  return cfg;
}

// ---------------------------------------------------------------------------
// Output plumbing

struct OutputDir {
  fs::path dir;
  bool force = false;

  void prepare() const {
    fs::create_directories(dir);
  }
  fs::path path(const std::string& name) const {
    fs::path p = dir / name;
    if (!force && fs::exists(p))
      throw ConfigError("refusing to overwrite " + p.string() +
                        " (use --force)");
    return p;
  }
  void write_text(const std::string& name, const std::string& text) const {
    std::ofstream os(path(name));
    os << text;
  }
};

void write_manifest(const OutputDir& out, const json& manifest) {
  out.write_text("manifest.json", manifest.dump(2) + "\n");
}

Matrix states_series(const Trajectory& traj) {
  const Eigen::Index n = traj.states.front().size();
  Matrix series(static_cast<Eigen::Index>(traj.states.size()), n);
  for (size_t i = 0; i < traj.states.size(); ++i)
    series.row(static_cast<Eigen::Index>(i)) = traj.states[i].transpose();
  return series;
}

void write_trajectory_outputs(const OutputDir& out, const std::string& stem,
                              const Trajectory& traj) {
  std::ofstream csv(out.path(stem + ".csv"));
  write_trajectory_csv(csv, traj);
  std::ofstream svg(out.path(stem + ".svg"));
  write_svg_chart(svg, states_series(traj), stem + " states", traj.dt);
}

std::vector<Vector> initial_conditions(const Config& cfg, std::uint64_t seed) {
  if (cfg.experiment == "msd") return {cfg.msd_x0};
  return sample_initial_conditions(cfg.platoon, cfg.platoon_instances, seed);
}

// ---------------------------------------------------------------------------
// Verbs

int run_gen_expert(const Config& cfg, const OutputDir& out,
                   std::uint64_t seed) {
  out.prepare();
  json manifest;
  manifest["verb"] = "gen-expert";
  manifest["experiment"] = cfg.experiment;
  manifest["seed"] = seed;
  std::vector<Vector> ics = initial_conditions(cfg, seed);
  int horizon = 0;
  double deviation = 0.0;
  for (size_t i = 0; i < ics.size(); ++i) {
    ExpertResult res = generate_expert(cfg.spec, ics[i], cfg.expert_steps,
                                       cfg.match_tol, cfg.horizon_cap);
    horizon = std::max(horizon, res.horizon);
    deviation = std::max(deviation, res.max_deviation);
    write_trajectory_outputs(out, "expert_" + std::to_string(i),
                             res.trajectory);
  }
  manifest["instances"] = ics.size();
  manifest["horizon"] = horizon;
  manifest["max_prediction_deviation"] = deviation;
  write_manifest(out, manifest);
  std::cout << "expert horizon " << horizon << ", max prediction deviation "
            << deviation << ", " << ics.size() << " trajectories in "
            << out.dir << "\n";
  return 0;
}

int run_train(const Config& cfg, const OutputDir& out, std::uint64_t seed) {
  if (cfg.train.learnable.empty())
    throw ConfigError("train.learnable must name at least one parameter");
  out.prepare();

  std::vector<Vector> ics = initial_conditions(cfg, seed);
  std::vector<Trajectory> batch;
  for (const Vector& x0 : ics)
    batch.push_back(generate_expert(cfg.spec, x0, cfg.expert_steps,
                                    cfg.match_tol, cfg.horizon_cap)
                        .trajectory);

  // Initialize the learned parameters away from the truth, as a learner
  // without access to them would start.
  MpcSpec learner = cfg.spec;
  std::mt19937_64 gen(seed ^ 0x9e3779b97f4a7c15ull);
  auto uniform = [&](double lo, double hi) {
    return lo + (static_cast<double>(gen() >> 11) * 0x1.0p-53) * (hi - lo);
  };
  for (Learnable l : cfg.train.learnable) {
    switch (l) {
      case Learnable::kA:
        for (Eigen::Index i = 0; i < learner.system.A.rows(); ++i)
          for (Eigen::Index j = 0; j < learner.system.A.cols(); ++j)
            learner.system.A(i, j) +=
                uniform(-cfg.init_perturbation, cfg.init_perturbation);
        break;
      case Learnable::kB:
        for (Eigen::Index i = 0; i < learner.system.B.rows(); ++i)
          for (Eigen::Index j = 0; j < learner.system.B.cols(); ++j)
            learner.system.B(i, j) +=
                uniform(-cfg.init_perturbation, cfg.init_perturbation);
        break;
      case Learnable::kQ:
        learner.Q.setZero();
        for (Eigen::Index i = 0; i < learner.Q.rows(); ++i)
          learner.Q(i, i) = uniform(0.0, cfg.cost_init_max);
        break;
      case Learnable::kR:
        learner.R.setZero();
        for (Eigen::Index i = 0; i < learner.R.rows(); ++i)
          learner.R(i, i) = uniform(0.0, cfg.cost_init_max);
        break;
      default:
        break;  // bounds and penalty weights start at the configured values
    }
  }
  learner.install_terminal_cost();

  TrainResult res = train(cfg.train, batch, learner, cfg.spec);

  {
    std::ofstream os(out.path("train_record.csv"));
    write_train_record_csv(os, res.record);
  }
  {
    std::ofstream os(out.path("learned_params.csv"));
    os << "# A\n" << matrix_to_csv(res.spec.system.A);
    os << "# B\n" << matrix_to_csv(res.spec.system.B);
    os << "# Q\n" << matrix_to_csv(res.spec.Q);
    os << "# R\n" << matrix_to_csv(res.spec.R);
  }
  if (!res.record.imitation_loss.empty()) {
    Matrix series(static_cast<Eigen::Index>(res.record.imitation_loss.size()),
                  2);
    for (size_t i = 0; i < res.record.imitation_loss.size(); ++i) {
      series(static_cast<Eigen::Index>(i), 0) = res.record.imitation_loss[i];
      series(static_cast<Eigen::Index>(i), 1) = res.record.reference_loss[i];
    }
    std::ofstream svg(out.path("loss.svg"));
    write_svg_chart(svg, series, "imitation / reference loss", 1.0,
                    /*log_y=*/true);
  }

  json manifest;
  manifest["verb"] = "train";
  manifest["experiment"] = cfg.experiment;
  manifest["seed"] = seed;
  manifest["iterations"] = res.record.imitation_loss.size();
  manifest["aborted"] = res.record.aborted;
  if (res.record.aborted) manifest["abort_reason"] = res.record.abort_reason;
  if (!res.record.imitation_loss.empty()) {
    manifest["first_loss"] = res.record.imitation_loss.front();
    manifest["last_loss"] = res.record.imitation_loss.back();
  }
  write_manifest(out, manifest);

  if (res.record.aborted) {
    std::cerr << "training aborted at iteration " << res.record.abort_iteration
              << ": " << res.record.abort_reason << "\n";
    return 3;
  }
  std::cout << "trained " << res.record.imitation_loss.size()
            << " iterations, loss " << res.record.imitation_loss.front()
            << " -> " << res.record.imitation_loss.back() << ", outputs in "
            << out.dir << "\n";
  return 0;
}

MpcSpec spec_with_learned_params(const Config& cfg,
                                 const std::string& params_file) {
  MpcSpec spec = cfg.spec;
  std::ifstream in(params_file);
  if (!in) throw ConfigError("cannot open params file: " + params_file);
  std::string line;
  std::string section;
  std::string body;
  auto flush = [&]() {
    if (section.empty()) return;
    Matrix m = matrix_from_csv(body);
    if (section == "A")
      spec.system.A = m;
    else if (section == "B")
      spec.system.B = m;
    else if (section == "Q")
      spec.Q = m;
    else if (section == "R")
      spec.R = m;
    body.clear();
  };
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) {
      flush();
      section = line.substr(2);
    } else {
      body += line + "\n";
    }
  }
  flush();
  spec.install_terminal_cost();
  return spec;
}

int run_simulate(const Config& cfg, const OutputDir& out, std::uint64_t seed,
                 const std::string& params_file) {
  out.prepare();
  MpcSpec spec =
      params_file.empty() ? cfg.spec : spec_with_learned_params(cfg, params_file);
  std::vector<Vector> ics = initial_conditions(cfg, seed);
  for (size_t i = 0; i < ics.size(); ++i) {
    Trajectory traj = simulate_closed_loop(spec, ics[i], cfg.expert_steps);
    write_trajectory_outputs(out, "closed_loop_" + std::to_string(i), traj);
  }
  json manifest;
  manifest["verb"] = "simulate";
  manifest["experiment"] = cfg.experiment;
  manifest["seed"] = seed;
  manifest["instances"] = ics.size();
  manifest["params_file"] = params_file;
  write_manifest(out, manifest);
  std::cout << ics.size() << " closed-loop runs of " << cfg.expert_steps
            << " steps in " << out.dir << "\n";
  return 0;
}

int run_verify_horizon(const Config& cfg, const OutputDir& out,
                       std::uint64_t seed) {
  out.prepare();
  HorizonQuery query = cfg.horizon;
  query.seed = seed;
  HorizonResult res = verify_reduce(cfg.spec, query);
  {
    std::ofstream os(out.path("horizon_log.csv"));
    os << "candidate,box_scale,violations,max_tail_delta,accepted\n";
    for (const HorizonCandidate& e : res.log)
      os << e.candidate << "," << e.box_scale << "," << e.violations << ","
         << e.max_tail_delta << "," << e.accepted << "\n";
  }
  json manifest;
  manifest["verb"] = "verify-horizon";
  manifest["seed"] = seed;
  manifest["accepted"] = res.accepted;
  manifest["horizon"] = res.accepted ? res.horizon : 0;
  manifest["suggested_horizon"] = res.suggested_horizon;
  write_manifest(out, manifest);
  if (!res.accepted) {
    std::cerr << "verification failed; suggested horizon "
              << res.suggested_horizon << "\n";
    return 3;
  }
  std::cout << "accepted horizon " << res.horizon << " (configured "
            << cfg.spec.N << "), log in " << out.dir << "\n";
  return 0;
}

int run_gradcheck(const Config& cfg, const OutputDir& out,
                  std::uint64_t seed) {
  out.prepare();
  const MpcSpec& spec = cfg.spec;
  const double h = 1e-6;

  // Riccati-solution gradient of sum(P) against a re-solved finite
  // difference, direction by direction.
  double worst_dare = 0.0;
  {
    DareSolution sol =
        solve_dare(spec.system.A, spec.system.B, spec.Q, spec.R);
    DareJacobians jac =
        dare_jacobians(sol, spec.system.A, spec.system.B, spec.Q, spec.R);
    const Eigen::Index n = spec.system.n();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        Matrix up = spec.system.A, dn = spec.system.A;
        up(i, j) += h;
        dn(i, j) -= h;
        const double fd = (solve_dare(up, spec.system.B, spec.Q, spec.R).P -
                           solve_dare(dn, spec.system.B, spec.Q, spec.R).P)
                              .sum() /
                          (2 * h);
        const double an =
            (Vector::Ones(n * n).transpose() * jac.dP_dA)(i + j * n);
        worst_dare = std::max(
            worst_dare, std::abs(an - fd) / std::max({1.0, std::abs(fd)}));
      }
  }

  // End-to-end imitation-loss gradient for the first learnable parameter
  // entry on a short expert batch.
  double worst_loss = 0.0;
  {
    std::vector<Vector> ics = initial_conditions(cfg, seed);
    Trajectory traj =
        simulate_closed_loop(spec, ics.front(), std::min(cfg.expert_steps, 15));
    std::vector<Trajectory> batch{traj};
    std::vector<Sample> samples = make_samples(batch, spec.N);
    auto loss_at = [&](const MpcSpec& s) {
      Tape tape;
      MpcParamNodes p = record_params(tape, s, /*use_dare=*/true);
      return tape.value(
          imitation_loss(tape, p, s.N, samples, cfg.train.beta))(0, 0);
    };
    Tape tape;
    MpcParamNodes p = record_params(tape, spec, /*use_dare=*/true);
    NodeRef loss = imitation_loss(tape, p, spec.N, samples, cfg.train.beta);
    tape.backward(loss, Matrix::Ones(1, 1));
    const Matrix grad_a = tape.adjoint(p.A);

    MpcSpec up = spec, dn = spec;
    up.system.A(0, 0) += h;
    dn.system.A(0, 0) -= h;
    up.install_terminal_cost();
    dn.install_terminal_cost();
    const double fd = (loss_at(up) - loss_at(dn)) / (2 * h);
    worst_loss =
        std::abs(grad_a(0, 0) - fd) / std::max({1.0, std::abs(fd)});
  }

  json manifest;
  manifest["verb"] = "gradcheck";
  manifest["seed"] = seed;
  manifest["dare_max_rel_err"] = worst_dare;
  manifest["loss_rel_err"] = worst_loss;
  write_manifest(out, manifest);
  std::cout << "riccati gradient max rel err " << worst_dare
            << ", imitation-loss gradient rel err " << worst_loss << "\n";
  if (worst_dare > 1e-6 || worst_loss > 1e-4) {
    std::cerr << "gradient audit failed\n";
    return 4;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentiable infinite-horizon linear-quadratic MPC"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string params_file;
  std::uint64_t seed = 0;
  bool force = false;
  app.add_option("--config", config_path, "JSON configuration file")
      ->required();
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "RNG seed for sampling and initialization");
  app.add_flag("--force", force, "overwrite existing output files");

  CLI::App* gen = app.add_subcommand("gen-expert",
                                     "generate expert demonstrations");
  CLI::App* tr = app.add_subcommand("train", "learn MPC parameters");
  CLI::App* sim = app.add_subcommand("simulate", "closed-loop simulation");
  sim->add_option("--params", params_file,
                  "learned_params.csv from a training run");
  CLI::App* ver = app.add_subcommand("verify-horizon",
                                     "verify and reduce the horizon");
  CLI::App* grad = app.add_subcommand("gradcheck",
                                      "finite-difference gradient audit");
  for (CLI::App* sub : {gen, tr, sim, ver, grad}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg = load_config(config_path);
    OutputDir out{fs::path(out_dir), force};
    if (gen->parsed()) return run_gen_expert(cfg, out, seed);
    if (tr->parsed()) return run_train(cfg, out, seed);
    if (sim->parsed()) return run_simulate(cfg, out, seed, params_file);
    if (ver->parsed()) return run_verify_horizon(cfg, out, seed);
    if (grad->parsed()) return run_gradcheck(cfg, out, seed);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
