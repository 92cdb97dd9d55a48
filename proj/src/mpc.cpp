#include "lqmpc/mpc.hpp"

#include <cmath>

namespace lqmpc {

void MpcSpec::validate() const {
  const Eigen::Index n = system.n();
  const Eigen::Index m = system.m();
  if (system.A.cols() != n || system.B.rows() != n)
    throw std::invalid_argument("MpcSpec: system dimension mismatch");
  if (Q.rows() != n || Q.cols() != n || R.rows() != m || R.cols() != m)
    throw std::invalid_argument("MpcSpec: cost dimension mismatch");
  if (QN.rows() != n || QN.cols() != n)
    throw std::invalid_argument("MpcSpec: terminal cost dimension mismatch");
  if (x_lo.size() != n || x_hi.size() != n || u_lo.size() != m ||
      u_hi.size() != m)
    throw std::invalid_argument("MpcSpec: bound dimension mismatch");
  if (N < 1) throw std::invalid_argument("MpcSpec: horizon must be >= 1");
  for (Eigen::Index i = 0; i < m; ++i)
    if (u_lo(i) > 0.0 || u_hi(i) < 0.0)
      throw std::invalid_argument("MpcSpec: input bounds must straddle zero");
  for (Eigen::Index i = 0; i < n; ++i)
    if (x_lo(i) > x_hi(i))
      throw std::invalid_argument("MpcSpec: x_lo > x_hi");
  if (ku <= 0.0 || kx <= 0.0)
    throw std::invalid_argument("MpcSpec: penalty weights must be positive");
  if (form == MpcForm::kPrestabilized) {
    if (!K.has_value())
      throw std::invalid_argument("MpcSpec: pre-stabilized form requires K");
    if (K->rows() != m || K->cols() != n)
      throw std::invalid_argument("MpcSpec: K dimension mismatch");
    if (!(spectral_radius(system.A + system.B * (*K)) < 1.0))
      throw std::invalid_argument("MpcSpec: K is not stabilizing");
  }
}

void MpcSpec::install_terminal_cost() {
  const DareSolution sol = solve_dare(system.A, system.B, Q, R);
  QN = sol.P;
  K = sol.K;
}

MpcParamNodes record_params(Tape& tape, const MpcSpec& spec, bool use_dare) {
  MpcParamNodes p;
  p.A = tape.input(spec.system.A);
  p.B = tape.input(spec.system.B);
  p.Q = tape.input(spec.Q);
  p.R = tape.input(spec.R);
  if (use_dare) {
    auto [pn, kn] = dare_custom_node(tape, p.A, p.B, p.Q, p.R);
    p.QN = pn;
    p.K = kn;
  } else {
    p.QN = tape.input(spec.QN);
    p.K = tape.input(spec.K.value_or(
        Matrix::Zero(spec.system.m(), spec.system.n())));
  }
  p.x_lo = tape.input(spec.x_lo);
  p.x_hi = tape.input(spec.x_hi);
  p.u_lo = tape.input(spec.u_lo);
  p.u_hi = tape.input(spec.u_hi);
  p.ku = tape.input(Matrix::Constant(1, 1, spec.ku));
  p.kx = tape.input(Matrix::Constant(1, 1, spec.kx));
  return p;
}

namespace {

// L * X * R with constant selectors: places X at (row, col) inside a
// rows x cols zero matrix, as a tape expression.
NodeRef place_block(Tape& t, NodeRef x, Eigen::Index row, Eigen::Index col,
                    Eigen::Index rows, Eigen::Index cols) {
  const Matrix& xv = t.value(x);
  Matrix l = Matrix::Zero(rows, xv.rows());
  l.block(row, 0, xv.rows(), xv.rows()).setIdentity();
  Matrix r = Matrix::Zero(xv.cols(), cols);
  r.block(0, col, xv.cols(), xv.cols()).setIdentity();
  return t.matmul(t.matmul(t.constant(l), x), t.constant(r));
}

NodeRef add_all(Tape& t, const std::vector<NodeRef>& terms) {
  NodeRef acc = terms.front();
  for (size_t k = 1; k < terms.size(); ++k) acc = t.add(acc, terms[k]);
  return acc;
}

// blkdiag(x, ..., x) with `count` copies.
NodeRef block_diag_repeat(Tape& t, NodeRef x, int count) {
  const Eigen::Index p = t.value(x).rows();
  const Eigen::Index q = t.value(x).cols();
  std::vector<NodeRef> terms;
  for (int k = 0; k < count; ++k)
    terms.push_back(place_block(t, x, k * p, k * q, count * p, count * q));
  return add_all(t, terms);
}

// Replicates a length-p column vector `count` times.
NodeRef stack_vector(Tape& t, NodeRef v, int count) {
  const Eigen::Index p = t.value(v).rows();
  Matrix sel(count * p, p);
  for (int k = 0; k < count; ++k)
    sel.middleRows(static_cast<Eigen::Index>(k) * p, p) =
        Matrix::Identity(p, p);
  return t.matmul(t.constant(sel), v);
}

struct PredictionNodes {
  NodeRef Phi;  // N n x n
  NodeRef Psi;  // N n x N m
};

// Phi = [F; F^2; ...; F^N], Psi lower block triangular of F^k B.
PredictionNodes prediction_matrices(Tape& t, NodeRef f, NodeRef b, int N) {
  const Eigen::Index n = t.value(f).rows();
  const Eigen::Index m = t.value(b).cols();
  std::vector<NodeRef> fpow;  // F^1 .. F^N
  fpow.push_back(f);
  for (int k = 1; k < N; ++k) fpow.push_back(t.matmul(fpow.back(), f));
  std::vector<NodeRef> fb;  // F^j B, j = 0..N-1
  fb.push_back(b);
  for (int j = 1; j < N; ++j) fb.push_back(t.matmul(f, fb.back()));

  PredictionNodes out;
  out.Phi = N == 1 ? fpow[0] : t.concat_rows(fpow);
  std::vector<NodeRef> rows;
  for (int i = 1; i <= N; ++i) {
    std::vector<NodeRef> cells;
    for (int j = i - 1; j >= 0; --j) cells.push_back(fb[static_cast<size_t>(j)]);
    if (N - i > 0)
      cells.push_back(t.constant(Matrix::Zero(n, (N - i) * m)));
    rows.push_back(cells.size() == 1 ? cells[0] : t.concat_cols(cells));
  }
  out.Psi = rows.size() == 1 ? rows[0] : t.concat_rows(rows);
  return out;
}

struct CommonBlocks {
  Eigen::Index n, m;
  Eigen::Index nu, nr, ns, d, c;
  NodeRef xt;
  NodeRef inf_u, ninf_u, zero_u;  // Nm x 1 constants
  NodeRef inf_x, ninf_x, zero_x;  // Nn x 1 constants
};

CommonBlocks common_blocks(Tape& t, const MpcParamNodes& p, int N,
                           const Vector& x_t) {
  CommonBlocks cb;
  cb.n = t.value(p.A).rows();
  cb.m = t.value(p.B).cols();
  cb.nu = N * cb.m;
  cb.nr = N * cb.m;
  cb.ns = N * cb.n;
  cb.d = cb.nu + cb.nr + cb.ns;
  cb.c = 3 * cb.nu + 3 * cb.ns;
  cb.xt = t.constant(x_t);
  cb.inf_u = t.constant(Matrix::Constant(cb.nu, 1, kInfinity));
  cb.ninf_u = t.constant(Matrix::Constant(cb.nu, 1, -kInfinity));
  cb.zero_u = t.constant(Matrix::Zero(cb.nu, 1));
  cb.inf_x = t.constant(Matrix::Constant(cb.ns, 1, kInfinity));
  cb.ninf_x = t.constant(Matrix::Constant(cb.ns, 1, -kInfinity));
  cb.zero_x = t.constant(Matrix::Zero(cb.ns, 1));
  return cb;
}

// Shared tail of both assemblies: embeds the control-block Hessian, builds the
// penalty-augmented linear term and the six-block constraint stack.
CondensedQpNodes finish_assembly(Tape& t, const MpcParamNodes& p, int N,
                                 const CommonBlocks& cb, NodeRef huu,
                                 NodeRef qu, const PredictionNodes& pred,
                                 NodeRef input_row, NodeRef u_shift) {
  CondensedQpNodes out;
  out.n = cb.n;
  out.m = cb.m;
  out.N = N;

  NodeRef h_embedded = place_block(t, huu, 0, 0, cb.d, cb.d);
  out.H = t.scalar_mul(0.5, t.add(h_embedded, t.transpose(h_embedded)));

  NodeRef ku_vec = t.matmul(t.constant(Matrix::Ones(cb.nu, 1)), p.ku);
  NodeRef kx_vec = t.matmul(t.constant(Matrix::Ones(cb.ns, 1)), p.kx);
  out.q = t.concat_rows({qu, ku_vec, kx_vec});

  NodeRef eye_u = t.constant(Matrix::Identity(cb.nu, cb.nu));
  NodeRef neye_u = t.constant(-Matrix::Identity(cb.nu, cb.nu));
  NodeRef eye_x = t.constant(Matrix::Identity(cb.ns, cb.ns));
  NodeRef neye_x = t.constant(-Matrix::Identity(cb.ns, cb.ns));
  NodeRef z_uu = t.constant(Matrix::Zero(cb.nu, cb.nu));
  NodeRef z_ux = t.constant(Matrix::Zero(cb.nu, cb.ns));
  NodeRef z_xu = t.constant(Matrix::Zero(cb.ns, cb.nu));

  out.M = t.concat_rows({
      t.concat_cols({input_row, eye_u, z_ux}),
      t.concat_cols({input_row, neye_u, z_ux}),
      t.concat_cols({z_uu, eye_u, z_ux}),
      t.concat_cols({pred.Psi, z_xu, eye_x}),
      t.concat_cols({pred.Psi, z_xu, neye_x}),
      t.concat_cols({z_xu, z_xu, eye_x}),
  });

  NodeRef phi_x = t.matmul(pred.Phi, cb.xt);
  NodeRef u_lo_vec = t.sub(stack_vector(t, p.u_lo, N), u_shift);
  NodeRef u_hi_vec = t.sub(stack_vector(t, p.u_hi, N), u_shift);
  NodeRef x_lo_vec = t.sub(stack_vector(t, p.x_lo, N), phi_x);
  NodeRef x_hi_vec = t.sub(stack_vector(t, p.x_hi, N), phi_x);

  out.lb = t.concat_rows(
      {u_lo_vec, cb.ninf_u, cb.zero_u, x_lo_vec, cb.ninf_x, cb.zero_x});
  out.ub = t.concat_rows(
      {cb.inf_u, u_hi_vec, cb.inf_u, cb.inf_x, x_hi_vec, cb.inf_x});

  out.input_map = input_row;
  out.input_shift = u_shift;
  out.Phi = t.value(pred.Phi);
  out.Psi = t.value(pred.Psi);
  return out;
}

}  // namespace

CondensedQpNodes assemble_standard(Tape& t, const MpcParamNodes& p, int N,
                                   const Vector& x_t) {
  CommonBlocks cb = common_blocks(t, p, N, x_t);
  PredictionNodes pred = prediction_matrices(t, p.A, p.B, N);

  NodeRef r_big = block_diag_repeat(t, p.R, N);
  std::vector<NodeRef> q_terms;
  for (int k = 0; k + 1 < N; ++k)
    q_terms.push_back(
        place_block(t, p.Q, k * cb.n, k * cb.n, cb.ns, cb.ns));
  q_terms.push_back(
      place_block(t, p.QN, (N - 1) * cb.n, (N - 1) * cb.n, cb.ns, cb.ns));
  NodeRef q_big = add_all(t, q_terms);

  NodeRef psi_t = t.transpose(pred.Psi);
  NodeRef huu = t.add(r_big, t.matmul(psi_t, t.matmul(q_big, pred.Psi)));
  NodeRef qu = t.matmul(psi_t, t.matmul(q_big, t.matmul(pred.Phi, cb.xt)));

  NodeRef eye_u = t.constant(Matrix::Identity(cb.nu, cb.nu));
  NodeRef zero_shift = t.constant(Matrix::Zero(cb.nu, 1));
  return finish_assembly(t, p, N, cb, huu, qu, pred, eye_u, zero_shift);
}

CondensedQpNodes assemble_prestabilized(Tape& t, const MpcParamNodes& p, int N,
                                        const Vector& x_t) {
  CommonBlocks cb = common_blocks(t, p, N, x_t);
  NodeRef acl = t.add(p.A, t.matmul(p.B, p.K));
  PredictionNodes pred = prediction_matrices(t, acl, p.B, N);

  const Eigen::Index np1n = (N + 1) * cb.n;
  NodeRef phi_hat =
      t.concat_rows({t.constant(Matrix::Identity(cb.n, cb.n)), pred.Phi});
  NodeRef psi_hat =
      t.concat_rows({t.constant(Matrix::Zero(cb.n, cb.nu)), pred.Psi});

  // Block diagonal of K with a trailing zero column block.
  std::vector<NodeRef> k_terms;
  for (int k = 0; k < N; ++k)
    k_terms.push_back(place_block(t, p.K, k * cb.m, k * cb.n, cb.nu, np1n));
  NodeRef k_big = add_all(t, k_terms);

  NodeRef eye_u = t.constant(Matrix::Identity(cb.nu, cb.nu));
  NodeRef s = t.add(t.matmul(k_big, psi_hat), eye_u);

  NodeRef r_big = block_diag_repeat(t, p.R, N);
  std::vector<NodeRef> q_terms;
  for (int k = 1; k < N; ++k)
    q_terms.push_back(place_block(t, p.Q, k * cb.n, k * cb.n, np1n, np1n));
  q_terms.push_back(place_block(t, p.QN, N * cb.n, N * cb.n, np1n, np1n));
  NodeRef q_hat = add_all(t, q_terms);

  NodeRef st = t.transpose(s);
  NodeRef huu = t.add(t.matmul(st, t.matmul(r_big, s)),
                      t.matmul(t.transpose(psi_hat),
                               t.matmul(q_hat, psi_hat)));

  NodeRef t1 = t.matmul(t.transpose(k_big), t.matmul(r_big, s));
  NodeRef t2 = t.matmul(q_hat, psi_hat);
  NodeRef qu =
      t.matmul(t.transpose(t.add(t1, t2)), t.matmul(phi_hat, cb.xt));

  NodeRef k_phi_x = t.matmul(k_big, t.matmul(phi_hat, cb.xt));
  return finish_assembly(t, p, N, cb, huu, qu, pred, s, k_phi_x);
}

CondensedQp assemble(const MpcSpec& spec, const Vector& x_t) {
  spec.validate();
  Tape tape;
  MpcParamNodes p = record_params(tape, spec, /*use_dare=*/false);
  CondensedQpNodes nodes =
      spec.form == MpcForm::kStandard
          ? assemble_standard(tape, p, spec.N, x_t)
          : assemble_prestabilized(tape, p, spec.N, x_t);
  CondensedQp out;
  out.problem.H = tape.value(nodes.H);
  out.problem.q = tape.value(nodes.q);
  out.problem.M = tape.value(nodes.M);
  out.problem.lb = tape.value(nodes.lb);
  out.problem.ub = tape.value(nodes.ub);
  out.input_map = tape.value(nodes.input_map);
  out.input_shift = tape.value(nodes.input_shift);
  out.Phi = nodes.Phi;
  out.Psi = nodes.Psi;
  out.n = nodes.n;
  out.m = nodes.m;
  out.N = nodes.N;
  return out;
}

MpcStep mpc_step(const MpcSpec& spec, const Vector& x_t,
                 const QpSettings& settings) {
  CondensedQp qp = assemble(spec, x_t);
  MpcStep step;
  step.qp = qp_solve(qp.problem, settings);
  if (step.qp.status != QpStatus::kSolved)
    throw std::runtime_error("mpc_step: QP solve failed");
  const Eigen::Index nu = static_cast<Eigen::Index>(spec.N) * qp.m;
  const Eigen::Index ns = static_cast<Eigen::Index>(spec.N) * qp.n;
  const Vector zu = step.qp.z.head(nu);
  const Vector u_full = qp.input_map * zu + qp.input_shift;
  step.delta_u = unvec(zu, qp.m, spec.N);
  step.u_hat = unvec(u_full, qp.m, spec.N);
  step.u = step.u_hat.col(0);
  step.max_slack_r = step.qp.z.segment(nu, nu).maxCoeff();
  step.max_slack_s = step.qp.z.tail(ns).maxCoeff();

  step.x_hat.resize(qp.n, spec.N + 1);
  step.x_hat.col(0) = x_t;
  for (int k = 0; k < spec.N; ++k)
    step.x_hat.col(k + 1) = spec.system.A * step.x_hat.col(k) +
                            spec.system.B * step.u_hat.col(k);
  return step;
}

Trajectory simulate_closed_loop(const MpcSpec& spec, const Vector& x0, int T,
                                const QpSettings& settings) {
  Trajectory traj;
  traj.dt = spec.system.dt;
  Vector x = x0;
  traj.states.push_back(x);
  for (int t = 0; t < T; ++t) {
    MpcStep step;
    try {
      step = mpc_step(spec, x, settings);
    } catch (const std::exception& e) {
      throw std::runtime_error("simulate_closed_loop: failure at step " +
                               std::to_string(t) + ": " + e.what());
    }
    traj.controls.push_back(step.u);
    traj.predicted_controls.push_back(step.u_hat);
    traj.predicted_states.push_back(step.x_hat);
    x = spec.system.A * x + spec.system.B * step.u;
    traj.states.push_back(x);
  }
  return traj;
}

namespace {

// Worst gap between open-loop predictions and the ensuing closed loop.
double prediction_deviation(const Trajectory& traj) {
  double worst = 0.0;
  const int T = traj.steps();
  for (int t = 0; t < T; ++t) {
    const Matrix& pred = traj.predicted_states[static_cast<size_t>(t)];
    const int N = static_cast<int>(pred.cols()) - 1;
    for (int k = 1; k <= N && t + k <= T; ++k) {
      const double dev =
          (pred.col(k) - traj.states[static_cast<size_t>(t + k)])
              .cwiseAbs()
              .maxCoeff();
      worst = std::max(worst, dev);
    }
  }
  return worst;
}

}  // namespace

ExpertResult generate_expert(MpcSpec spec, const Vector& x0, int T,
                             double match_tol, int horizon_cap,
                             const QpSettings& settings) {
  spec.install_terminal_cost();
  auto run = [&](int N) {
    spec.N = N;
    Trajectory traj = simulate_closed_loop(spec, x0, T, settings);
    return std::make_pair(prediction_deviation(traj), std::move(traj));
  };

  int hi = 2;
  auto [dev, traj] = run(hi);
  double best_dev = dev;
  while (dev > match_tol) {
    hi *= 2;
    if (hi > horizon_cap)
      throw std::runtime_error(
          "generate_expert: horizon cap exceeded (best deviation " +
          std::to_string(best_dev) + ")");
    std::tie(dev, traj) = run(hi);
    best_dev = std::min(best_dev, dev);
  }
  // Binary search for the minimal matching horizon in (lo, hi].
  int lo = hi == 2 ? 0 : hi / 2;  // lo is known-failing (0 = sentinel)
  Trajectory accepted = std::move(traj);
  double accepted_dev = dev;
  int accepted_n = hi;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (mid < 1) break;
    auto [mdev, mtraj] = run(mid);
    if (mdev <= match_tol) {
      hi = mid;
      accepted = std::move(mtraj);
      accepted_dev = mdev;
      accepted_n = mid;
    } else {
      lo = mid;
    }
  }
  return ExpertResult{std::move(accepted), accepted_n, accepted_dev};
}

}  // namespace lqmpc
