#include "lqmpc/learn.hpp"

#include <cmath>

namespace lqmpc {

std::vector<Sample> make_samples(const std::vector<Trajectory>& batch, int N) {
  std::vector<Sample> out;
  for (const Trajectory& traj : batch) {
    // Windows that would overrun the recorded controls are dropped.
    for (int t = 0; t + N <= traj.steps(); ++t)
      out.push_back(Sample{&traj, t});
  }
  return out;
}

namespace {

NodeRef sample_loss(Tape& tape, const MpcParamNodes& params, int N,
                    const Sample& s, double beta, const QpSettings& qp) {
  const Trajectory& traj = *s.trajectory;
  const Vector& x_t = traj.states[static_cast<size_t>(s.t)];
  CondensedQpNodes nodes = assemble_prestabilized(tape, params, N, x_t);
  NodeRef z = qp_custom_node(tape, nodes.H, nodes.q, nodes.M, nodes.lb,
                             nodes.ub, qp);

  const Eigen::Index nu = static_cast<Eigen::Index>(N) * nodes.m;
  const Eigen::Index d = tape.value(z).rows();
  Matrix sel = Matrix::Zero(nu, d);
  sel.leftCols(nu).setIdentity();
  NodeRef zu = tape.matmul(tape.constant(sel), z);
  NodeRef u_hat =
      tape.add(tape.matmul(nodes.input_map, zu), nodes.input_shift);

  Vector target(nu);
  for (int k = 0; k < N; ++k)
    target.segment(static_cast<Eigen::Index>(k) * nodes.m, nodes.m) =
        traj.controls[static_cast<size_t>(s.t + k)];
  NodeRef diff = tape.sub(u_hat, tape.constant(target));
  NodeRef loss = tape.matmul(tape.transpose(diff), diff);

  if (beta > 0.0) {
    NodeRef w = tape.sub(
        tape.add(tape.matmul(params.A, tape.constant(x_t)),
                 tape.matmul(params.B,
                             tape.constant(
                                 traj.controls[static_cast<size_t>(s.t)]))),
        tape.constant(traj.states[static_cast<size_t>(s.t) + 1]));
    loss = tape.add(loss, tape.scalar_mul(beta, tape.matmul(tape.transpose(w), w)));
  }
  return loss;
}

}  // namespace

NodeRef imitation_loss(Tape& tape, const MpcParamNodes& params, int N,
                       const std::vector<Sample>& samples, double beta,
                       const QpSettings& qp) {
  if (samples.empty())
    throw std::invalid_argument("imitation_loss: no usable samples");
  NodeRef acc = sample_loss(tape, params, N, samples[0], beta, qp);
  for (size_t i = 1; i < samples.size(); ++i)
    acc = tape.add(acc, sample_loss(tape, params, N, samples[i], beta, qp));
  return tape.scalar_mul(1.0 / static_cast<double>(samples.size()), acc);
}

void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads,
               const std::vector<Matrix>& masks, AdamState& state,
               const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != masks.size())
    throw std::invalid_argument("adam_step: list size mismatch");
  if (state.m.empty()) {
    for (const Matrix& p : params) {
      state.m.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, state.t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, state.t);
  for (size_t i = 0; i < params.size(); ++i) {
    const Matrix g = grads[i].cwiseProduct(masks[i]);
    state.m[i] = cfg.adam_beta1 * state.m[i] + (1.0 - cfg.adam_beta1) * g;
    state.v[i] = cfg.adam_beta2 * state.v[i] +
                 (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
    const Matrix m_hat = state.m[i] / bc1;
    const Matrix v_hat = state.v[i] / bc2;
    params[i] -= cfg.lr * (m_hat.array() /
                           (v_hat.array().sqrt() + cfg.adam_eps))
                     .matrix();
  }
}

namespace {

bool has(const TrainConfig& cfg, Learnable which) {
  for (Learnable l : cfg.learnable)
    if (l == which) return true;
  return false;
}

Matrix project_psd(const Matrix& x, double floor_value, bool diagonal) {
  if (diagonal) {
    Matrix out = Matrix::Zero(x.rows(), x.cols());
    out.diagonal() = x.diagonal().cwiseMax(floor_value);
    return out;
  }
  const Matrix sym = 0.5 * (x + x.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  const Vector lam = es.eigenvalues().cwiseMax(floor_value);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

double reference_gap(const TrainConfig& cfg, const MpcSpec& spec,
                     const MpcSpec& ref) {
  double acc = 0.0;
  if (has(cfg, Learnable::kA)) acc += (spec.system.A - ref.system.A).squaredNorm();
  if (has(cfg, Learnable::kB)) acc += (spec.system.B - ref.system.B).squaredNorm();
  if (has(cfg, Learnable::kQ)) acc += (spec.Q - ref.Q).squaredNorm();
  if (has(cfg, Learnable::kR)) acc += (spec.R - ref.R).squaredNorm();
  if (has(cfg, Learnable::kBounds)) {
    acc += (spec.x_lo - ref.x_lo).squaredNorm() +
           (spec.x_hi - ref.x_hi).squaredNorm() +
           (spec.u_lo - ref.u_lo).squaredNorm() +
           (spec.u_hi - ref.u_hi).squaredNorm();
  }
  if (has(cfg, Learnable::kKu)) acc += std::pow(spec.ku - ref.ku, 2);
  if (has(cfg, Learnable::kKx)) acc += std::pow(spec.kx - ref.kx, 2);
  return acc;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<Trajectory>& batch,
                  const MpcSpec& init, const MpcSpec& reference) {
  TrainResult result;
  result.spec = init;
  MpcSpec& spec = result.spec;
  TrainRecord& rec = result.record;

  // Parameter list mirrors the learnable order; mask zero for fixed entries.
  struct Slot {
    Learnable which;
    Matrix* target;  // for matrix-valued entries
    double* scalar;  // for ku / kx
    Matrix mask;
  };
  std::vector<Slot> slots;
  auto add_matrix = [&](Learnable w, Matrix* tgt, Matrix mask) {
    slots.push_back(Slot{w, tgt, nullptr, std::move(mask)});
  };
  if (has(cfg, Learnable::kA))
    add_matrix(Learnable::kA, &spec.system.A,
               Matrix::Ones(spec.system.n(), spec.system.n()));
  if (has(cfg, Learnable::kB))
    add_matrix(Learnable::kB, &spec.system.B,
               Matrix::Ones(spec.system.n(), spec.system.m()));
  if (has(cfg, Learnable::kQ)) {
    Matrix mask = cfg.diagonal_q
                      ? Matrix(Matrix::Identity(spec.Q.rows(), spec.Q.cols()))
                      : Matrix(Matrix::Ones(spec.Q.rows(), spec.Q.cols()));
    add_matrix(Learnable::kQ, &spec.Q, std::move(mask));
  }
  if (has(cfg, Learnable::kR)) {
    Matrix mask = cfg.diagonal_r
                      ? Matrix(Matrix::Identity(spec.R.rows(), spec.R.cols()))
                      : Matrix(Matrix::Ones(spec.R.rows(), spec.R.cols()));
    add_matrix(Learnable::kR, &spec.R, std::move(mask));
  }
  if (has(cfg, Learnable::kBounds)) {
    add_matrix(Learnable::kBounds, nullptr, Matrix());  // handled specially
  }
  const bool learn_bounds = has(cfg, Learnable::kBounds);
  const bool learn_ku = has(cfg, Learnable::kKu);
  const bool learn_kx = has(cfg, Learnable::kKx);

  // Flatten the update set into plain matrices for Adam.
  auto collect_params = [&]() {
    std::vector<Matrix> ps;
    for (const Slot& s : slots) {
      if (s.which == Learnable::kBounds) {
        ps.push_back(spec.x_lo);
        ps.push_back(spec.x_hi);
        ps.push_back(spec.u_lo);
        ps.push_back(spec.u_hi);
      } else {
        ps.push_back(*s.target);
      }
    }
    if (learn_ku) ps.push_back(Matrix::Constant(1, 1, spec.ku));
    if (learn_kx) ps.push_back(Matrix::Constant(1, 1, spec.kx));
    return ps;
  };
  auto collect_masks = [&]() {
    std::vector<Matrix> ms;
    for (const Slot& s : slots) {
      if (s.which == Learnable::kBounds) {
        auto finite_mask = [](const Vector& v) {
          Matrix m(v.size(), 1);
          for (Eigen::Index i = 0; i < v.size(); ++i)
            m(i, 0) = is_free_bound(v(i)) ? 0.0 : 1.0;
          return m;
        };
        ms.push_back(finite_mask(spec.x_lo));
        ms.push_back(finite_mask(spec.x_hi));
        ms.push_back(finite_mask(spec.u_lo));
        ms.push_back(finite_mask(spec.u_hi));
      } else {
        ms.push_back(s.mask);
      }
    }
    if (learn_ku) ms.push_back(Matrix::Ones(1, 1));
    if (learn_kx) ms.push_back(Matrix::Ones(1, 1));
    return ms;
  };
  auto scatter_params = [&](const std::vector<Matrix>& ps) {
    size_t i = 0;
    for (const Slot& s : slots) {
      if (s.which == Learnable::kBounds) {
        spec.x_lo = ps[i++];
        spec.x_hi = ps[i++];
        spec.u_lo = ps[i++];
        spec.u_hi = ps[i++];
      } else {
        *s.target = ps[i++];
      }
    }
    if (learn_ku) spec.ku = ps[i++](0, 0);
    if (learn_kx) spec.kx = ps[i++](0, 0);
  };
  auto collect_grads = [&](const Tape& tape, const MpcParamNodes& pn) {
    std::vector<Matrix> gs;
    for (const Slot& s : slots) {
      switch (s.which) {
        case Learnable::kA: gs.push_back(tape.adjoint(pn.A)); break;
        case Learnable::kB: gs.push_back(tape.adjoint(pn.B)); break;
        case Learnable::kQ: gs.push_back(tape.adjoint(pn.Q)); break;
        case Learnable::kR: gs.push_back(tape.adjoint(pn.R)); break;
        case Learnable::kBounds:
          gs.push_back(tape.adjoint(pn.x_lo));
          gs.push_back(tape.adjoint(pn.x_hi));
          gs.push_back(tape.adjoint(pn.u_lo));
          gs.push_back(tape.adjoint(pn.u_hi));
          break;
        default: break;
      }
    }
    if (learn_ku) gs.push_back(tape.adjoint(pn.ku));
    if (learn_kx) gs.push_back(tape.adjoint(pn.kx));
    return gs;
  };

  AdamState state;
  const std::vector<Sample> samples = make_samples(batch, spec.N);
  if (samples.empty())
    throw std::invalid_argument("train: batch holds no usable windows");

  for (int it = 0; it < cfg.iterations; ++it) {
    double loss_sum = 0.0;
    int failures = 0;
    std::vector<Matrix> grad_sum;
    int usable = 0;

    for (const Sample& s : samples) {
      try {
        Tape tape;
        MpcParamNodes pn = record_params(tape, spec, /*use_dare=*/true);
        NodeRef loss = sample_loss(tape, pn, spec.N, s, cfg.beta, cfg.qp);
        tape.backward(loss, Matrix::Ones(1, 1));
        loss_sum += tape.value(loss)(0, 0);
        std::vector<Matrix> gs = collect_grads(tape, pn);
        if (grad_sum.empty())
          grad_sum = gs;
        else
          for (size_t k = 0; k < gs.size(); ++k) grad_sum[k] += gs[k];
        ++usable;
      } catch (const NoStabilizingSolution& e) {
        rec.aborted = true;
        rec.abort_reason = e.what();
        rec.abort_iteration = it;
        return result;
      } catch (const Z1Singular& e) {
        rec.aborted = true;
        rec.abort_reason = e.what();
        rec.abort_iteration = it;
        return result;
      } catch (const std::exception&) {
        ++failures;  // SingularKkt or QP failure: skip the sample
      }
    }

    if (usable == 0) {
      rec.aborted = true;
      rec.abort_reason = "every sample failed at iteration " +
                         std::to_string(it);
      rec.abort_iteration = it;
      return result;
    }

    rec.imitation_loss.push_back(loss_sum / usable);
    rec.reference_loss.push_back(reference_gap(cfg, spec, reference));
    rec.failures.push_back(failures);

    if (!slots.empty() || learn_ku || learn_kx) {
      for (Matrix& g : grad_sum) g /= static_cast<double>(usable);
      std::vector<Matrix> ps = collect_params();
      adam_step(ps, grad_sum, collect_masks(), state, cfg);
      scatter_params(ps);

      // Keep the DARE preconditions valid for the next forward pass.
      if (has(cfg, Learnable::kQ))
        spec.Q = project_psd(spec.Q, cfg.psd_floor, cfg.diagonal_q);
      if (has(cfg, Learnable::kR))
        spec.R = project_psd(spec.R, cfg.psd_floor, cfg.diagonal_r);
      if (learn_bounds) {
        spec.u_lo = spec.u_lo.cwiseMin(0.0);
        spec.u_hi = spec.u_hi.cwiseMax(0.0);
        spec.x_lo = spec.x_lo.cwiseMin(spec.x_hi);
      }
      if (learn_ku) spec.ku = std::max(spec.ku, 1e-6);
      if (learn_kx) spec.kx = std::max(spec.kx, 1e-6);
    }
  }

  // Refresh terminal data at the learned parameters.
  try {
    spec.install_terminal_cost();
  } catch (const NoStabilizingSolution& e) {
    rec.aborted = true;
    rec.abort_reason = e.what();
    rec.abort_iteration = cfg.iterations;
  }
  return result;
}

}  // namespace lqmpc
