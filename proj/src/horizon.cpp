#include "lqmpc/horizon.hpp"

#include <random>

namespace lqmpc {

namespace {

// Deterministic uniform doubles from the raw mt19937_64 stream; avoids the
// implementation-defined std:: distributions.
class UniformSampler {
 public:
  explicit UniformSampler(std::uint64_t seed) : gen_(seed) {}
  double sample(double lo, double hi) {
    const double u =
        static_cast<double>(gen_() >> 11) * 0x1.0p-53;  // [0, 1)
    return lo + u * (hi - lo);
  }
  Vector sample_box(const Vector& lo, const Vector& hi) {
    Vector x(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      x(i) = sample(lo(i), hi(i));
    return x;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace

HorizonResult verify_reduce(const MpcSpec& spec, const HorizonQuery& query,
                            const QpSettings& settings) {
  if (spec.form != MpcForm::kPrestabilized || !spec.K.has_value())
    throw std::invalid_argument(
        "verify_reduce: requires the pre-stabilized form with a gain");
  if (!(query.epsilon > 0.0) || query.samples < 1 || !(query.shrink > 0.0) ||
      !(query.shrink < 1.0))
    throw std::invalid_argument("verify_reduce: bad query parameters");

  UniformSampler rng(query.seed);
  HorizonResult res;
  Vector lo = query.box_lo;
  Vector hi = query.box_hi;
  double scale = 1.0;

  for (int shrink_round = 0; shrink_round <= query.max_shrinks;
       ++shrink_round) {
    int best = -1;  // lowest accepted candidate this round
    for (int nbar = spec.N; nbar >= 1; --nbar) {
      int violations = 0;
      double max_tail = 0.0;
      for (int s = 0; s < query.samples; ++s) {
        const Vector x = rng.sample_box(lo, hi);
        bool ok = true;
        double tail = 0.0;
        try {
          const MpcStep step = mpc_step(spec, x, settings);
          for (int k = nbar; k < spec.N; ++k)
            tail = std::max(tail, step.delta_u.col(k).cwiseAbs().maxCoeff());
          ok = tail <= query.epsilon;
        } catch (const std::exception&) {
          ok = false;  // QP failure counts as a violating sample
        }
        max_tail = std::max(max_tail, tail);
        if (!ok) ++violations;
      }
      const bool accepted = violations == 0;
      res.log.push_back(
          HorizonCandidate{nbar, scale, violations, max_tail, accepted});
      if (!accepted) break;  // tail sets grow as nbar decreases
      best = nbar;
    }
    if (best >= 1) {
      res.accepted = true;
      res.horizon = best;
      res.box_lo = lo;
      res.box_hi = hi;
      return res;
    }
    lo *= query.shrink;
    hi *= query.shrink;
    scale *= query.shrink;
  }

  res.accepted = false;
  res.suggested_horizon = spec.N + 1;
  res.box_lo = lo;
  res.box_hi = hi;
  return res;
}

}  // namespace lqmpc
