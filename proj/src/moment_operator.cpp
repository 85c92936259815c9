#include "mstab/moment_operator.hpp"

#include <cmath>
#include <stdexcept>

namespace mstab {

std::string_view to_string(LiftKind k) {
  switch (k) {
    case LiftKind::Iid: return "iid";
    case LiftKind::PeriodicMonodromy: return "periodic_monodromy";
    case LiftKind::Markov: return "markov";
  }
  return "unknown";
}

namespace {

Matrix weighted_kron_sum(const std::vector<Matrix>& modes, const std::vector<double>& probs,
                         std::size_t n) {
  Matrix t(n * n, n * n);
  for (std::size_t i = 0; i < modes.size(); ++i) {
    if (probs[i] == 0.0) continue;
    t.add_block(0, 0, kron(modes[i], modes[i]), probs[i]);
  }
  return t;
}

}  // namespace

Matrix phase_lift(const PeriodicStep& step) {
  const std::size_t n = step.modes.front().rows();
  return weighted_kron_sum(step.modes, step.probs, n);
}

MomentOperator lift_iid(const IidSystem& s) {
  return {LiftKind::Iid, s.n, 1, 1, weighted_kron_sum(s.modes, s.probs, s.n)};
}

MomentOperator lift_markov(const MarkovJumpSystem& s) {
  const std::size_t m = s.modes.size();
  const std::size_t d = s.n * s.n;
  Matrix t(m * d, m * d);
  for (std::size_t i = 0; i < m; ++i) {
    const Matrix ki = kron(s.modes[i], s.modes[i]);
    for (std::size_t j = 0; j < m; ++j) {
      // block (target j, source i)
      if (s.transition(i, j) != 0.0) t.add_block(j * d, i * d, ki, s.transition(i, j));
    }
  }
  return {LiftKind::Markov, s.n, m, 1, std::move(t)};
}

MomentOperator lift_periodic(const PeriodicIidSystem& s) {
  Matrix t = Matrix::identity(s.n * s.n);
  for (const auto& step : s.steps) t = phase_lift(step) * t;
  return {LiftKind::PeriodicMonodromy, s.n, 1, s.period(), std::move(t)};
}

MomentOperator lift(const SystemModel& s) {
  if (const auto* p = std::get_if<IidSystem>(&s)) return lift_iid(*p);
  if (const auto* p = std::get_if<PeriodicIidSystem>(&s)) return lift_periodic(*p);
  if (const auto* p = std::get_if<MarkovJumpSystem>(&s)) return lift_markov(*p);
  throw std::invalid_argument(
      "exact operator unavailable for polytopic_martingale; use certify or simulate");
}

double second_moment_radius(const SystemModel& s) { return spectral_radius(lift(s).matrix); }

double per_step_radius(const SystemModel& s) {
  const auto op = lift(s);
  const double rho = spectral_radius(op.matrix);
  if (op.steps_per_application == 1) return rho;
  return std::pow(rho, 1.0 / static_cast<double>(op.steps_per_application));
}

std::vector<double> apply(const MomentOperator& op, std::span<const double> state) {
  return op.matrix * state;
}

std::vector<Matrix> unstack_blocks(const MomentOperator& op, std::span<const double> state) {
  const std::size_t d = op.n * op.n;
  if (state.size() != op.blocks * d) throw DimensionError("unstack_blocks: size mismatch");
  std::vector<Matrix> out;
  out.reserve(op.blocks);
  for (std::size_t b = 0; b < op.blocks; ++b) out.push_back(unvec(state.subspan(b * d, d), op.n, op.n));
  return out;
}

}  // namespace mstab
