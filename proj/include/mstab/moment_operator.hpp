#pragma once

// Exact second-moment propagation for the classes that admit it.
//
// IID:      vec Q_{k+1} = T vec Q_k,  T = sum_i p_i kron(A_i, A_i).
// Periodic: the monodromy T_{N-1} ... T_0 over one period.
// Markov:   Q_j(k+1) = sum_i Pi(i, j) A_i Q_i(k) A_i^T with
//           Q_i(k) = E[x_k x_k^T 1{mode_k = i}], stacked as
//           [vec Q_0; ...; vec Q_{m-1}].
//
// The spectral radius of the lifted operator is below one exactly when the
// system is exponentially stable in the second moment.

#include <cstddef>
#include <string_view>
#include <vector>

#include "mstab/linalg.hpp"
#include "mstab/system_model.hpp"

namespace mstab {

enum class LiftKind { Iid, PeriodicMonodromy, Markov };

std::string_view to_string(LiftKind k);

struct MomentOperator {
  LiftKind kind = LiftKind::Iid;
  std::size_t n = 0;       // state dimension
  std::size_t blocks = 1;  // m for Markov, else 1
  std::size_t steps_per_application = 1;
  Matrix matrix;           // dim = blocks * n^2

  std::size_t dim() const { return matrix.rows(); }
};

MomentOperator lift_iid(const IidSystem& s);
MomentOperator lift_markov(const MarkovJumpSystem& s);
MomentOperator lift_periodic(const PeriodicIidSystem& s);
/// Dispatches on the variant. Throws std::invalid_argument for the
/// polytopic-martingale class, which has no exact lift.
MomentOperator lift(const SystemModel& s);

/// Single-step i.i.d. lift of one periodic phase.
Matrix phase_lift(const PeriodicStep& step);

/// Spectral radius of the lifted operator (per application, so for periodic
/// models this is the monodromy radius).
double second_moment_radius(const SystemModel& s);

/// The per-step squared rate: rho^(1 / steps_per_application).
double per_step_radius(const SystemModel& s);

/// One application of the operator to a stacked, vectorized block state.
std::vector<double> apply(const MomentOperator& op, std::span<const double> state);

/// Returns the block matrices of a stacked state.
std::vector<Matrix> unstack_blocks(const MomentOperator& op, std::span<const double> state);

}  // namespace mstab
