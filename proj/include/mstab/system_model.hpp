#pragma once

// The four stochastic-system classes x_{k+1} = A(xi_k) x_k supported by the
// analysis: i.i.d. mode selection, N-periodic i.i.d. selection, a finite
// Markov chain, and a martingale on the unit simplex driving a matrix
// polytope.

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mstab/linalg.hpp"

namespace mstab {

/// Malformed or inconsistent model data.
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct IidSystem {
  std::size_t n = 0;
  std::vector<Matrix> modes;
  std::vector<double> probs;
  bool operator==(const IidSystem&) const = default;
};

struct PeriodicStep {
  std::vector<Matrix> modes;
  std::vector<double> probs;
  bool operator==(const PeriodicStep&) const = default;
};

/// Step k uses distribution steps[k mod N].
struct PeriodicIidSystem {
  std::size_t n = 0;
  std::vector<PeriodicStep> steps;

  std::size_t period() const { return steps.size(); }
  bool operator==(const PeriodicIidSystem&) const = default;
};

/// transition(j, i) = Pr(mode_k = i | mode_{k-1} = j); rows sum to one.
struct MarkovJumpSystem {
  std::size_t n = 0;
  std::vector<Matrix> modes;
  Matrix transition;
  bool operator==(const MarkovJumpSystem&) const = default;
};

/// A(theta) = sum_i theta_i vertices[i] for theta in the unit simplex.
/// gamma is the step parameter of the simulation sampler only.
struct PolytopicMartingaleSystem {
  std::size_t n = 0;
  std::vector<Matrix> vertices;
  double gamma = 0.5;
  bool operator==(const PolytopicMartingaleSystem&) const = default;
};

using SystemModel =
    std::variant<IidSystem, PeriodicIidSystem, MarkovJumpSystem, PolytopicMartingaleSystem>;

// Validating constructors. Probability vectors within 1e-12 of summing to one
// are renormalized; anything further off throws ModelError.
IidSystem make_iid(std::vector<Matrix> modes, std::vector<double> probs);
PeriodicIidSystem make_periodic_iid(std::vector<PeriodicStep> steps);
MarkovJumpSystem make_markov(std::vector<Matrix> modes, Matrix transition);
PolytopicMartingaleSystem make_polytopic_martingale(std::vector<Matrix> vertices, double gamma);

/// Checks every structural invariant of an already-built model (used after
/// construction by hand). Throws ModelError on the first violation.
void check_model(const SystemModel& s);

std::size_t state_dim(const SystemModel& s);
/// "iid", "periodic_iid", "markov" or "polytopic_martingale".
std::string_view type_tag(const SystemModel& s);
/// Number of modes (Z or m); for periodic models the maximum over steps.
std::size_t mode_count(const SystemModel& s);

SystemModel parse_system(std::string_view text);
std::string serialize_system(const SystemModel& s);

/// Class-specific prior data for a trajectory starting at time k0.
struct InitialCondition {
  std::vector<double> x0;
  /// MarkovJump: the mode at k0 - 1. Ignored for other classes.
  std::optional<std::size_t> previous_mode;
  /// MarkovJump: distribution of the mode at k0 - 1 (used when previous_mode
  /// is empty; uniform when both are empty).
  std::vector<double> previous_mode_distribution;
  /// PolytopicMartingale: xi_{k0}; barycenter when empty.
  std::vector<double> simplex_point;
  /// PeriodicIid: k0 mod N.
  std::size_t phase = 0;
};

/// Throws ModelError when init is inconsistent with the model.
void check_initial_condition(const SystemModel& s, const InitialCondition& init);

/// Distribution of the mode active at k0 for a Markov model under init.
std::vector<double> initial_mode_distribution(const MarkovJumpSystem& s,
                                              const InitialCondition& init);

/// xi_{k0} for a martingale model under init.
std::vector<double> initial_simplex_point(const PolytopicMartingaleSystem& s,
                                          const InitialCondition& init);

struct ValidationReport {
  bool ok = true;
  double m1_bound = 0.0;  // sup of squared entries over the support
  double m3_bound = 0.0;  // sup of absolute entries over the support
  std::vector<std::string> messages;
};

ValidationReport validate(const SystemModel& s);

/// An i.i.d. model is a Markov model whose transition rows all equal probs.
MarkovJumpSystem embed_iid_as_markov(const IidSystem& s);
MarkovJumpSystem embed_iid_as_markov(const SystemModel& s);

}  // namespace mstab
