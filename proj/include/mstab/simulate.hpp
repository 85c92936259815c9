#pragma once

// Monte Carlo estimation of E_0[|x_k|^2].
//
// Path i draws from its own generator seeded with path_seed(master_seed, i),
// and paths are reduced in fixed-size chunks merged in chunk order, so an
// estimate is a pure function of (model, params) whatever the worker count.
//
// The polytopic-martingale sampler is one member of the martingale class:
// xi' = (1 - gamma) xi + gamma e_J with J ~ Categorical(xi) (a Polya-urn
// style step). Robust certificates cover every simplex martingale;
// simulation exercises only this one.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "mstab/system_model.hpp"

namespace mstab {

/// Stateless 64-bit mix of (master, index) (splitmix64 finalizer chain).
std::uint64_t path_seed(std::uint64_t master, std::uint64_t index);

class PathRng {
 public:
  explicit PathRng(std::uint64_t seed) : engine_(seed) {}
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

/// Index J with cumulative weight crossing draw * total; zero-weight entries
/// are never returned.
std::size_t categorical(std::span<const double> weights, double draw);

/// One martingale step on the simplex. Throws std::invalid_argument when xi
/// is off the simplex by more than 1e-9 or gamma is outside (0, 1].
std::vector<double> simplex_martingale_step(std::span<const double> xi, double gamma, double draw);

struct SamplePath {
  std::vector<std::vector<double>> states;  // x_{k0} .. x_{k0+horizon}
  std::vector<std::size_t> modes;           // finite-mode classes: mode used at each step
  std::vector<std::vector<double>> xi;      // martingale class: xi_{k0} .. xi_{k0+horizon}
};

SamplePath sample_path(const SystemModel& s, const InitialCondition& init, std::size_t horizon,
                       std::uint64_t seed);

struct SimParams {
  std::size_t paths = 1000;
  std::size_t horizon = 40;
  std::uint64_t master_seed = 0;
  InitialCondition initial;
  /// 0 = MOMENT_STAB_THREADS, else hardware concurrency.
  std::size_t threads = 0;
};

struct SecondMomentCurve {
  std::vector<double> values;       // m_0 .. m_K
  std::vector<double> std_errors;   // sample standard error per k
  std::vector<double> half_widths;  // 95% normal-approximation half widths
  std::size_t paths = 0;
  std::uint64_t master_seed = 0;
  bool diverged = false;            // truncated where |x_k|^2 first exceeded 1e150
};

SecondMomentCurve estimate_second_moment(const SystemModel& s, const SimParams& p);

struct DecayFit {
  double lambda_hat = 1.0;
  double lo = 1.0;
  double hi = 1.0;
  std::size_t window_first = 0;
  std::size_t window_last = 0;  // inclusive
  double slope = 0.0;           // of log m_k per step
  double slope_se = 0.0;

  double half_width() const { return 0.5 * (hi - lo); }
};

/// Weighted least squares of log m_k on k over [first, last]; defaults to
/// the last two thirds of the curve. Throws std::invalid_argument when the
/// curve has fewer than 8 points or the window holds a nonpositive value.
DecayFit estimate_decay_rate(const SecondMomentCurve& c,
                             std::optional<std::pair<std::size_t, std::size_t>> window = std::nullopt);

/// Worker count: requested if nonzero, else MOMENT_STAB_THREADS if set and
/// nonzero, else hardware concurrency.
std::size_t resolve_threads(std::size_t requested);

}  // namespace mstab
