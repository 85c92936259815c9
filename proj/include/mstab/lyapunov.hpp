#pragma once

// Lyapunov-inequality feasibility tests for the finite-support classes and
// the bisection for the optimal decay rate.
//
// P-form (i.i.d.):       l^2 P - sum_i p_i A_i^T P A_i > 0
// P-form (periodic):     l^2 P_k - E[A_k^T P_{k+1} A_k] > 0,  P_N = P_0
// R-form (Markov):       l^2 R_j - A_j^T (sum_i Pi(j,i) R_i) A_j > 0
// P-form (Markov):       l^2 P_j - sum_i Pi(j,i) A_i^T P_i A_i > 0
//
// Each is decided by the fixed point X <- I + l^-2 L*(X), which converges
// exactly when the spectral radius of L* is below l^2. The iteration is
// run with Smith doubling, so 2^k fixed-point steps cost k squarings.

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mstab/linalg.hpp"
#include "mstab/lmi_solver.hpp"
#include "mstab/system_model.hpp"

namespace mstab {

enum class CertificateKind { PForm, RFormCoupled, ConstantP, SVariable, GForm };

std::string_view to_string(CertificateKind k);

struct Margins {
  double underline_eps = 0.0;  // min eigenvalue over Lyapunov blocks
  double overline_eps = 0.0;   // max eigenvalue over Lyapunov blocks
  double eps = 0.0;            // min eigenvalue over inequality residuals
};

struct StabilityCertificate {
  CertificateKind kind = CertificateKind::PForm;
  double lambda = 1.0;
  std::vector<std::pair<std::string, Matrix>> blocks;
  Margins margins;
  std::size_t iterations = 0;
};

struct SteinOptions {
  /// Spectral-margin tolerance.
  double feas_tol = 1e-9;
  /// Smith doublings; 2^64 fixed-point steps.
  std::size_t max_doublings = 64;
  /// Divergence once the stacked trace exceeds this.
  double divergence_trace = 1e18;
};

/// Throws std::invalid_argument unless 0 < lambda < 1.
void check_lambda(double lambda);

std::optional<StabilityCertificate> solve_stein_iid(const IidSystem& s, double lambda,
                                                    const SteinOptions& opts = {});
std::optional<StabilityCertificate> solve_stein_iid(const PeriodicIidSystem& s, double lambda,
                                                    const SteinOptions& opts = {});
/// Accepts IID or PeriodicIID models; throws std::invalid_argument otherwise.
std::optional<StabilityCertificate> solve_stein_iid(const SystemModel& s, double lambda,
                                                    const SteinOptions& opts = {});

/// R-form coupled inequalities, one R_j per mode.
std::optional<StabilityCertificate> solve_coupled_markov(const MarkovJumpSystem& s, double lambda,
                                                         const SteinOptions& opts = {});
/// P-form for Markov chains, P_j indexed by the previous mode.
std::optional<StabilityCertificate> solve_pform_markov(const MarkovJumpSystem& s, double lambda,
                                                       const SteinOptions& opts = {});

/// The class solver: Stein for IID/periodic, coupled R-form for Markov.
std::optional<StabilityCertificate> solve_exponential(const SystemModel& s, double lambda,
                                                      const SteinOptions& opts = {});

/// Recomputes the certificate's margins from its blocks and the model alone.
Margins recheck_certificate(const SystemModel& s, const StabilityCertificate& c);

struct RateBracket {
  double lo = 1.0;
  double hi = 1.0;
  bool exponentially_stable = false;
  /// sqrt(rho^(1/steps)) from the lifted operator.
  double operator_rate = 1.0;
  /// hi agrees with operator_rate within tol + 1e-7.
  bool cross_check_ok = true;
  std::size_t evaluations = 0;
};

/// Bisection on lambda with the class solver. The solver is infeasible at lo
/// (or lo = 0) and feasible at hi, with hi - lo <= tol. If the system fails at
/// 1 - 1e-9 the bracket is [1, 1] with exponentially_stable = false.
RateBracket lambda_min(const SystemModel& s, double tol = 1e-6, const SteinOptions& opts = {});

/// Constant Lyapunov matrix P0. For IID models this is solve_stein_iid (the
/// two notions coincide). For Markov/periodic models it searches a single P0
/// with l^2 P0 - sum_i Pi(j,i) A_i^T P0 A_i >= 0 for every j (resp. every
/// phase) through the LMI solver, normalized by trace P0 = n.
std::optional<StabilityCertificate> check_quadratic(const SystemModel& s, double lambda,
                                                    const LmiOptions& opts = {});

/// Builds the constant-P LMI used by check_quadratic (exposed for testing).
LmiProblem assemble_constant_p(const SystemModel& s, double lambda);

/// Wraps a Feasible martingale LMI result as a certificate.
StabilityCertificate certificate_from_lmi(const LmiProblem& p, const FeasResult& r,
                                          CertificateKind kind, double lambda);

}  // namespace mstab
