#pragma once

// Feasibility of affine symmetric-matrix inequalities
//
//   F_c(x) = F_c0 + sum_u x_u F_cu  >  0      for every constraint c,
//
// over scalar variables x subject to one affine normalization a.x = b. The
// solver maximizes t(x) = min_c lambda_min(F_c(x)) by projected subgradient
// ascent; a result is Feasible only when the best iterate, re-assembled and
// re-checked from scratch, has margin >= 1e-7. A failed ascent is reported as
// Unknown, never as Infeasible: Infeasible is reserved for a violated
// necessary condition checked by the problem assemblers.

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mstab/linalg.hpp"
#include "mstab/system_model.hpp"

namespace mstab {

/// Inconsistent variable layout or constraint shapes.
class LayoutError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A named matrix-valued unknown and the scalar slots it occupies.
/// Symmetric blocks use one slot per upper-triangular entry (row-major);
/// full blocks use one slot per entry (row-major).
struct VarBlock {
  std::string name;
  bool symmetric = true;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return symmetric ? rows * (rows + 1) / 2 : rows * cols; }
};

class VarLayout {
 public:
  std::size_t add_symmetric(std::string name, std::size_t n);
  std::size_t add_full(std::string name, std::size_t rows, std::size_t cols);

  const VarBlock& block(std::size_t b) const { return blocks_.at(b); }
  const std::vector<VarBlock>& blocks() const { return blocks_; }
  std::size_t num_vars() const { return num_vars_; }

  /// Basis matrix multiplying scalar slot k of block b.
  Matrix basis(std::size_t b, std::size_t k) const;
  /// Reassembles block b from a full assignment.
  Matrix value(std::size_t b, std::span<const double> x) const;
  /// Writes a block value into an assignment (symmetric blocks read the upper
  /// triangle).
  void store(std::size_t b, const Matrix& v, std::span<double> x) const;

 private:
  std::vector<VarBlock> blocks_;
  std::size_t num_vars_ = 0;
};

struct LmiConstraint {
  std::string name;
  SymMatrix constant;
  std::vector<std::pair<std::size_t, SymMatrix>> terms;  // (variable, coefficient)

  std::size_t dim() const { return constant.dim(); }
};

/// Builds an affine matrix expression in the layout's variables, e.g.
/// expr.add(L, b, R) accumulates L * X_b * R.
class AffineExpr {
 public:
  AffineExpr(const VarLayout& layout, std::size_t dim);

  AffineExpr& add_constant(const Matrix& c, double scale = 1.0);
  AffineExpr& add(const Matrix& left, std::size_t block, const Matrix& right, double scale = 1.0);
  AffineExpr& add_transposed(const Matrix& left, std::size_t block, const Matrix& right,
                             double scale = 1.0);
  /// Adds He(left * X_b * right) = left X right + (left X right)^T.
  AffineExpr& add_he(const Matrix& left, std::size_t block, const Matrix& right);

  /// Throws LayoutError when the accumulated expression is not symmetric.
  LmiConstraint to_constraint(std::string name) const;

 private:
  const VarLayout* layout_;
  std::size_t dim_;
  Matrix constant_;
  std::vector<std::optional<Matrix>> coeffs_;
};

struct Normalization {
  std::vector<double> coeffs;
  double rhs = 0.0;
};

struct LmiProblem {
  VarLayout layout;
  std::vector<LmiConstraint> constraints;
  Normalization normalization;

  std::size_t num_vars() const { return layout.num_vars(); }
};

enum class FeasStatus { Feasible, Infeasible, Unknown };

std::string_view to_string(FeasStatus s);

struct FeasResult {
  FeasStatus status = FeasStatus::Unknown;
  double t_star = -std::numeric_limits<double>::infinity();
  std::vector<double> assignment;
  std::size_t iterations = 0;
  std::string reason;
};

struct LmiOptions {
  std::size_t max_iterations = 50000;
  /// Stop after this many iterations without improving the best margin.
  std::size_t stall_iterations = 5000;
  double step_scale = 0.2;
  double feasible_margin = 1e-7;
  /// Stop as soon as the verified margin reaches this value.
  double stop_margin = std::numeric_limits<double>::infinity();
};

/// Throws LayoutError for malformed problems.
void check_problem(const LmiProblem& p);

/// Smallest eigenvalue of each constraint at x, assembled from scratch.
std::vector<double> constraint_margins(const LmiProblem& p, std::span<const double> x);

FeasResult solve_feasibility(const LmiProblem& p, std::vector<double> start, const LmiOptions& opts = {});
FeasResult solve_feasibility(const LmiProblem& p, const LmiOptions& opts = {});

// Robust certificates for polytopic martingale models. Both assemblers
// normalize sum_i trace R_i = Z n and first check the necessary condition
// rho(A_i) < lambda2 at every vertex.

/// diag(l^2 R_i, -R_i) + He(S [A_i I]) > 0, R_i > 0, S in R^{2n x n}.
LmiProblem assemble_svariable(const PolytopicMartingaleSystem& s, double lambda2);
/// [[l^2 R_i, A_i^T G^T], [G A_i, G + G^T - R_i]] > 0, R_i > 0.
LmiProblem assemble_gform(const PolytopicMartingaleSystem& s, double lambda2);

FeasResult martingale_vertex_certificate(const PolytopicMartingaleSystem& s, double lambda2,
                                         const LmiOptions& opts = {});
FeasResult gform_certificate(const PolytopicMartingaleSystem& s, double lambda2,
                             const LmiOptions& opts = {});

/// Index of the first vertex with rho(A_i) >= lambda2, if any.
std::optional<std::size_t> non_schur_vertex(const PolytopicMartingaleSystem& s, double lambda2);

}  // namespace mstab
