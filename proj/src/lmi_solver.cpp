#include "mstab/lmi_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mstab/lyapunov.hpp"

namespace mstab {

std::string_view to_string(FeasStatus s) {
  switch (s) {
    case FeasStatus::Feasible: return "feasible";
    case FeasStatus::Infeasible: return "infeasible";
    case FeasStatus::Unknown: return "unknown";
  }
  return "unknown";
}

std::size_t VarLayout::add_symmetric(std::string name, std::size_t n) {
  blocks_.push_back({std::move(name), true, n, n, num_vars_});
  num_vars_ += blocks_.back().size();
  return blocks_.size() - 1;
}

std::size_t VarLayout::add_full(std::string name, std::size_t rows, std::size_t cols) {
  blocks_.push_back({std::move(name), false, rows, cols, num_vars_});
  num_vars_ += blocks_.back().size();
  return blocks_.size() - 1;
}

namespace {

// (row, col) of slot k in a symmetric block of size n, upper triangle row-major.
std::pair<std::size_t, std::size_t> sym_slot(std::size_t n, std::size_t k) {
  std::size_t i = 0;
  while (k >= n - i) {
    k -= n - i;
    ++i;
  }
  return {i, i + k};
}

}  // namespace

Matrix VarLayout::basis(std::size_t b, std::size_t k) const {
  const VarBlock& blk = block(b);
  if (k >= blk.size()) throw LayoutError("VarLayout::basis: slot out of range");
  Matrix e(blk.rows, blk.cols);
  if (blk.symmetric) {
    const auto [i, j] = sym_slot(blk.rows, k);
    e(i, j) = 1.0;
    e(j, i) = 1.0;
  } else {
    e(k / blk.cols, k % blk.cols) = 1.0;
  }
  return e;
}

Matrix VarLayout::value(std::size_t b, std::span<const double> x) const {
  const VarBlock& blk = block(b);
  if (x.size() != num_vars_) throw LayoutError("VarLayout::value: assignment size mismatch");
  Matrix v(blk.rows, blk.cols);
  if (blk.symmetric) {
    std::size_t k = blk.offset;
    for (std::size_t i = 0; i < blk.rows; ++i)
      for (std::size_t j = i; j < blk.cols; ++j) {
        v(i, j) = x[k];
        v(j, i) = x[k];
        ++k;
      }
  } else {
    for (std::size_t i = 0; i < blk.rows; ++i)
      for (std::size_t j = 0; j < blk.cols; ++j) v(i, j) = x[blk.offset + i * blk.cols + j];
  }
  return v;
}

void VarLayout::store(std::size_t b, const Matrix& v, std::span<double> x) const {
  const VarBlock& blk = block(b);
  if (v.rows() != blk.rows || v.cols() != blk.cols) throw LayoutError("VarLayout::store: shape mismatch");
  if (x.size() != num_vars_) throw LayoutError("VarLayout::store: assignment size mismatch");
  if (blk.symmetric) {
    std::size_t k = blk.offset;
    for (std::size_t i = 0; i < blk.rows; ++i)
      for (std::size_t j = i; j < blk.cols; ++j) x[k++] = v(i, j);
  } else {
    for (std::size_t i = 0; i < blk.rows; ++i)
      for (std::size_t j = 0; j < blk.cols; ++j) x[blk.offset + i * blk.cols + j] = v(i, j);
  }
}

AffineExpr::AffineExpr(const VarLayout& layout, std::size_t dim)
    : layout_(&layout), dim_(dim), constant_(dim, dim), coeffs_(layout.num_vars()) {}

AffineExpr& AffineExpr::add_constant(const Matrix& c, double scale) {
  if (c.rows() != dim_ || c.cols() != dim_) throw LayoutError("AffineExpr: constant has wrong shape");
  constant_.add_block(0, 0, c, scale);
  return *this;
}

AffineExpr& AffineExpr::add(const Matrix& left, std::size_t block, const Matrix& right, double scale) {
  const VarBlock& blk = layout_->block(block);
  if (left.rows() != dim_ || left.cols() != blk.rows || right.rows() != blk.cols || right.cols() != dim_) {
    throw LayoutError("AffineExpr: term for " + blk.name + " has inconsistent shapes");
  }
  for (std::size_t k = 0; k < blk.size(); ++k) {
    Matrix term = left * layout_->basis(block, k) * right;
    auto& slot = coeffs_[blk.offset + k];
    if (!slot) slot = Matrix(dim_, dim_);
    slot->add_block(0, 0, term, scale);
  }
  return *this;
}

AffineExpr& AffineExpr::add_transposed(const Matrix& left, std::size_t block, const Matrix& right,
                                       double scale) {
  const VarBlock& blk = layout_->block(block);
  if (left.rows() != dim_ || left.cols() != blk.cols || right.rows() != blk.rows || right.cols() != dim_) {
    throw LayoutError("AffineExpr: transposed term for " + blk.name + " has inconsistent shapes");
  }
  for (std::size_t k = 0; k < blk.size(); ++k) {
    Matrix term = left * layout_->basis(block, k).transpose() * right;
    auto& slot = coeffs_[blk.offset + k];
    if (!slot) slot = Matrix(dim_, dim_);
    slot->add_block(0, 0, term, scale);
  }
  return *this;
}

AffineExpr& AffineExpr::add_he(const Matrix& left, std::size_t block, const Matrix& right) {
  add(left, block, right);
  return add_transposed(right.transpose(), block, left.transpose());
}

LmiConstraint AffineExpr::to_constraint(std::string name) const {
  LmiConstraint c;
  try {
    c.constant = SymMatrix::from_matrix(constant_, 1e-12);
    for (std::size_t u = 0; u < coeffs_.size(); ++u) {
      if (!coeffs_[u]) continue;
      if (max_abs(*coeffs_[u]) == 0.0) continue;
      c.terms.emplace_back(u, SymMatrix::from_matrix(*coeffs_[u], 1e-12));
    }
  } catch (const std::invalid_argument&) {
    throw LayoutError("constraint " + name + " is not symmetric");
  }
  c.name = std::move(name);
  return c;
}

void check_problem(const LmiProblem& p) {
  const std::size_t d = p.num_vars();
  if (p.constraints.empty()) throw LayoutError("LMI problem has no constraints");
  std::size_t total = 0;
  for (const auto& c : p.constraints) {
    total += c.dim();
    for (const auto& [u, f] : c.terms) {
      if (u >= d) throw LayoutError("constraint " + c.name + " references an unknown variable");
      if (f.dim() != c.dim()) throw LayoutError("constraint " + c.name + " has a coefficient of the wrong size");
    }
  }
  if (total > 400) throw LayoutError("LMI problem exceeds the supported total dimension (400)");
  if (p.normalization.coeffs.size() != d) throw LayoutError("normalization has the wrong length");
  const double a2 = std::inner_product(p.normalization.coeffs.begin(), p.normalization.coeffs.end(),
                                       p.normalization.coeffs.begin(), 0.0);
  if (!(a2 > 0.0)) throw LayoutError("normalization is degenerate");
}

namespace {

Matrix assemble(const LmiConstraint& c, std::span<const double> x) {
  Matrix f = c.constant.matrix();
  for (const auto& [u, coeff] : c.terms) {
    if (x[u] != 0.0) f.add_block(0, 0, coeff.matrix(), x[u]);
  }
  return f;
}

void project(std::vector<double>& x, const Normalization& nz, double a2) {
  const double ax = std::inner_product(nz.coeffs.begin(), nz.coeffs.end(), x.begin(), 0.0);
  const double f = (ax - nz.rhs) / a2;
  for (std::size_t u = 0; u < x.size(); ++u) x[u] -= f * nz.coeffs[u];
}

}  // namespace

std::vector<double> constraint_margins(const LmiProblem& p, std::span<const double> x) {
  std::vector<double> out;
  out.reserve(p.constraints.size());
  for (const auto& c : p.constraints) {
    out.push_back(sym_eig_extremes(SymMatrix::symmetric_part(assemble(c, x))).min_eig);
  }
  return out;
}

FeasResult solve_feasibility(const LmiProblem& p, std::vector<double> x, const LmiOptions& opts) {
  check_problem(p);
  const std::size_t d = p.num_vars();
  if (x.size() != d) throw LayoutError("start point has the wrong length");
  const auto& nz = p.normalization;
  const double a2 = std::inner_product(nz.coeffs.begin(), nz.coeffs.end(), nz.coeffs.begin(), 0.0);
  project(x, nz, a2);

  FeasResult res;
  std::vector<double> best_x = x;
  double best_t = -std::numeric_limits<double>::infinity();
  std::size_t last_improvement = 0;
  std::vector<double> g(d);
  std::size_t it = 0;
  for (it = 1; it <= opts.max_iterations; ++it) {
    // Active constraint and its extreme eigenvector.
    double t = std::numeric_limits<double>::infinity();
    std::size_t active = 0;
    std::vector<double> v;
    for (std::size_t c = 0; c < p.constraints.size(); ++c) {
      const auto e = sym_eigen(SymMatrix::symmetric_part(assemble(p.constraints[c], x)));
      if (e.values.front() < t) {
        t = e.values.front();
        active = c;
        v.assign(e.vectors.rows(), 0.0);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = e.vectors(i, 0);
      }
    }
    if (t > best_t) {
      if (t > best_t + 1e-12 * std::max(1.0, std::abs(best_t))) last_improvement = it;
      best_t = t;
      best_x = x;
    }
    if (best_t >= opts.stop_margin) break;
    if (it - last_improvement > opts.stall_iterations) break;

    std::fill(g.begin(), g.end(), 0.0);
    for (const auto& [u, f] : p.constraints[active].terms) {
      const Matrix& fm = f.matrix();
      double q = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < v.size(); ++j) row += fm(i, j) * v[j];
        q += v[i] * row;
      }
      g[u] = q;
    }
    const double ag = std::inner_product(nz.coeffs.begin(), nz.coeffs.end(), g.begin(), 0.0);
    for (std::size_t u = 0; u < d; ++u) g[u] -= (ag / a2) * nz.coeffs[u];
    const double gn = std::sqrt(std::inner_product(g.begin(), g.end(), g.begin(), 0.0));
    if (!(gn > 0.0)) break;  // the active margin is constant on the feasible plane
    const double step = opts.step_scale / std::sqrt(static_cast<double>(it));
    for (std::size_t u = 0; u < d; ++u) x[u] += step * g[u] / gn;
    project(x, nz, a2);
  }

  res.iterations = std::min(it, opts.max_iterations);
  res.assignment = std::move(best_x);
  const auto margins = constraint_margins(p, res.assignment);
  res.t_star = *std::min_element(margins.begin(), margins.end());
  if (res.t_star >= opts.feasible_margin) {
    res.status = FeasStatus::Feasible;
  } else {
    res.status = FeasStatus::Unknown;
    res.reason = "best margin " + std::to_string(res.t_star) + " below " + std::to_string(opts.feasible_margin) +
                 "; ascent failure does not imply infeasibility";
  }
  return res;
}

FeasResult solve_feasibility(const LmiProblem& p, const LmiOptions& opts) {
  check_problem(p);
  // Start from the minimum-norm point of the normalization plane.
  std::vector<double> x(p.num_vars(), 0.0);
  return solve_feasibility(p, std::move(x), opts);
}

std::optional<std::size_t> non_schur_vertex(const PolytopicMartingaleSystem& s, double lambda2) {
  for (std::size_t i = 0; i < s.vertices.size(); ++i) {
    if (spectral_radius(s.vertices[i]) >= lambda2) return i;
  }
  return std::nullopt;
}

namespace {

Matrix upper_selector(std::size_t n) {
  Matrix e(2 * n, n);
  e.set_block(0, 0, Matrix::identity(n));
  return e;
}

Matrix lower_selector(std::size_t n) {
  Matrix e(2 * n, n);
  e.set_block(n, 0, Matrix::identity(n));
  return e;
}

Matrix vertex_row(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix m(n, 2 * n);
  m.set_block(0, 0, a);
  m.set_block(0, n, Matrix::identity(n));
  return m;
}

// Adds R_i > 0 constraints and the trace normalization; returns R block ids.
std::vector<std::size_t> add_lyapunov_blocks(LmiProblem& prob, std::size_t z, std::size_t n) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < z; ++i) ids.push_back(prob.layout.add_symmetric("R[" + std::to_string(i) + "]", n));
  return ids;
}

void finish_martingale_problem(LmiProblem& prob, const std::vector<std::size_t>& r_ids, std::size_t n) {
  const Matrix eye = Matrix::identity(n);
  for (std::size_t i = 0; i < r_ids.size(); ++i) {
    prob.constraints.push_back(
        AffineExpr(prob.layout, n).add(eye, r_ids[i], eye).to_constraint("R[" + std::to_string(i) + "] > 0"));
  }
  prob.normalization.coeffs.assign(prob.num_vars(), 0.0);
  for (std::size_t id : r_ids) prob.layout.store(id, eye, prob.normalization.coeffs);
  prob.normalization.rhs = static_cast<double>(r_ids.size() * n);
}

LmiProblem assemble_martingale(const PolytopicMartingaleSystem& s, double lambda2, bool gform) {
  check_lambda(lambda2);
  const std::size_t n = s.n;
  const std::size_t z = s.vertices.size();
  LmiProblem prob;
  const auto r_ids = add_lyapunov_blocks(prob, z, n);
  const std::size_t aux = gform ? prob.layout.add_full("G", n, n) : prob.layout.add_full("S", 2 * n, n);
  const Matrix e1 = upper_selector(n);
  const Matrix e2 = lower_selector(n);
  const Matrix e1t = e1.transpose();
  const Matrix e2t = e2.transpose();
  const double l2 = lambda2 * lambda2;
  for (std::size_t i = 0; i < z; ++i) {
    AffineExpr e(prob.layout, 2 * n);
    e.add(e1, r_ids[i], e1t, l2);
    e.add(e2, r_ids[i], e2t, -1.0);
    if (gform) {
      e.add_he(e2, aux, vertex_row(s.vertices[i]));
    } else {
      e.add_he(Matrix::identity(2 * n), aux, vertex_row(s.vertices[i]));
    }
    prob.constraints.push_back(e.to_constraint("vertex " + std::to_string(i)));
  }
  finish_martingale_problem(prob, r_ids, n);
  return prob;
}

// Candidates of the form R_i = P, S = [0; P] (G = P), with P from Stein
// solves at the vertex average and at each vertex; identity otherwise.
std::vector<double> martingale_warm_start(const LmiProblem& prob, const PolytopicMartingaleSystem& s,
                                          double lambda2, bool gform) {
  const std::size_t n = s.n;
  const std::size_t z = s.vertices.size();
  std::vector<Matrix> candidates;
  auto stein_p = [&](const Matrix& a) -> std::optional<Matrix> {
    const IidSystem single{n, {a}, {1.0}};
    auto c = solve_stein_iid(single, lambda2);
    if (!c) return std::nullopt;
    Matrix p = c->blocks.front().second;
    p *= static_cast<double>(n) / trace(p);
    return p;
  };
  Matrix avg(n, n);
  for (const auto& a : s.vertices) avg.add_block(0, 0, a, 1.0 / static_cast<double>(z));
  if (auto p = stein_p(avg)) candidates.push_back(*p);
  for (const auto& a : s.vertices)
    if (auto p = stein_p(a)) candidates.push_back(*p);
  candidates.push_back(Matrix::identity(n));

  std::vector<double> best;
  double best_t = -std::numeric_limits<double>::infinity();
  for (const auto& p : candidates) {
    std::vector<double> x(prob.num_vars(), 0.0);
    for (std::size_t i = 0; i < z; ++i) prob.layout.store(i, p, x);
    if (gform) {
      prob.layout.store(z, p, x);
    } else {
      Matrix sv(2 * n, n);
      sv.set_block(n, 0, p);
      prob.layout.store(z, sv, x);
    }
    const auto m = constraint_margins(prob, x);
    const double t = *std::min_element(m.begin(), m.end());
    if (t > best_t) {
      best_t = t;
      best = std::move(x);
    }
  }
  return best;
}

FeasResult solve_martingale(const PolytopicMartingaleSystem& s, double lambda2, bool gform,
                            const LmiOptions& opts) {
  check_lambda(lambda2);
  if (auto bad = non_schur_vertex(s, lambda2)) {
    FeasResult r;
    r.status = FeasStatus::Infeasible;
    r.reason = "vertex " + std::to_string(*bad) + " has spectral radius " +
               std::to_string(spectral_radius(s.vertices[*bad])) + " >= lambda2";
    return r;
  }
  const LmiProblem prob = assemble_martingale(s, lambda2, gform);
  FeasResult r = solve_feasibility(prob, martingale_warm_start(prob, s, lambda2, gform), opts);
  if (r.status == FeasStatus::Feasible) {
    // A feasible vertex inequality forces each vertex to be Schur with margin lambda2.
    if (auto bad = non_schur_vertex(s, lambda2)) {
      r.status = FeasStatus::Unknown;
      r.reason = "post-check failed at vertex " + std::to_string(*bad);
    }
  }
  return r;
}

}  // namespace

LmiProblem assemble_svariable(const PolytopicMartingaleSystem& s, double lambda2) {
  return assemble_martingale(s, lambda2, false);
}

LmiProblem assemble_gform(const PolytopicMartingaleSystem& s, double lambda2) {
  return assemble_martingale(s, lambda2, true);
}

FeasResult martingale_vertex_certificate(const PolytopicMartingaleSystem& s, double lambda2,
                                         const LmiOptions& opts) {
  return solve_martingale(s, lambda2, false, opts);
}

FeasResult gform_certificate(const PolytopicMartingaleSystem& s, double lambda2, const LmiOptions& opts) {
  return solve_martingale(s, lambda2, true, opts);
}

}  // namespace mstab
