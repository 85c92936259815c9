#include "mstab/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mstab/moment_operator.hpp"

namespace mstab {

std::string_view to_string(CertificateKind k) {
  switch (k) {
    case CertificateKind::PForm: return "p-form";
    case CertificateKind::RFormCoupled: return "r-form-coupled";
    case CertificateKind::ConstantP: return "constant-p";
    case CertificateKind::SVariable: return "s-variable";
    case CertificateKind::GForm: return "g-form";
  }
  return "unknown";
}

void check_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw std::invalid_argument("lambda must lie in (0, 1)");
  }
}

namespace {

struct FixedPoint {
  std::vector<double> stacked;  // blocks of vec(X_j)
  std::size_t doublings = 0;
};

// Max-norm of b + K x - x.
double fixed_point_residual(const Matrix& k, const std::vector<double>& b, const std::vector<double>& x) {
  const auto kx = k * std::span<const double>(x);
  double r = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) r = std::max(r, std::abs(b[i] + kx[i] - x[i]));
  return r;
}

// Doubling is not backward stable near the boundary; once convergence has
// settled feasibility, re-solve (I - K) x = b by LU with one refinement step
// and keep whichever candidate has the smaller residual.
std::vector<double> polish(const Matrix& k, const std::vector<double>& b, std::vector<double> x) {
  Matrix a = Matrix::identity(k.rows());
  a -= k;
  try {
    std::vector<double> y = solve(a, b);
    const auto ay = a * std::span<const double>(y);
    std::vector<double> r(b.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - ay[i];
    const auto dy = solve(a, r);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += dy[i];
    if (fixed_point_residual(k, b, y) < fixed_point_residual(k, b, x)) return y;
  } catch (const NumericalError&) {
  }
  return x;
}

// Sum_{k>=0} K^k b by doubling: S <- S + M S, M <- M M with M = K^(2^j).
// Returns nullopt on divergence.
std::optional<FixedPoint> smith_doubling(Matrix k, std::vector<double> b, std::size_t n,
                                         const SteinOptions& opts) {
  const std::size_t d = n * n;
  const std::size_t blocks = k.rows() / d;
  auto stacked_trace = [&](const std::vector<double>& v) {
    double t = 0.0;
    for (std::size_t blk = 0; blk < blocks; ++blk)
      for (std::size_t i = 0; i < n; ++i) t += v[blk * d + i * n + i];
    return t;
  };
  auto max_abs_vec = [](const std::vector<double>& v) {
    double r = 0.0;
    for (double e : v) r = std::max(r, std::abs(e));
    return r;
  };

  const Matrix k0 = k;
  std::vector<double> sum = b;
  for (std::size_t j = 0; j < opts.max_doublings; ++j) {
    std::vector<double> inc = k * std::span<const double>(sum);
    const double inc_norm = max_abs_vec(inc);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += inc[i];
    const double sum_norm = max_abs_vec(sum);
    if (!std::isfinite(sum_norm) || std::abs(stacked_trace(sum)) > opts.divergence_trace) {
      return std::nullopt;
    }
    if (inc_norm <= 1e-16 * sum_norm) return FixedPoint{polish(k0, b, std::move(sum)), j + 1};
    k = k * k;
    if (!all_finite(k) || max_abs(k) > 1e150) return std::nullopt;
    if (max_abs(k) == 0.0) return FixedPoint{polish(k0, b, std::move(sum)), j + 1};
  }
  throw NumericalError("Stein iteration neither converged nor diverged within the doubling cap");
}

std::vector<double> stacked_identity(std::size_t n, std::size_t blocks) {
  std::vector<double> b(blocks * n * n, 0.0);
  for (std::size_t blk = 0; blk < blocks; ++blk)
    for (std::size_t i = 0; i < n; ++i) b[blk * n * n + i * n + i] = 1.0;
  return b;
}

std::vector<Matrix> unstack_sym(const std::vector<double>& v, std::size_t n, std::size_t blocks) {
  std::vector<Matrix> out;
  const std::size_t d = n * n;
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const Matrix raw = unvec(std::span<const double>(v).subspan(blk * d, d), n, n);
    out.push_back(SymMatrix::symmetric_part(raw).matrix());
  }
  return out;
}

Matrix congruence(const Matrix& a, const Matrix& p) { return a.transpose() * p * a; }

EigExtremes extremes(const Matrix& m) { return sym_eig_extremes(SymMatrix::symmetric_part(m)); }

Margins margins_of(const std::vector<Matrix>& blocks, const std::vector<Matrix>& residuals) {
  Margins mg{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity()};
  for (const auto& b : blocks) {
    const auto e = extremes(b);
    mg.underline_eps = std::min(mg.underline_eps, e.min_eig);
    mg.overline_eps = std::max(mg.overline_eps, e.max_eig);
  }
  for (const auto& r : residuals) mg.eps = std::min(mg.eps, extremes(r).min_eig);
  return mg;
}

std::string indexed(const char* base, std::size_t i) { return std::string(base) + "[" + std::to_string(i) + "]"; }

// Residuals computed directly from matrix products, independent of the
// lifted operators used by the fixed point.
std::vector<Matrix> residuals_iid(const IidSystem& s, const Matrix& p, double lambda) {
  Matrix r = (lambda * lambda) * p;
  for (std::size_t i = 0; i < s.modes.size(); ++i) r.add_block(0, 0, congruence(s.modes[i], p), -s.probs[i]);
  return {r};
}

std::vector<Matrix> residuals_periodic(const PeriodicIidSystem& s, const std::vector<Matrix>& p,
                                       double lambda) {
  const std::size_t period = s.period();
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < period; ++k) {
    const Matrix& next = p[(k + 1) % period];
    Matrix r = (lambda * lambda) * p[k];
    const auto& st = s.steps[k];
    for (std::size_t i = 0; i < st.modes.size(); ++i) r.add_block(0, 0, congruence(st.modes[i], next), -st.probs[i]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Matrix> residuals_rform(const MarkovJumpSystem& s, const std::vector<Matrix>& r,
                                    double lambda) {
  const std::size_t m = s.modes.size();
  std::vector<Matrix> out;
  for (std::size_t j = 0; j < m; ++j) {
    Matrix mix(s.n, s.n);
    for (std::size_t i = 0; i < m; ++i) mix.add_block(0, 0, r[i], s.transition(j, i));
    out.push_back((lambda * lambda) * r[j] - congruence(s.modes[j], mix));
  }
  return out;
}

std::vector<Matrix> residuals_pform_markov(const MarkovJumpSystem& s, const std::vector<Matrix>& p,
                                           double lambda) {
  const std::size_t m = s.modes.size();
  std::vector<Matrix> out;
  for (std::size_t j = 0; j < m; ++j) {
    Matrix r = (lambda * lambda) * p[j];
    for (std::size_t i = 0; i < m; ++i) r.add_block(0, 0, congruence(s.modes[i], p[i]), -s.transition(j, i));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Matrix> residuals_constant_markov(const MarkovJumpSystem& s, const Matrix& p,
                                              double lambda) {
  return residuals_pform_markov(s, std::vector<Matrix>(s.modes.size(), p), lambda);
}

std::optional<StabilityCertificate> finish(CertificateKind kind, double lambda,
                                           std::vector<std::pair<std::string, Matrix>> named,
                                           const std::vector<Matrix>& residuals,
                                           std::size_t iterations) {
  std::vector<Matrix> blocks;
  for (const auto& [name, b] : named) blocks.push_back(b);
  const Margins mg = margins_of(blocks, residuals);
  if (!(mg.underline_eps > 0.0) || !(mg.eps > 0.0)) return std::nullopt;
  return StabilityCertificate{kind, lambda, std::move(named), mg, iterations};
}

Matrix adjoint_kron(const Matrix& a) {
  const Matrix at = a.transpose();
  return kron(at, at);
}

}  // namespace

std::optional<StabilityCertificate> solve_stein_iid(const IidSystem& s, double lambda,
                                                    const SteinOptions& opts) {
  check_lambda(lambda);
  const std::size_t n = s.n;
  Matrix k(n * n, n * n);
  for (std::size_t i = 0; i < s.modes.size(); ++i) {
    k.add_block(0, 0, adjoint_kron(s.modes[i]), s.probs[i] / (lambda * lambda));
  }
  const auto fp = smith_doubling(std::move(k), stacked_identity(n, 1), n, opts);
  if (!fp) return std::nullopt;
  const Matrix p = unstack_sym(fp->stacked, n, 1).front();
  return finish(CertificateKind::PForm, lambda, {{"P", p}}, residuals_iid(s, p, lambda), fp->doublings);
}

std::optional<StabilityCertificate> solve_stein_iid(const PeriodicIidSystem& s, double lambda,
                                                    const SteinOptions& opts) {
  check_lambda(lambda);
  const std::size_t n = s.n;
  const std::size_t d = n * n;
  const std::size_t period = s.period();
  // P_k <- I + l^-2 E[A_k^T P_{k+1} A_k]
  Matrix k(period * d, period * d);
  for (std::size_t ph = 0; ph < period; ++ph) {
    const auto& st = s.steps[ph];
    const std::size_t next = (ph + 1) % period;
    for (std::size_t i = 0; i < st.modes.size(); ++i) {
      k.add_block(ph * d, next * d, adjoint_kron(st.modes[i]), st.probs[i] / (lambda * lambda));
    }
  }
  const auto fp = smith_doubling(std::move(k), stacked_identity(n, period), n, opts);
  if (!fp) return std::nullopt;
  auto ps = unstack_sym(fp->stacked, n, period);
  std::vector<std::pair<std::string, Matrix>> named;
  for (std::size_t ph = 0; ph < period; ++ph) named.emplace_back(indexed("P", ph), ps[ph]);
  return finish(CertificateKind::PForm, lambda, std::move(named), residuals_periodic(s, ps, lambda),
                fp->doublings);
}

std::optional<StabilityCertificate> solve_stein_iid(const SystemModel& s, double lambda,
                                                    const SteinOptions& opts) {
  if (const auto* p = std::get_if<IidSystem>(&s)) return solve_stein_iid(*p, lambda, opts);
  if (const auto* p = std::get_if<PeriodicIidSystem>(&s)) return solve_stein_iid(*p, lambda, opts);
  throw std::invalid_argument("stein method requires an iid or periodic_iid model, got " +
                              std::string(type_tag(s)));
}

std::optional<StabilityCertificate> solve_coupled_markov(const MarkovJumpSystem& s, double lambda,
                                                         const SteinOptions& opts) {
  check_lambda(lambda);
  const std::size_t n = s.n;
  const std::size_t d = n * n;
  const std::size_t m = s.modes.size();
  // R_j <- I + l^-2 A_j^T (sum_i Pi(j,i) R_i) A_j
  Matrix k(m * d, m * d);
  for (std::size_t j = 0; j < m; ++j) {
    const Matrix kj = adjoint_kron(s.modes[j]);
    for (std::size_t i = 0; i < m; ++i) {
      if (s.transition(j, i) != 0.0) k.add_block(j * d, i * d, kj, s.transition(j, i) / (lambda * lambda));
    }
  }
  const auto fp = smith_doubling(std::move(k), stacked_identity(n, m), n, opts);
  if (!fp) return std::nullopt;
  auto rs = unstack_sym(fp->stacked, n, m);
  std::vector<std::pair<std::string, Matrix>> named;
  for (std::size_t j = 0; j < m; ++j) named.emplace_back(indexed("R", j), rs[j]);
  return finish(CertificateKind::RFormCoupled, lambda, std::move(named),
                residuals_rform(s, rs, lambda), fp->doublings);
}

std::optional<StabilityCertificate> solve_pform_markov(const MarkovJumpSystem& s, double lambda,
                                                       const SteinOptions& opts) {
  check_lambda(lambda);
  const std::size_t n = s.n;
  const std::size_t d = n * n;
  const std::size_t m = s.modes.size();
  // P_j <- I + l^-2 sum_i Pi(j,i) A_i^T P_i A_i
  Matrix k(m * d, m * d);
  for (std::size_t i = 0; i < m; ++i) {
    const Matrix ki = adjoint_kron(s.modes[i]);
    for (std::size_t j = 0; j < m; ++j) {
      if (s.transition(j, i) != 0.0) k.add_block(j * d, i * d, ki, s.transition(j, i) / (lambda * lambda));
    }
  }
  const auto fp = smith_doubling(std::move(k), stacked_identity(n, m), n, opts);
  if (!fp) return std::nullopt;
  auto ps = unstack_sym(fp->stacked, n, m);
  std::vector<std::pair<std::string, Matrix>> named;
  for (std::size_t j = 0; j < m; ++j) named.emplace_back(indexed("P", j), ps[j]);
  return finish(CertificateKind::PForm, lambda, std::move(named),
                residuals_pform_markov(s, ps, lambda), fp->doublings);
}

std::optional<StabilityCertificate> solve_exponential(const SystemModel& s, double lambda,
                                                      const SteinOptions& opts) {
  if (const auto* p = std::get_if<MarkovJumpSystem>(&s)) return solve_coupled_markov(*p, lambda, opts);
  if (std::holds_alternative<PolytopicMartingaleSystem>(s)) {
    throw std::invalid_argument(
        "no exact Lyapunov solver for polytopic_martingale; use the s-variable or g-form certificate");
  }
  return solve_stein_iid(s, lambda, opts);
}

namespace {

std::vector<Matrix> block_values(const StabilityCertificate& c, const char* prefix) {
  std::vector<Matrix> out;
  const std::string pre(prefix);
  for (const auto& [name, b] : c.blocks) {
    if (name.rfind(pre, 0) == 0) out.push_back(b);
  }
  return out;
}

const Matrix& named_block(const StabilityCertificate& c, const std::string& name) {
  for (const auto& [nm, b] : c.blocks)
    if (nm == name) return b;
  throw std::invalid_argument("certificate has no block " + name);
}

std::vector<Matrix> martingale_residuals(const PolytopicMartingaleSystem& s,
                                         const std::vector<Matrix>& r, const Matrix& sv,
                                         double lambda) {
  const std::size_t n = s.n;
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < s.vertices.size(); ++i) {
    Matrix lhs(2 * n, 2 * n);
    lhs.set_block(0, 0, (lambda * lambda) * r[i]);
    lhs.set_block(n, n, -1.0 * r[i]);
    Matrix av(n, 2 * n);
    av.set_block(0, 0, s.vertices[i]);
    av.set_block(0, n, Matrix::identity(n));
    lhs += he(sv * av).matrix();
    out.push_back(std::move(lhs));
  }
  return out;
}

}  // namespace

Margins recheck_certificate(const SystemModel& s, const StabilityCertificate& c) {
  const double l = c.lambda;
  switch (c.kind) {
    case CertificateKind::PForm: {
      if (const auto* p = std::get_if<IidSystem>(&s)) {
        const Matrix& pm = named_block(c, "P");
        return margins_of({pm}, residuals_iid(*p, pm, l));
      }
      if (const auto* p = std::get_if<PeriodicIidSystem>(&s)) {
        auto ps = block_values(c, "P[");
        return margins_of(ps, residuals_periodic(*p, ps, l));
      }
      if (const auto* p = std::get_if<MarkovJumpSystem>(&s)) {
        auto ps = block_values(c, "P[");
        return margins_of(ps, residuals_pform_markov(*p, ps, l));
      }
      break;
    }
    case CertificateKind::RFormCoupled: {
      if (const auto* p = std::get_if<MarkovJumpSystem>(&s)) {
        auto rs = block_values(c, "R[");
        return margins_of(rs, residuals_rform(*p, rs, l));
      }
      if (const auto* p = std::get_if<IidSystem>(&s)) {
        auto rs = block_values(c, "R[");
        const auto mj = embed_iid_as_markov(*p);
        return margins_of(rs, residuals_rform(mj, rs, l));
      }
      break;
    }
    case CertificateKind::ConstantP: {
      const Matrix& p0 = named_block(c, "P0");
      if (const auto* p = std::get_if<IidSystem>(&s)) return margins_of({p0}, residuals_iid(*p, p0, l));
      if (const auto* p = std::get_if<PeriodicIidSystem>(&s)) {
        return margins_of({p0}, residuals_periodic(*p, std::vector<Matrix>(p->period(), p0), l));
      }
      if (const auto* p = std::get_if<MarkovJumpSystem>(&s)) {
        return margins_of({p0}, residuals_constant_markov(*p, p0, l));
      }
      break;
    }
    case CertificateKind::SVariable:
    case CertificateKind::GForm: {
      const auto* p = std::get_if<PolytopicMartingaleSystem>(&s);
      if (p == nullptr) break;
      auto rs = block_values(c, "R[");
      Matrix sv(2 * p->n, p->n);
      if (c.kind == CertificateKind::SVariable) {
        sv = named_block(c, "S");
      } else {
        sv.set_block(p->n, 0, named_block(c, "G"));
      }
      return margins_of(rs, martingale_residuals(*p, rs, sv, l));
    }
  }
  throw std::invalid_argument("certificate kind " + std::string(to_string(c.kind)) +
                              " does not apply to a " + std::string(type_tag(s)) + " model");
}

RateBracket lambda_min(const SystemModel& s, double tol, const SteinOptions& opts) {
  if (!(tol > 0.0)) throw std::invalid_argument("lambda_min: tol must be positive");
  const double rate = std::sqrt(per_step_radius(s));
  RateBracket out;
  out.operator_rate = rate;
  const double top = 1.0 - 1e-9;
  ++out.evaluations;
  if (!solve_exponential(s, top, opts)) {
    out.cross_check_ok = rate >= top - 1e-7;
    return out;
  }
  out.exponentially_stable = true;
  double lo = 0.0;
  double hi = top;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    ++out.evaluations;
    if (solve_exponential(s, mid, opts)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  out.lo = lo;
  out.hi = hi;
  out.cross_check_ok = std::abs(hi - rate) <= tol + 1e-7;
  return out;
}

LmiProblem assemble_constant_p(const SystemModel& s, double lambda) {
  check_lambda(lambda);
  const std::size_t n = state_dim(s);
  LmiProblem prob;
  const std::size_t p0 = prob.layout.add_symmetric("P0", n);
  const Matrix eye = Matrix::identity(n);
  const double l2 = lambda * lambda;

  prob.constraints.push_back(AffineExpr(prob.layout, n).add(eye, p0, eye).to_constraint("P0 > 0"));

  // Each constraint: l^2 P0 - sum_i w_i A_i^T P0 A_i
  auto push = [&](const std::vector<Matrix>& modes, const std::vector<double>& w, std::string name) {
    AffineExpr e(prob.layout, n);
    e.add(eye, p0, eye, l2);
    for (std::size_t i = 0; i < modes.size(); ++i) {
      if (w[i] != 0.0) e.add(modes[i].transpose(), p0, modes[i], -w[i]);
    }
    prob.constraints.push_back(e.to_constraint(std::move(name)));
  };
  if (const auto* p = std::get_if<IidSystem>(&s)) {
    push(p->modes, p->probs, "decrease");
  } else if (const auto* p = std::get_if<PeriodicIidSystem>(&s)) {
    for (std::size_t k = 0; k < p->period(); ++k) push(p->steps[k].modes, p->steps[k].probs, "decrease phase " + std::to_string(k));
  } else if (const auto* p = std::get_if<MarkovJumpSystem>(&s)) {
    for (std::size_t j = 0; j < p->modes.size(); ++j) {
      std::vector<double> w(p->modes.size());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = p->transition(j, i);
      push(p->modes, w, "decrease from mode " + std::to_string(j));
    }
  } else {
    throw std::invalid_argument("constant-p check requires an iid, periodic_iid or markov model");
  }

  // trace P0 = n: the identity's slot pattern selects the diagonal entries.
  prob.normalization.coeffs.assign(prob.num_vars(), 0.0);
  prob.layout.store(p0, eye, prob.normalization.coeffs);
  prob.normalization.rhs = static_cast<double>(n);
  return prob;
}

std::optional<StabilityCertificate> check_quadratic(const SystemModel& s, double lambda,
                                                    const LmiOptions& opts) {
  check_lambda(lambda);
  if (const auto* p = std::get_if<IidSystem>(&s)) {
    auto c = solve_stein_iid(*p, lambda);
    if (!c) return std::nullopt;
    c->kind = CertificateKind::ConstantP;
    c->blocks.front().first = "P0";
    return c;
  }
  const LmiProblem prob = assemble_constant_p(s, lambda);
  const std::size_t n = state_dim(s);

  // Warm starts: identity, and the averaged P-form blocks when they exist.
  std::vector<std::vector<double>> starts;
  {
    std::vector<double> x(prob.num_vars(), 0.0);
    prob.layout.store(0, Matrix::identity(n), x);
    starts.push_back(std::move(x));
  }
  std::optional<StabilityCertificate> pform;
  if (const auto* p = std::get_if<MarkovJumpSystem>(&s)) {
    pform = solve_pform_markov(*p, lambda);
  } else {
    pform = solve_stein_iid(s, lambda);
  }
  if (pform) {
    Matrix avg(n, n);
    for (const auto& [name, b] : pform->blocks) avg += b;
    avg *= static_cast<double>(n) / trace(avg);
    std::vector<double> x(prob.num_vars(), 0.0);
    prob.layout.store(0, avg, x);
    starts.push_back(std::move(x));
  }

  FeasResult best;
  for (auto& x0 : starts) {
    FeasResult r = solve_feasibility(prob, x0, opts);
    if (r.t_star > best.t_star) best = std::move(r);
    if (best.status == FeasStatus::Feasible) break;
  }
  if (best.status != FeasStatus::Feasible) return std::nullopt;
  return certificate_from_lmi(prob, best, CertificateKind::ConstantP, lambda);
}

StabilityCertificate certificate_from_lmi(const LmiProblem& p, const FeasResult& r,
                                          CertificateKind kind, double lambda) {
  StabilityCertificate c;
  c.kind = kind;
  c.lambda = lambda;
  c.iterations = r.iterations;
  std::vector<Matrix> lyap;
  for (std::size_t b = 0; b < p.layout.blocks().size(); ++b) {
    const auto& blk = p.layout.block(b);
    Matrix v = p.layout.value(b, r.assignment);
    if (blk.symmetric) lyap.push_back(v);
    c.blocks.emplace_back(blk.name, std::move(v));
  }
  const auto margins = constraint_margins(p, r.assignment);
  Margins mg{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity()};
  for (const auto& b : lyap) {
    const auto e = extremes(b);
    mg.underline_eps = std::min(mg.underline_eps, e.min_eig);
    mg.overline_eps = std::max(mg.overline_eps, e.max_eig);
  }
  for (double t : margins) mg.eps = std::min(mg.eps, t);
  c.margins = mg;
  return c;
}

}  // namespace mstab
