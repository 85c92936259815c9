// Acceptance runner: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion ...]   (no arguments runs all ten)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "mstab/lmi_solver.hpp"
#include "mstab/lyapunov.hpp"
#include "mstab/moment_operator.hpp"
#include "mstab/simulate.hpp"
#include "support.hpp"

using namespace mstab;
using testsupport::Rng;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr double kBand = 1e-7;

// Per-step squared rate of a lift-class model.
double rate_of(const SystemModel& s) { return per_step_radius(s); }

// Random finite-support model of a given class, rescaled so its per-step
// second-moment rate equals target.
SystemModel random_lift_model(Rng& r, int cls, double target) {
  const std::size_t n = r.index(1, 3);
  SystemModel s;
  if (cls == 0) {
    s = testsupport::random_iid(r, n, r.index(1, 4));
  } else if (cls == 1) {
    s = testsupport::random_markov(r, n, r.index(1, 3));
  } else {
    s = testsupport::random_periodic(r, n, r.index(1, 3), 3);
  }
  const double rate = rate_of(s);
  if (rate <= 1e-300) return s;
  return testsupport::scaled(s, std::sqrt(target / rate));
}

std::optional<StabilityCertificate> class_solver(const SystemModel& s, double lambda) {
  if (const auto* m = std::get_if<MarkovJumpSystem>(&s)) return solve_coupled_markov(*m, lambda);
  return solve_stein_iid(s, lambda);
}

// 16 uniform points plus four straddling the threshold.
std::vector<double> lambda_grid(double rate) {
  std::vector<double> g;
  for (int i = 0; i < 16; ++i) g.push_back((i + 0.5) / 16.0);
  for (double d : {-1e-4, -2e-7, 2e-7, 1e-4}) {
    const double l2 = rate + d;
    if (l2 > 0.0 && l2 < 1.0) g.push_back(std::sqrt(l2));
  }
  return g;
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  Rng r(1001);
  std::size_t checked = 0, skipped = 0, wrong = 0, unsound = 0;
  for (int sys = 0; sys < 500; ++sys) {
    const SystemModel s = random_lift_model(r, sys % 3, r.uniform(0.005, 1.2));
    const double rate = rate_of(s);
    for (double lambda : lambda_grid(rate)) {
      const double l2 = lambda * lambda;
      if (std::abs(rate - l2) <= kBand) {
        ++skipped;
        continue;
      }
      const auto c = class_solver(s, lambda);
      ++checked;
      if (c.has_value() != (rate < l2)) {
        ++wrong;
        if (std::getenv("MSTAB_ACCEPTANCE_VERBOSE")) {
          std::cerr << "  disagreement: " << type_tag(s) << " rate " << rate << " lambda^2 " << l2 << " solver "
                    << c.has_value() << '\n'
                    << serialize_system(s) << '\n';
        }
      }
      if (c) {
        const auto m = recheck_certificate(s, *c);
        if (!(m.eps > 0.0 && m.underline_eps > 0.0)) ++unsound;
      }
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << checked << " decisions, " << wrong << " disagreements, " << unsound << " unsound certificates, " << skipped
    << " in band, " << secs << " s";
  return {wrong == 0 && unsound == 0 && secs <= 60.0 && checked >= 500 * 16, d.str()};
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  Rng r(1002);
  int bad = 0, count = 0;
  double worst_width = 0.0;
  while (count < 100) {
    const SystemModel s = random_lift_model(r, count % 3, r.uniform(0.01, 0.98));
    const double target = std::sqrt(rate_of(s));
    const auto b = lambda_min(s, 1e-6);
    worst_width = std::max(worst_width, b.hi - b.lo);
    if (!b.exponentially_stable || b.hi - b.lo > 1e-6 || !(b.lo <= target && target <= b.hi)) ++bad;
    ++count;
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << count << " systems, " << bad << " brackets missing sqrt(rho), max width " << worst_width << ", " << secs
    << " s";
  return {bad == 0 && secs <= 30.0, d.str()};
}

Outcome criterion3() {
  Rng r(1003);
  int bad_rho = 0, bad_bracket = 0;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const SystemModel s = random_lift_model(r, 0, r.uniform(0.01, 1.2));
    const SystemModel e = embed_iid_as_markov(s);
    const double d = std::abs(second_moment_radius(s) - second_moment_radius(e));
    worst = std::max(worst, d);
    if (d > 1e-9) ++bad_rho;
    const auto a = lambda_min(s);
    const auto b = lambda_min(e);
    if (std::max(a.lo, b.lo) > std::min(a.hi, b.hi) || a.exponentially_stable != b.exponentially_stable)
      ++bad_bracket;
  }
  std::ostringstream d;
  d << "max |rho diff| " << worst << ", " << bad_rho << " radius mismatches, " << bad_bracket
    << " disjoint brackets";
  return {bad_rho == 0 && bad_bracket == 0, d.str()};
}

Outcome criterion4() {
  Rng r(1004);
  std::size_t checked = 0, wrong = 0;
  for (int sys = 0; sys < 200; ++sys) {
    const SystemModel s = random_lift_model(r, sys % 2, r.uniform(0.005, 1.2));
    const double rate = rate_of(s);
    const MarkovJumpSystem mj =
        std::holds_alternative<IidSystem>(s) ? embed_iid_as_markov(s) : std::get<MarkovJumpSystem>(s);
    for (double lambda : lambda_grid(rate)) {
      if (std::abs(rate - lambda * lambda) <= kBand) continue;
      const bool p_form = std::holds_alternative<IidSystem>(s) ? solve_stein_iid(s, lambda).has_value()
                                                               : solve_pform_markov(mj, lambda).has_value();
      const bool r_form = solve_coupled_markov(mj, lambda).has_value();
      ++checked;
      if (p_form != r_form) ++wrong;
    }
  }
  std::ostringstream d;
  d << checked << " paired decisions, " << wrong << " disagreements";
  return {wrong == 0, d.str()};
}

Outcome criterion5() {
  const auto mj = make_markov({Matrix::from_rows({{0, 2}, {0, 0}}), Matrix::from_rows({{0, 0}, {2, 0}})},
                              Matrix::identity(2));
  const bool exp_ok = solve_coupled_markov(mj, 0.9).has_value();
  const bool quad_absent = !check_quadratic(mj, 0.9).has_value();

  Rng r(1005);
  int mismatches = 0, compared = 0;
  for (int t = 0; t < 100; ++t) {
    const SystemModel s = random_lift_model(r, 0, r.uniform(0.05, 1.1));
    const double lambda = r.uniform(0.2, 0.99);
    if (std::abs(rate_of(s) - lambda * lambda) <= kBand) continue;
    ++compared;
    if (check_quadratic(s, lambda).has_value() != solve_stein_iid(s, lambda).has_value()) ++mismatches;
  }
  std::ostringstream d;
  d << "nilpotent chain: exponential " << (exp_ok ? "certified" : "NOT certified") << ", constant-P "
    << (quad_absent ? "absent" : "PRESENT") << "; iid quadratic vs Stein: " << mismatches << "/" << compared
    << " mismatches";
  return {exp_ok && quad_absent && mismatches == 0 && compared >= 95, d.str()};
}

// Symmetric square root and its inverse.
std::pair<Matrix, Matrix> sqrt_pair(const Matrix& p) {
  const auto e = sym_eigen(SymMatrix::symmetric_part(p));
  std::vector<double> s, si;
  for (double v : e.values) {
    s.push_back(std::sqrt(v));
    si.push_back(1.0 / std::sqrt(v));
  }
  const Matrix& v = e.vectors;
  return {v * Matrix::diagonal(s) * v.transpose(), v * Matrix::diagonal(si) * v.transpose()};
}

double oracle_margin(const LmiProblem& p, const std::vector<double>& x) {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& c : p.constraints) {
    Matrix f = c.constant.matrix();
    for (const auto& [u, coeff] : c.terms) f += x[u] * coeff.matrix();
    worst = std::min(worst, testsupport::min_eig_bisect(f));
  }
  return worst;
}

Outcome criterion6() {
  Rng r(1006);
  int sv_feasible = 0, margin_bad = 0, vertex_bad = 0, mc_bad = 0, order_bad = 0;
  double worst_excess = -1.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = r.index(2, 3);
    const std::size_t z = r.index(2, 3);
    const double l2 = r.uniform(0.6, 0.95);
    const double shrink = r.uniform(0.5, 0.9);
    const Matrix g = testsupport::random_matrix(r, n, n);
    const Matrix p = g * g.transpose() + 0.3 * Matrix::identity(n);
    const auto [ph, phi] = sqrt_pair(p);
    std::vector<Matrix> verts;
    for (std::size_t i = 0; i < z; ++i) verts.push_back(shrink * l2 * (phi * testsupport::random_orthogonal(r, n) * ph));
    const auto s = make_polytopic_martingale(verts, r.uniform(0.1, 0.9));

    const auto sv = martingale_vertex_certificate(s, l2);
    const auto gf = gform_certificate(s, l2);
    if (gf.status == FeasStatus::Feasible && sv.status != FeasStatus::Feasible) ++order_bad;
    if (sv.status != FeasStatus::Feasible) continue;
    ++sv_feasible;
    if (oracle_margin(assemble_svariable(s, l2), sv.assignment) < 1e-7) ++margin_bad;
    for (const auto& a : verts)
      if (!(spectral_radius(a) < l2)) ++vertex_bad;

    SimParams sp;
    sp.paths = 10000;
    sp.horizon = 40;
    sp.master_seed = 600 + static_cast<std::uint64_t>(t);
    sp.initial.x0.assign(n, 1.0);
    const auto fit = estimate_decay_rate(estimate_second_moment(s, sp));
    const double excess = fit.lambda_hat - (l2 + 3.0 * fit.half_width());
    worst_excess = std::max(worst_excess, excess);
    if (excess > 0.0) ++mc_bad;
  }
  std::ostringstream d;
  d << sv_feasible << "/20 S-variable feasible, " << margin_bad << " low margins, " << vertex_bad
    << " non-Schur vertices, " << mc_bad << " fitted rates above bound (worst excess " << worst_excess << "), "
    << order_bad << " G-form/S-variable order violations";
  return {sv_feasible == 20 && margin_bad == 0 && vertex_bad == 0 && mc_bad == 0 && order_bad == 0, d.str()};
}

Outcome criterion7() {
  Rng r(1007);
  int bad_points = 0;
  double worst_z = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = r.index(1, 3);
    const std::size_t z = r.index(1, 4);
    const int cls = t % 4;
    SystemModel s;
    std::vector<double> prior;
    InitialCondition ic;
    if (cls == 0) {
      s = testsupport::random_iid(r, n, z);
    } else if (cls == 1) {
      s = testsupport::random_markov(r, n, z);
      prior = testsupport::random_probs(r, z);
      ic.previous_mode_distribution = prior;
    } else if (cls == 2) {
      s = testsupport::random_periodic(r, n, r.index(1, 3), z);
      ic.phase = r.index(0, std::get<PeriodicIidSystem>(s).period() - 1);
    } else {
      std::vector<Matrix> v;
      for (std::size_t i = 0; i < z; ++i) v.push_back(testsupport::random_matrix(r, n, n));
      s = make_polytopic_martingale(v, r.uniform(0.1, 1.0));
      prior = testsupport::random_probs(r, z);
      ic.simplex_point = prior;
    }
    for (std::size_t i = 0; i < n; ++i) ic.x0.push_back(r.uniform(-1.0, 1.0));
    SimParams sp;
    sp.paths = 10000;
    sp.horizon = 6;
    sp.master_seed = 700 + static_cast<std::uint64_t>(t);
    sp.initial = ic;
    const auto c = estimate_second_moment(s, sp);
    const auto exact = testsupport::enumerate_second_moment(s, ic.x0, 6, prior, ic.phase);
    for (std::size_t k = 0; k <= 6; ++k) {
      const double diff = std::abs(c.values[k] - exact[k]);
      const double tol = 4.0 * c.std_errors[k] + 1e-12 * std::max(1.0, exact[k]);
      if (c.std_errors[k] > 0.0) worst_z = std::max(worst_z, diff / c.std_errors[k]);
      if (diff > tol) ++bad_points;
    }
  }
  std::ostringstream d;
  d << "50 systems x 7 steps, " << bad_points << " points beyond 4 SE, worst |z| " << worst_z;
  return {bad_points == 0, d.str()};
}

std::vector<double> dirichlet(Rng& r, std::size_t z) {
  std::vector<double> v(z);
  double s = 0.0;
  for (double& x : v) s += (x = -std::log(1.0 - r.uniform()));
  for (double& x : v) x /= s;
  return v;
}

Outcome criterion8() {
  Rng r(1008);
  const std::size_t total_steps = 1000000;
  double worst_closure = 0.0;
  bool negative = false;
  // bins on the first coordinate: sums of (xi'_1 - xi_1)
  const int bins = 10;
  std::vector<double> s1(bins, 0.0), s2(bins, 0.0);
  std::vector<std::size_t> cnt(bins, 0);
  std::size_t steps = 0;
  while (steps < total_steps) {
    const std::size_t z = r.index(2, 4);
    const double gamma = r.uniform(0.05, 1.0);
    auto xi = dirichlet(r, z);
    for (int k = 0; k < 50 && steps < total_steps; ++k, ++steps) {
      const auto next = simplex_martingale_step(xi, gamma, r.uniform());
      double sum = 0.0;
      for (double v : next) {
        if (v < 0.0) negative = true;
        sum += v;
      }
      worst_closure = std::max(worst_closure, std::abs(sum - 1.0));
      const int b = std::min(bins - 1, static_cast<int>(xi[0] * bins));
      const double d = next[0] - xi[0];
      s1[b] += d;
      s2[b] += d * d;
      ++cnt[b];
      xi = next;
    }
  }
  int bins_bad = 0;
  double worst_z = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (cnt[b] < 2) continue;
    const double nb = static_cast<double>(cnt[b]);
    const double mean = s1[b] / nb;
    const double var = std::max(0.0, (s2[b] - nb * mean * mean) / (nb - 1.0));
    const double se = std::sqrt(var / nb);
    if (se > 0.0) worst_z = std::max(worst_z, std::abs(mean) / se);
    if (std::abs(mean) > 3.0 * se) ++bins_bad;
  }
  bool absorbed = true;
  for (std::size_t z = 1; z <= 5; ++z) {
    for (std::size_t j = 0; j < z; ++j) {
      std::vector<double> e(z, 0.0);
      e[j] = 1.0;
      for (int k = 0; k < 200; ++k) {
        if (simplex_martingale_step(e, r.uniform(0.01, 1.0), r.uniform()) != e) absorbed = false;
      }
    }
  }
  std::ostringstream d;
  d << total_steps << " steps, max |sum-1| " << worst_closure << (negative ? ", NEGATIVE entry" : "") << ", "
    << bins_bad << " bins beyond 3 SE (worst |z| " << worst_z << "), vertex absorption "
    << (absorbed ? "exact" : "BROKEN");
  return {worst_closure <= 1e-12 && !negative && bins_bad == 0 && absorbed, d.str()};
}

std::string run_cli(const std::string& threads, const std::string& out_file) {
  std::string cmd;
  if (!threads.empty()) cmd = "MOMENT_STAB_THREADS=" + threads + " ";
  cmd += std::string("\"") + MSTAB_CLI_PATH + "\" --format json simulate \"" + MSTAB_TEST_DATA +
         "/markov_two_modes.json\" --paths 10000 --horizon 40 --seed 7 --fit > \"" + out_file + "\"";
  const int rc = std::system(cmd.c_str());
  std::ifstream in(out_file, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return "rc=" + std::to_string(rc) + "\n" + ss.str();
}

Outcome criterion9() {
  const std::string base = std::string(MSTAB_BINARY_DIR) + "/acceptance_c9_";
  const auto a = run_cli("", base + "a.json");
  const auto b = run_cli("", base + "b.json");
  const auto t1 = run_cli("1", base + "t1.json");
  const auto t4 = run_cli("4", base + "t4.json");
  const bool nonempty = a.find("\"schema\": \"moment-stab/1\"") != std::string::npos;
  std::ostringstream d;
  d << "run-twice " << (a == b ? "identical" : "DIFFERENT") << ", threads 1 vs 4 " << (t1 == t4 ? "identical" : "DIFFERENT")
    << ", default vs 1 " << (a == t1 ? "identical" : "DIFFERENT") << ", " << a.size() << " bytes";
  return {nonempty && a == b && t1 == t4 && a == t1, d.str()};
}

Outcome criterion10() {
  Rng r(1010);
  int fails_mixed = 0, fails_vec = 0, fails_rho = 0, fails_jac = 0;
  double w_mixed = 0, w_vec = 0, w_rho = 0, w_tr = 0, w_det = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t p = r.index(1, 3), q = r.index(1, 3), u = r.index(1, 3), v = r.index(1, 3), w = r.index(1, 3),
                      x = r.index(1, 3);
    const Matrix a = testsupport::random_matrix(r, p, q), b = testsupport::random_matrix(r, u, v);
    const Matrix c = testsupport::random_matrix(r, q, w), d = testsupport::random_matrix(r, v, x);
    const double e = max_abs(kron(a, b) * kron(c, d) - kron(a * c, b * d));
    w_mixed = std::max(w_mixed, e);
    if (e > 1e-12) ++fails_mixed;
  }
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = r.index(1, 4);
    const Matrix a = testsupport::random_matrix(r, n, n);
    const Matrix xs = testsupport::random_symmetric(r, n);
    const auto lhs = vec(a * xs * a.transpose());
    const auto rhs = kron(a, a) * std::span<const double>(vec(xs));
    double e = 0.0;
    for (std::size_t i = 0; i < lhs.size(); ++i) e = std::max(e, std::abs(lhs[i] - rhs[i]));
    w_vec = std::max(w_vec, e);
    if (e > 1e-12) ++fails_vec;
  }
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = r.index(1, 4);
    const Matrix a = testsupport::random_matrix(r, n, n);
    const double ra = spectral_radius(a);
    const double e = std::abs(spectral_radius(kron(a, a)) - ra * ra);
    w_rho = std::max(w_rho, e);
    if (e > 1e-8) ++fails_rho;
  }
  for (int t = 0; t < 1000; ++t) {
    const Matrix s = testsupport::random_symmetric(r, 6);
    const auto eig = sym_eigen(SymMatrix::from_matrix(s));
    double sum = 0.0, prod = 1.0;
    for (double ev : eig.values) {
      sum += ev;
      prod *= ev;
    }
    const double et = std::abs(sum - trace(s));
    const double ed = std::abs(prod - testsupport::det(s));
    w_tr = std::max(w_tr, et);
    w_det = std::max(w_det, ed);
    if (et > 1e-9 || ed > 1e-9) ++fails_jac;
  }
  std::ostringstream d;
  d << "worst errors: mixed-product " << w_mixed << ", vec " << w_vec << ", rho(kron) " << w_rho << ", trace " << w_tr
    << ", det " << w_det << "; failures " << fails_mixed << "/" << fails_vec << "/" << fails_rho << "/" << fails_jac;
  return {fails_mixed + fails_vec + fails_rho + fails_jac == 0, d.str()};
}

const std::map<int, std::pair<std::string, std::function<Outcome()>>>& registry() {
  static const std::map<int, std::pair<std::string, std::function<Outcome()>>> r = {
      {1, {"Lyapunov feasibility matches the spectral oracle", criterion1}},
      {2, {"rate bisection brackets sqrt(rho)", criterion2}},
      {3, {"iid model and its Markov embedding agree", criterion3}},
      {4, {"P-form and R-form decisions agree", criterion4}},
      {5, {"quadratic vs exponential gap; iid equivalence", criterion5}},
      {6, {"polytopic martingale soundness chain", criterion6}},
      {7, {"Monte Carlo vs exact enumeration", criterion7}},
      {8, {"martingale sampler validity", criterion8}},
      {9, {"simulate JSON is deterministic across runs and workers", criterion9}},
      {10, {"numerical kernel identities", criterion10}},
  };
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (const auto& [k, v] : registry()) which.push_back(k);
  int failed = 0;
  for (int k : which) {
    const auto it = registry().find(k);
    if (it == registry().end()) {
      std::cerr << "unknown criterion " << k << '\n';
      return 2;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << " | " << it->second.first << " | "
              << o.detail << std::endl;
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
