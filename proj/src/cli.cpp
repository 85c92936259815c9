#include "mstab/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mstab/lmi_solver.hpp"
#include "mstab/lyapunov.hpp"
#include "mstab/moment_operator.hpp"
#include "mstab/simulate.hpp"
#include "mstab/system_model.hpp"

namespace mstab::cli {

namespace {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

constexpr double kBoundaryBand = 1e-7;

/// Input problems that map to exit status 3.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::string file;
  std::string format = "text";
  bool emit_certificate = false;
  double tol = 1e-6;
  std::optional<double> lambda;
  std::string method;
  std::size_t paths = 0;
  std::size_t horizon = 0;
  std::uint64_t seed = 0;
  std::string x0;
  std::string prior;
  bool fit = false;
};

SystemModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_system(ss.str());
  } catch (const ModelError& e) {
    throw InputError(path + ": " + e.what());
  }
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw InputError(std::string("invalid number in ") + what + ": '" + item + "'");
    }
  }
  if (out.empty()) throw InputError(std::string(what) + " is empty");
  return out;
}

ordered matrix_json(const Matrix& m) {
  ordered rows = ordered::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    ordered row = ordered::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

ordered model_summary(const SystemModel& s) {
  ordered m;
  m["type"] = std::string(type_tag(s));
  m["n"] = state_dim(s);
  m["modes"] = mode_count(s);
  if (const auto* p = std::get_if<PeriodicIidSystem>(&s)) m["period"] = p->period();
  if (const auto* p = std::get_if<PolytopicMartingaleSystem>(&s)) m["gamma"] = p->gamma;
  return m;
}

ordered margins_json(const Margins& mg) {
  ordered j;
  j["underline_eps"] = mg.underline_eps;
  j["overline_eps"] = mg.overline_eps;
  j["eps"] = mg.eps;
  return j;
}

bool has_lift(const SystemModel& s) { return !std::holds_alternative<PolytopicMartingaleSystem>(s); }

// stable / unstable / boundary from the per-step moment radius
std::string verdict_from_radius(double per_step) {
  if (per_step < 1.0 - kBoundaryBand) return "stable";
  if (per_step > 1.0 + kBoundaryBand) return "unstable";
  return "boundary";
}

void add_operator_numbers(ordered& r, const SystemModel& s) {
  const auto op = lift(s);
  const double rho = spectral_radius(op.matrix);
  const double per_step =
      op.steps_per_application == 1 ? rho : std::pow(rho, 1.0 / static_cast<double>(op.steps_per_application));
  r["rho"] = rho;
  r["per_step_rho"] = per_step;
  r["steps_per_application"] = op.steps_per_application;
  r["operator_dim"] = op.dim();
}

ordered cmd_validate(const SystemModel& s, const Options&) {
  const auto v = validate(s);
  ordered r;
  r["ok"] = v.ok;
  r["m1_bound"] = v.m1_bound;
  r["m3_bound"] = v.m3_bound;
  r["messages"] = v.messages;
  r["verdict"] = v.ok ? "valid" : "invalid";
  return r;
}

ordered cmd_analyze(const SystemModel& s, const Options&) {
  if (!has_lift(s)) {
    throw InputError(
        "analyze: no exact moment operator exists for polytopic_martingale models; use 'certify' "
        "(--method s-variable or g-form) or 'simulate'");
  }
  ordered r;
  add_operator_numbers(r, s);
  const double per_step = r["per_step_rho"].get<double>();
  r["verdict"] = verdict_from_radius(per_step);
  if (per_step < 1.0) r["lambda_min_estimate"] = std::sqrt(per_step);
  return r;
}

ordered cmd_rate(const SystemModel& s, const Options& o) {
  if (!has_lift(s)) {
    throw InputError("rate: polytopic_martingale models have no exact rate; use 'certify' or 'simulate'");
  }
  if (!(o.tol > 0.0 && o.tol < 1.0)) throw InputError("rate: --tol must lie in (0, 1)");
  ordered r;
  add_operator_numbers(r, s);
  const auto b = lambda_min(s, o.tol);
  r["tol"] = o.tol;
  r["lambda_bracket"] = {b.lo, b.hi};
  r["exponentially_stable"] = b.exponentially_stable;
  r["operator_rate"] = b.operator_rate;
  r["cross_check_ok"] = b.cross_check_ok;
  r["evaluations"] = b.evaluations;
  const double per_step = r["per_step_rho"].get<double>();
  if (b.exponentially_stable) {
    r["verdict"] = per_step < 1.0 - kBoundaryBand ? "stable" : "boundary";
  } else {
    r["verdict"] = per_step > 1.0 + kBoundaryBand ? "unstable" : "boundary";
  }
  return r;
}

ordered cmd_certify(const SystemModel& s, const Options& o) {
  static const std::vector<std::string> methods = {"stein", "coupled", "constant-p", "s-variable", "g-form"};
  if (std::find(methods.begin(), methods.end(), o.method) == methods.end()) {
    throw InputError("certify: --method must be one of stein, coupled, constant-p, s-variable, g-form");
  }
  const bool martingale_method = o.method == "s-variable" || o.method == "g-form";
  const bool martingale_model = !has_lift(s);
  if (martingale_method != martingale_model) {
    throw InputError("certify: method " + o.method + " does not apply to a " + std::string(type_tag(s)) + " model");
  }
  if (o.method == "stein" && std::holds_alternative<MarkovJumpSystem>(s)) {
    throw InputError("certify: use --method coupled for markov models");
  }
  if (o.method == "coupled" && !std::holds_alternative<MarkovJumpSystem>(s) && !std::holds_alternative<IidSystem>(s)) {
    throw InputError("certify: --method coupled needs a markov or iid model");
  }

  ordered r;
  r["method"] = o.method;
  double lambda = 0.0;
  if (o.lambda) {
    lambda = *o.lambda;
    r["lambda_source"] = "flag";
  } else {
    if (martingale_model) throw InputError("certify: --lambda is required for polytopic_martingale models");
    const auto b = lambda_min(s, 1e-6);
    if (!b.exponentially_stable) {
      throw InputError("certify: the system is not exponentially stable; no default rate exists, pass --lambda");
    }
    // halfway between the optimal-rate bracket and 1
    lambda = 0.5 * (b.hi + 1.0);
    r["lambda_source"] = "rate";
  }
  if (!(lambda > 0.0 && lambda < 1.0)) throw InputError("certify: --lambda must lie in (0, 1)");
  r["lambda"] = lambda;

  std::optional<double> gap;  // per-step radius minus lambda^2
  if (has_lift(s)) {
    add_operator_numbers(r, s);
    gap = r["per_step_rho"].get<double>() - lambda * lambda;
  }

  std::optional<StabilityCertificate> cert;
  std::string status;
  if (o.method == "stein") {
    cert = solve_stein_iid(s, lambda);
    status = cert ? "feasible" : "infeasible";
  } else if (o.method == "coupled") {
    const auto mj = std::holds_alternative<IidSystem>(s) ? embed_iid_as_markov(s) : std::get<MarkovJumpSystem>(s);
    cert = solve_coupled_markov(mj, lambda);
    status = cert ? "feasible" : "infeasible";
  } else if (o.method == "constant-p") {
    cert = check_quadratic(s, lambda);
    // only the i.i.d. case is decided exactly
    status = cert ? "feasible" : (std::holds_alternative<IidSystem>(s) ? "infeasible" : "unknown");
  } else {
    const auto& pm = std::get<PolytopicMartingaleSystem>(s);
    const bool gform = o.method == "g-form";
    const LmiProblem prob = gform ? assemble_gform(pm, lambda) : assemble_svariable(pm, lambda);
    const FeasResult fr = gform ? gform_certificate(pm, lambda) : martingale_vertex_certificate(pm, lambda);
    status = std::string(to_string(fr.status));
    r["t_star"] = std::isfinite(fr.t_star) ? json(fr.t_star) : json(nullptr);
    r["iterations"] = fr.iterations;
    if (!fr.reason.empty()) r["reason"] = fr.reason;
    if (fr.status == FeasStatus::Feasible) {
      cert = certificate_from_lmi(prob, fr, gform ? CertificateKind::GForm : CertificateKind::SVariable, lambda);
    }
  }

  if (gap && std::abs(*gap) <= kBoundaryBand && (o.method == "stein" || o.method == "coupled")) {
    status = "boundary";
  }
  r["status"] = status;
  if (cert) {
    r["kind"] = std::string(to_string(cert->kind));
    r["margins"] = margins_json(cert->margins);
    const Margins re = recheck_certificate(s, *cert);
    r["recheck"] = margins_json(re);
    if (!(re.underline_eps > 0.0 && re.eps > 0.0)) r["status"] = status = "unknown";
    if (o.emit_certificate) {
      ordered blocks;
      for (const auto& [name, b] : cert->blocks) blocks[name] = matrix_json(b);
      r["certificate"] = std::move(blocks);
    }
  }
  if (status == "feasible") {
    r["verdict"] = "stable";
  } else if (status == "infeasible") {
    r["verdict"] = "unstable";
  } else if (status == "boundary") {
    r["verdict"] = "boundary";
  } else {
    r["verdict"] = "unknown";
  }
  return r;
}

InitialCondition initial_condition(const SystemModel& s, const Options& o) {
  InitialCondition init;
  const std::size_t n = state_dim(s);
  init.x0 = o.x0.empty() ? std::vector<double>(n, 1.0) : parse_list(o.x0, "--x0");
  if (!o.prior.empty()) {
    if (std::holds_alternative<MarkovJumpSystem>(s)) {
      const auto v = parse_list(o.prior, "--prior");
      if (v.size() == 1) {
        if (v[0] < 0.0 || v[0] != std::floor(v[0])) throw InputError("--prior: previous mode must be an index");
        init.previous_mode = static_cast<std::size_t>(v[0]);
      } else {
        init.previous_mode_distribution = v;
      }
    } else if (std::holds_alternative<PolytopicMartingaleSystem>(s)) {
      init.simplex_point = parse_list(o.prior, "--prior");
    } else if (std::holds_alternative<PeriodicIidSystem>(s)) {
      const auto v = parse_list(o.prior, "--prior");
      if (v.size() != 1 || v[0] < 0.0 || v[0] != std::floor(v[0])) throw InputError("--prior: phase must be an index");
      init.phase = static_cast<std::size_t>(v[0]);
    } else {
      throw InputError("--prior does not apply to iid models");
    }
  }
  try {
    check_initial_condition(s, init);
  } catch (const ModelError& e) {
    throw InputError(e.what());
  }
  return init;
}

ordered cmd_simulate(const SystemModel& s, const Options& o) {
  if (o.paths < 1) throw InputError("simulate: --paths must be at least 1");
  if (o.horizon < 1) throw InputError("simulate: --horizon must be at least 1");
  SimParams p;
  p.paths = o.paths;
  p.horizon = o.horizon;
  p.master_seed = o.seed;
  p.initial = initial_condition(s, o);
  const auto curve = estimate_second_moment(s, p);

  ordered r;
  r["paths"] = curve.paths;
  r["horizon"] = o.horizon;
  r["seed"] = curve.master_seed;
  r["x0"] = p.initial.x0;
  r["second_moment"] = curve.values;
  r["half_width"] = curve.half_widths;
  r["diverged"] = curve.diverged;
  if (o.fit) {
    try {
      const auto f = estimate_decay_rate(curve);
      ordered fj;
      fj["lambda_hat"] = f.lambda_hat;
      fj["ci"] = {f.lo, f.hi};
      fj["window"] = {f.window_first, f.window_last};
      r["fit"] = std::move(fj);
    } catch (const std::invalid_argument& e) {
      r["fit"] = nullptr;
      r["fit_error"] = e.what();
    }
  }
  if (has_lift(s)) {
    add_operator_numbers(r, s);
    r["verdict"] = verdict_from_radius(r["per_step_rho"].get<double>());
  } else {
    r["verdict"] = "unknown";
  }
  return r;
}

std::string scalar_text(const ordered& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void flatten(const ordered& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out.emplace_back(key, scalar_text(*it));
    }
  }
}

void render_text(const ordered& report, std::ostream& out) {
  std::vector<std::pair<std::string, std::string>> rows;
  flatten(report, "", rows);
  std::size_t width = 0;
  for (const auto& [k, v] : rows) width = std::max(width, k.size());
  for (const auto& [k, v] : rows) out << std::left << std::setw(static_cast<int>(width)) << k << "  " << v << '\n';
}

}  // namespace

int exit_code_for(std::string_view verdict) {
  if (verdict == "stable" || verdict == "valid") return kStable;
  if (verdict == "unstable") return kUnstable;
  if (verdict == "boundary" || verdict == "unknown") return kUndecided;
  return kInputError;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Second-moment stability analysis for stochastic linear systems", "moment_stab"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--format", o.format, "Report format")->check(CLI::IsMember({"json", "text"}));
  app.add_flag("--emit-certificate", o.emit_certificate, "Include certificate matrices in the report");

  auto* validate_cmd = app.add_subcommand("validate", "Check a system file and report entry bounds");
  validate_cmd->add_option("file", o.file, "System JSON file")->required();

  auto* analyze_cmd = app.add_subcommand("analyze", "Spectral radius of the second-moment operator");
  analyze_cmd->add_option("file", o.file, "System JSON file")->required();

  auto* rate_cmd = app.add_subcommand("rate", "Bracket the optimal decay rate by bisection");
  rate_cmd->add_option("file", o.file, "System JSON file")->required();
  rate_cmd->add_option("--tol", o.tol, "Bracket width");

  auto* certify_cmd = app.add_subcommand("certify", "Solve a Lyapunov inequality at a given rate");
  certify_cmd->add_option("file", o.file, "System JSON file")->required();
  certify_cmd->add_option("--lambda", o.lambda, "Decay rate in (0, 1)");
  certify_cmd->add_option("--method", o.method, "stein|coupled|constant-p|s-variable|g-form")->required();

  auto* simulate_cmd = app.add_subcommand("simulate", "Monte Carlo estimate of E|x_k|^2");
  simulate_cmd->add_option("file", o.file, "System JSON file")->required();
  simulate_cmd->add_option("--paths", o.paths, "Number of paths")->required();
  simulate_cmd->add_option("--horizon", o.horizon, "Steps per path")->required();
  simulate_cmd->add_option("--seed", o.seed, "Master seed")->required();
  simulate_cmd->add_option("--x0", o.x0, "Initial state, comma separated");
  simulate_cmd->add_option("--prior", o.prior,
                           "markov: previous mode or its distribution; polytopic_martingale: simplex "
                           "point; periodic_iid: phase");
  simulate_cmd->add_flag("--fit", o.fit, "Fit the decay rate");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
  o.command = app.get_subcommands().front()->get_name();

  const auto start = std::chrono::steady_clock::now();
  ordered report;
  report["schema"] = std::string(kSchema);
  report["command"] = o.command;
  try {
    const SystemModel s = load_model(o.file);
    report["file"] = o.file;
    report["model"] = model_summary(s);
    ordered body;
    if (o.command == "validate") {
      body = cmd_validate(s, o);
    } else if (o.command == "analyze") {
      body = cmd_analyze(s, o);
    } else if (o.command == "rate") {
      body = cmd_rate(s, o);
    } else if (o.command == "certify") {
      body = cmd_certify(s, o);
    } else {
      body = cmd_simulate(s, o);
    }
    for (auto it = body.begin(); it != body.end(); ++it) report[it.key()] = it.value();
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const NumericalError& e) {
    err << "error: numerical failure: " << e.what() << '\n';
    return kUndecided;
  }

  const std::string verdict = report["verdict"].get<std::string>();
  if (o.format == "json") {
    out << report.dump(2) << '\n';
  } else {
    render_text(report, out);
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    out << "elapsed_ms  " << std::fixed << std::setprecision(1) << ms << '\n';
  }
  return exit_code_for(verdict);
}

}  // namespace mstab::cli
