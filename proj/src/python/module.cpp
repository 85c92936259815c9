#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mstab/cli.hpp"
#include "mstab/lmi_solver.hpp"
#include "mstab/lyapunov.hpp"
#include "mstab/moment_operator.hpp"
#include "mstab/simulate.hpp"
#include "mstab/system_model.hpp"

namespace py = pybind11;
using namespace mstab;

namespace {

std::vector<std::vector<double>> to_lists(const Matrix& m) {
  std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

py::dict margins_dict(const Margins& m) {
  py::dict d;
  d["underline_eps"] = m.underline_eps;
  d["overline_eps"] = m.overline_eps;
  d["eps"] = m.eps;
  return d;
}

py::object certificate_dict(const SystemModel& s, const std::optional<StabilityCertificate>& c) {
  if (!c) return py::none();
  py::dict d;
  d["kind"] = std::string(to_string(c->kind));
  d["lambda"] = c->lambda;
  py::dict blocks;
  for (const auto& [name, m] : c->blocks) blocks[py::str(name)] = to_lists(m);
  d["blocks"] = blocks;
  d["margins"] = margins_dict(c->margins);
  d["recheck"] = margins_dict(recheck_certificate(s, *c));
  d["iterations"] = c->iterations;
  return d;
}

py::dict feas_dict(const FeasResult& r) {
  py::dict d;
  d["status"] = std::string(to_string(r.status));
  d["t_star"] = r.t_star;
  d["iterations"] = r.iterations;
  d["reason"] = r.reason;
  return d;
}

const PolytopicMartingaleSystem& as_martingale(const SystemModel& s) {
  const auto* p = std::get_if<PolytopicMartingaleSystem>(&s);
  if (!p) throw std::invalid_argument("expected a polytopic_martingale model");
  return *p;
}

// Each alternative gets its own Python class; the variant caster picks one.
template <class T>
void bind_model(py::module_& m, const char* name) {
  py::class_<T>(m, name)
      .def_property_readonly("type", [](const T& t) { return std::string(type_tag(SystemModel(t))); })
      .def_property_readonly("n", [](const T& t) { return state_dim(SystemModel(t)); })
      .def_property_readonly("modes", [](const T& t) { return mode_count(SystemModel(t)); })
      .def("to_json", [](const T& t) { return serialize_system(SystemModel(t)); })
      .def("__eq__", [](const T& a, const T& b) { return a == b; })
      .def("__repr__", [](const T& t) {
        const SystemModel s(t);
        return "<" + std::string(type_tag(s)) + " model n=" + std::to_string(state_dim(s)) +
               " modes=" + std::to_string(mode_count(s)) + ">";
      });
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Second-moment stability analysis of stochastic linear systems";

  py::register_exception<ModelError>(m, "ModelError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  bind_model<IidSystem>(m, "IidModel");
  bind_model<PeriodicIidSystem>(m, "PeriodicIidModel");
  bind_model<MarkovJumpSystem>(m, "MarkovJumpModel");
  bind_model<PolytopicMartingaleSystem>(m, "PolytopicMartingaleModel");

  m.def("parse", [](const std::string& text) { return parse_system(text); }, py::arg("text"),
        "Parse a system from its JSON text.");

  m.def(
      "validate",
      [](const SystemModel& s) {
        const auto r = validate(s);
        py::dict d;
        d["ok"] = r.ok;
        d["m1_bound"] = r.m1_bound;
        d["m3_bound"] = r.m3_bound;
        d["messages"] = r.messages;
        return d;
      },
      py::arg("model"));

  m.def("embed_iid_as_markov", [](const SystemModel& s) { return SystemModel(embed_iid_as_markov(s)); },
        py::arg("model"));

  m.def(
      "moment_operator", [](const SystemModel& s) { return to_lists(lift(s).matrix); }, py::arg("model"),
      "Dense lifted second-moment operator (one period for periodic models).");
  m.def("second_moment_radius", &second_moment_radius, py::arg("model"));
  m.def("per_step_radius", &per_step_radius, py::arg("model"));

  m.def(
      "lambda_min",
      [](const SystemModel& s, double tol) {
        const auto b = lambda_min(s, tol);
        py::dict d;
        d["lo"] = b.lo;
        d["hi"] = b.hi;
        d["exponentially_stable"] = b.exponentially_stable;
        d["operator_rate"] = b.operator_rate;
        d["cross_check_ok"] = b.cross_check_ok;
        return d;
      },
      py::arg("model"), py::arg("tol") = 1e-6);

  m.def(
      "solve_stein", [](const SystemModel& s, double lam) { return certificate_dict(s, solve_stein_iid(s, lam)); },
      py::arg("model"), py::arg("lam"));
  m.def(
      "solve_coupled",
      [](const SystemModel& s, double lam) {
        if (!std::holds_alternative<IidSystem>(s) && !std::holds_alternative<MarkovJumpSystem>(s))
          throw std::invalid_argument("coupled solver needs an iid or markov model");
        const MarkovJumpSystem mj =
            std::holds_alternative<IidSystem>(s) ? embed_iid_as_markov(s) : std::get<MarkovJumpSystem>(s);
        return certificate_dict(SystemModel(mj), solve_coupled_markov(mj, lam));
      },
      py::arg("model"), py::arg("lam"));
  m.def(
      "check_quadratic", [](const SystemModel& s, double lam) { return certificate_dict(s, check_quadratic(s, lam)); },
      py::arg("model"), py::arg("lam"));

  m.def(
      "martingale_vertex_certificate",
      [](const SystemModel& s, double lam) { return feas_dict(martingale_vertex_certificate(as_martingale(s), lam)); },
      py::arg("model"), py::arg("lam"));
  m.def(
      "gform_certificate",
      [](const SystemModel& s, double lam) { return feas_dict(gform_certificate(as_martingale(s), lam)); },
      py::arg("model"), py::arg("lam"));

  m.def(
      "simplex_martingale_step",
      [](const std::vector<double>& xi, double gamma, double draw) { return simplex_martingale_step(xi, gamma, draw); },
      py::arg("xi"), py::arg("gamma"), py::arg("draw"));

  m.def(
      "estimate_second_moment",
      [](const SystemModel& s, std::size_t paths, std::size_t horizon, std::uint64_t seed,
         std::optional<std::vector<double>> x0, std::size_t threads) {
        SimParams p;
        p.paths = paths;
        p.horizon = horizon;
        p.master_seed = seed;
        p.threads = threads;
        p.initial.x0 = x0 ? *x0 : std::vector<double>(state_dim(s), 1.0);
        SecondMomentCurve c;
        {
          py::gil_scoped_release release;
          c = estimate_second_moment(s, p);
        }
        py::dict d;
        d["values"] = c.values;
        d["std_errors"] = c.std_errors;
        d["half_widths"] = c.half_widths;
        d["diverged"] = c.diverged;
        return d;
      },
      py::arg("model"), py::arg("paths"), py::arg("horizon"), py::arg("seed"), py::arg("x0") = py::none(),
      py::arg("threads") = 0);

  m.def(
      "estimate_decay_rate",
      [](const std::vector<double>& values, const std::vector<double>& std_errors) {
        SecondMomentCurve c;
        c.values = values;
        c.std_errors = std_errors;
        const auto f = estimate_decay_rate(c);
        py::dict d;
        d["lambda_hat"] = f.lambda_hat;
        d["lo"] = f.lo;
        d["hi"] = f.hi;
        d["window"] = py::make_tuple(f.window_first, f.window_last);
        return d;
      },
      py::arg("values"), py::arg("std_errors"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run one CLI command; returns (exit_code, stdout, stderr).");
}
