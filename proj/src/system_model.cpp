#include "mstab/system_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <system_error>

#include <nlohmann/json.hpp>

namespace mstab {

namespace {

using nlohmann::json;

constexpr double kSumTolerance = 1e-12;

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void normalize_probabilities(std::vector<double>& p, const std::string& what) {
  if (p.empty()) throw ModelError(what + ": empty probability vector");
  for (double v : p) {
    if (!std::isfinite(v)) throw ModelError(what + ": non-finite probability");
    if (v < 0.0) throw ModelError(what + ": negative probability " + shortest(v));
    if (v > 1.0) throw ModelError(what + ": probability " + shortest(v) + " exceeds 1");
  }
  const double sum = std::accumulate(p.begin(), p.end(), 0.0);
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw ModelError(what + ": probabilities sum to " + shortest(sum));
  }
  // Sums within summation round-off of 1 are left alone so renormalizing is idempotent.
  const double noise = 2.0 * static_cast<double>(p.size()) * std::numeric_limits<double>::epsilon();
  if (std::abs(sum - 1.0) > noise) {
    for (double& v : p) v /= sum;
  }
}

void check_square_family(const std::vector<Matrix>& ms, std::size_t n, const std::string& what) {
  if (ms.empty()) throw ModelError(what + ": at least one matrix is required");
  for (std::size_t i = 0; i < ms.size(); ++i) {
    if (ms[i].rows() != n || ms[i].cols() != n) {
      throw ModelError(what + ": matrix " + std::to_string(i) + " is " +
                       std::to_string(ms[i].rows()) + "x" + std::to_string(ms[i].cols()) +
                       ", expected " + std::to_string(n) + "x" + std::to_string(n));
    }
    if (!all_finite(ms[i])) throw ModelError(what + ": matrix " + std::to_string(i) + " has a non-finite entry");
  }
}

std::size_t dim_of(const std::vector<Matrix>& ms, const std::string& what) {
  if (ms.empty()) throw ModelError(what + ": at least one matrix is required");
  if (ms.front().rows() == 0) throw ModelError(what + ": state dimension must be positive");
  return ms.front().rows();
}

}  // namespace

IidSystem make_iid(std::vector<Matrix> modes, std::vector<double> probs) {
  const std::size_t n = dim_of(modes, "iid modes");
  check_square_family(modes, n, "iid modes");
  if (probs.size() != modes.size()) {
    throw ModelError("iid: " + std::to_string(modes.size()) + " modes but " +
                     std::to_string(probs.size()) + " probabilities");
  }
  normalize_probabilities(probs, "iid");
  return IidSystem{n, std::move(modes), std::move(probs)};
}

PeriodicIidSystem make_periodic_iid(std::vector<PeriodicStep> steps) {
  if (steps.empty()) throw ModelError("periodic_iid: period must be at least 1");
  const std::size_t n = dim_of(steps.front().modes, "periodic_iid step 0");
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const std::string what = "periodic_iid step " + std::to_string(k);
    check_square_family(steps[k].modes, n, what);
    if (steps[k].probs.size() != steps[k].modes.size()) {
      throw ModelError(what + ": mode and probability counts differ");
    }
    normalize_probabilities(steps[k].probs, what);
  }
  return PeriodicIidSystem{n, std::move(steps)};
}

MarkovJumpSystem make_markov(std::vector<Matrix> modes, Matrix transition) {
  const std::size_t n = dim_of(modes, "markov modes");
  check_square_family(modes, n, "markov modes");
  const std::size_t m = modes.size();
  if (transition.rows() != m || transition.cols() != m) {
    throw ModelError("markov: transition matrix must be " + std::to_string(m) + "x" + std::to_string(m));
  }
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> row(m);
    for (std::size_t i = 0; i < m; ++i) row[i] = transition(j, i);
    normalize_probabilities(row, "markov transition row " + std::to_string(j));
    for (std::size_t i = 0; i < m; ++i) transition(j, i) = row[i];
  }
  return MarkovJumpSystem{n, std::move(modes), std::move(transition)};
}

PolytopicMartingaleSystem make_polytopic_martingale(std::vector<Matrix> vertices, double gamma) {
  const std::size_t n = dim_of(vertices, "polytopic_martingale vertices");
  check_square_family(vertices, n, "polytopic_martingale vertices");
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ModelError("polytopic_martingale: gamma must lie in (0, 1], got " + shortest(gamma));
  }
  return PolytopicMartingaleSystem{n, std::move(vertices), gamma};
}

void check_model(const SystemModel& s) {
  // Rebuilding through the constructors re-runs every check.
  std::visit(
      [](const auto& sys) {
        using T = std::decay_t<decltype(sys)>;
        if constexpr (std::is_same_v<T, IidSystem>) {
          const auto rebuilt = make_iid(sys.modes, sys.probs);
          if (rebuilt.n != sys.n) throw ModelError("iid: declared n does not match modes");
        } else if constexpr (std::is_same_v<T, PeriodicIidSystem>) {
          const auto rebuilt = make_periodic_iid(sys.steps);
          if (rebuilt.n != sys.n) throw ModelError("periodic_iid: declared n does not match modes");
        } else if constexpr (std::is_same_v<T, MarkovJumpSystem>) {
          const auto rebuilt = make_markov(sys.modes, sys.transition);
          if (rebuilt.n != sys.n) throw ModelError("markov: declared n does not match modes");
        } else {
          const auto rebuilt = make_polytopic_martingale(sys.vertices, sys.gamma);
          if (rebuilt.n != sys.n) throw ModelError("polytopic_martingale: declared n does not match vertices");
        }
      },
      s);
}

std::size_t state_dim(const SystemModel& s) {
  return std::visit([](const auto& sys) { return sys.n; }, s);
}

std::string_view type_tag(const SystemModel& s) {
  switch (s.index()) {
    case 0: return "iid";
    case 1: return "periodic_iid";
    case 2: return "markov";
    default: return "polytopic_martingale";
  }
}

std::size_t mode_count(const SystemModel& s) {
  if (const auto* p = std::get_if<IidSystem>(&s)) return p->modes.size();
  if (const auto* p = std::get_if<MarkovJumpSystem>(&s)) return p->modes.size();
  if (const auto* p = std::get_if<PolytopicMartingaleSystem>(&s)) return p->vertices.size();
  std::size_t z = 0;
  for (const auto& st : std::get<PeriodicIidSystem>(s).steps) z = std::max(z, st.modes.size());
  return z;
}

namespace {

const json& field(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end()) throw ModelError(std::string("missing field \"") + key + "\"");
  return *it;
}

double number(const json& v, const std::string& what) {
  if (!v.is_number()) throw ModelError(what + ": expected a number");
  return v.get<double>();
}

Matrix matrix_from_json(const json& v, std::size_t n, const std::string& what) {
  if (!v.is_array() || v.size() != n) {
    throw ModelError(what + ": expected " + std::to_string(n) + " rows");
  }
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const json& row = v[i];
    if (!row.is_array() || row.size() != n) {
      throw ModelError(what + ": row " + std::to_string(i) + " must have " + std::to_string(n) + " entries");
    }
    for (std::size_t j = 0; j < n; ++j) m(i, j) = number(row[j], what);
  }
  return m;
}

std::vector<Matrix> matrices_from_json(const json& v, std::size_t n, const std::string& what) {
  if (!v.is_array() || v.empty()) throw ModelError(what + ": expected a non-empty array of matrices");
  std::vector<Matrix> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(matrix_from_json(v[i], n, what + "[" + std::to_string(i) + "]"));
  }
  return out;
}

std::vector<double> vector_from_json(const json& v, const std::string& what) {
  if (!v.is_array()) throw ModelError(what + ": expected an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(number(e, what));
  return out;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json matrices_to_json(const std::vector<Matrix>& ms) {
  json arr = json::array();
  for (const auto& m : ms) arr.push_back(matrix_to_json(m));
  return arr;
}

}  // namespace

SystemModel parse_system(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ModelError(std::string("malformed document: ") + e.what());
  }
  if (!doc.is_object()) throw ModelError("malformed document: top level must be an object");
  const json& type = field(doc, "type");
  if (!type.is_string()) throw ModelError("field \"type\" must be a string");
  const json& nj = field(doc, "n");
  if (!nj.is_number_integer() || nj.get<long long>() < 1) {
    throw ModelError("field \"n\" must be a positive integer");
  }
  const auto n = static_cast<std::size_t>(nj.get<long long>());
  const auto tag = type.get<std::string>();

  if (tag == "iid") {
    return make_iid(matrices_from_json(field(doc, "modes"), n, "modes"),
                    vector_from_json(field(doc, "probs"), "probs"));
  }
  if (tag == "periodic_iid") {
    const json& steps = field(doc, "steps");
    if (!steps.is_array()) throw ModelError("field \"steps\" must be an array");
    if (auto it = doc.find("period"); it != doc.end()) {
      if (!it->is_number_integer() || it->get<long long>() != static_cast<long long>(steps.size())) {
        throw ModelError("field \"period\" must equal the number of steps");
      }
    }
    std::vector<PeriodicStep> out;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const std::string what = "steps[" + std::to_string(k) + "]";
      if (!steps[k].is_object()) throw ModelError(what + ": expected an object");
      out.push_back({matrices_from_json(field(steps[k], "modes"), n, what + ".modes"),
                     vector_from_json(field(steps[k], "probs"), what + ".probs")});
    }
    return make_periodic_iid(std::move(out));
  }
  if (tag == "markov") {
    auto modes = matrices_from_json(field(doc, "modes"), n, "modes");
    return make_markov(std::move(modes),
                       matrix_from_json(field(doc, "transition"), modes.size(), "transition"));
  }
  if (tag == "polytopic_martingale") {
    return make_polytopic_martingale(matrices_from_json(field(doc, "vertices"), n, "vertices"),
                                     number(field(doc, "gamma"), "gamma"));
  }
  throw ModelError("unknown system type \"" + tag + "\"");
}

std::string serialize_system(const SystemModel& s) {
  json doc;
  doc["type"] = std::string(type_tag(s));
  doc["n"] = state_dim(s);
  std::visit(
      [&](const auto& sys) {
        using T = std::decay_t<decltype(sys)>;
        if constexpr (std::is_same_v<T, IidSystem>) {
          doc["modes"] = matrices_to_json(sys.modes);
          doc["probs"] = sys.probs;
        } else if constexpr (std::is_same_v<T, PeriodicIidSystem>) {
          doc["period"] = sys.period();
          json steps = json::array();
          for (const auto& st : sys.steps) {
            steps.push_back({{"modes", matrices_to_json(st.modes)}, {"probs", st.probs}});
          }
          doc["steps"] = std::move(steps);
        } else if constexpr (std::is_same_v<T, MarkovJumpSystem>) {
          doc["modes"] = matrices_to_json(sys.modes);
          doc["transition"] = matrix_to_json(sys.transition);
        } else {
          doc["vertices"] = matrices_to_json(sys.vertices);
          doc["gamma"] = sys.gamma;
        }
      },
      s);
  return doc.dump(2);
}

void check_initial_condition(const SystemModel& s, const InitialCondition& init) {
  const std::size_t n = state_dim(s);
  if (init.x0.size() != n) {
    throw ModelError("initial state has length " + std::to_string(init.x0.size()) +
                     ", expected " + std::to_string(n));
  }
  for (double v : init.x0) {
    if (!std::isfinite(v)) throw ModelError("initial state has a non-finite entry");
  }
  if (const auto* mj = std::get_if<MarkovJumpSystem>(&s)) {
    (void)initial_mode_distribution(*mj, init);
  } else if (const auto* pm = std::get_if<PolytopicMartingaleSystem>(&s)) {
    (void)initial_simplex_point(*pm, init);
  } else if (const auto* pi = std::get_if<PeriodicIidSystem>(&s)) {
    if (init.phase >= pi->period()) {
      throw ModelError("phase " + std::to_string(init.phase) + " is not below the period " +
                       std::to_string(pi->period()));
    }
  }
}

std::vector<double> initial_mode_distribution(const MarkovJumpSystem& s,
                                              const InitialCondition& init) {
  const std::size_t m = s.modes.size();
  std::vector<double> prev(m, 0.0);
  if (init.previous_mode) {
    if (*init.previous_mode >= m) {
      throw ModelError("previous mode " + std::to_string(*init.previous_mode) +
                       " is out of range for " + std::to_string(m) + " modes");
    }
    prev[*init.previous_mode] = 1.0;
  } else if (!init.previous_mode_distribution.empty()) {
    if (init.previous_mode_distribution.size() != m) {
      throw ModelError("previous-mode distribution must have " + std::to_string(m) + " entries");
    }
    prev = init.previous_mode_distribution;
    normalize_probabilities(prev, "previous-mode distribution");
  } else {
    std::fill(prev.begin(), prev.end(), 1.0 / static_cast<double>(m));
  }
  std::vector<double> cur(m, 0.0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < m; ++i) cur[i] += prev[j] * s.transition(j, i);
  return cur;
}

std::vector<double> initial_simplex_point(const PolytopicMartingaleSystem& s,
                                          const InitialCondition& init) {
  const std::size_t z = s.vertices.size();
  if (init.simplex_point.empty()) return std::vector<double>(z, 1.0 / static_cast<double>(z));
  if (init.simplex_point.size() != z) {
    throw ModelError("simplex point must have " + std::to_string(z) + " entries");
  }
  std::vector<double> xi = init.simplex_point;
  normalize_probabilities(xi, "simplex point");
  return xi;
}

ValidationReport validate(const SystemModel& s) {
  ValidationReport report;
  auto absorb = [&](const Matrix& a) {
    const double m = max_abs(a);
    report.m3_bound = std::max(report.m3_bound, m);
    report.m1_bound = std::max(report.m1_bound, m * m);
  };
  std::visit(
      [&](const auto& sys) {
        using T = std::decay_t<decltype(sys)>;
        if constexpr (std::is_same_v<T, IidSystem> || std::is_same_v<T, MarkovJumpSystem>) {
          for (const auto& a : sys.modes) absorb(a);
          report.messages.push_back("finite support of " + std::to_string(sys.modes.size()) +
                                    " mode(s); coefficient entries essentially bounded");
        } else if constexpr (std::is_same_v<T, PeriodicIidSystem>) {
          for (const auto& st : sys.steps)
            for (const auto& a : st.modes) absorb(a);
          report.messages.push_back("finite support per phase over period " +
                                    std::to_string(sys.period()) +
                                    "; coefficient entries essentially bounded");
        } else {
          // |sum_i theta_i a_i| <= max_i |a_i| entrywise on the simplex.
          for (const auto& a : sys.vertices) absorb(a);
          report.messages.push_back("matrix polytope with " + std::to_string(sys.vertices.size()) +
                                    " vertices; entry bounds attained at vertices");
        }
      },
      s);
  if (!std::isfinite(report.m1_bound) || !std::isfinite(report.m3_bound)) {
    report.ok = false;
    report.messages.push_back("entry bound overflowed");
  }
  return report;
}

MarkovJumpSystem embed_iid_as_markov(const IidSystem& s) {
  const std::size_t z = s.modes.size();
  Matrix transition(z, z);
  for (std::size_t j = 0; j < z; ++j)
    for (std::size_t i = 0; i < z; ++i) transition(j, i) = s.probs[i];
  return MarkovJumpSystem{s.n, s.modes, std::move(transition)};
}

MarkovJumpSystem embed_iid_as_markov(const SystemModel& s) {
  const auto* iid = std::get_if<IidSystem>(&s);
  if (iid == nullptr) {
    throw ModelError("embed_iid_as_markov: expected an iid model, got " + std::string(type_tag(s)));
  }
  return embed_iid_as_markov(*iid);
}

}  // namespace mstab
