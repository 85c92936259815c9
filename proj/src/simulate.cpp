#include "mstab/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

namespace mstab {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t path_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

std::size_t categorical(std::span<const double> weights, double draw) {
  double total = 0.0;
  for (double w : weights) total += w;
  const double target = draw * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    acc += weights[i];
    if (target < acc) return i;
  }
  return last_positive;
}

std::vector<double> simplex_martingale_step(std::span<const double> xi, double gamma, double draw) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  double sum = 0.0;
  for (double v : xi) {
    if (!(v >= -1e-9)) throw std::invalid_argument("xi has a negative entry");
    sum += v;
  }
  if (xi.empty() || std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("xi is not on the unit simplex");

  const std::size_t j = categorical(xi, draw);
  std::vector<double> out(xi.size());
  for (std::size_t i = 0; i < xi.size(); ++i) {
    const double v = std::max(xi[i], 0.0);
    // written so that a vertex maps to itself exactly
    out[i] = i == j ? v + gamma * (1.0 - v) : v - gamma * v;
    out[i] = std::max(out[i], 0.0);
  }
  const double s = std::accumulate(out.begin(), out.end(), 0.0);
  if (std::abs(s - 1.0) > 1e-14) {
    for (double& v : out) v /= s;
  }
  return out;
}

namespace {

std::vector<double> mat_vec(const Matrix& a, const std::vector<double>& x) {
  return a * std::span<const double>(x);
}

Matrix polytope_point(const PolytopicMartingaleSystem& s, const std::vector<double>& xi) {
  Matrix a(s.n, s.n);
  for (std::size_t i = 0; i < s.vertices.size(); ++i) {
    if (xi[i] != 0.0) a.add_block(0, 0, s.vertices[i], xi[i]);
  }
  return a;
}

// Advances one path, calling visit(k, x_k) for k = 0..horizon. visit returns
// false to stop early.
template <typename Visit>
void run_path(const SystemModel& s, const InitialCondition& init, std::size_t horizon, std::uint64_t seed,
              SamplePath* record, Visit&& visit) {
  PathRng rng(seed);
  std::vector<double> x = init.x0;
  if (!visit(std::size_t{0}, x)) return;

  if (const auto* p = std::get_if<IidSystem>(&s)) {
    for (std::size_t k = 0; k < horizon; ++k) {
      const std::size_t mode = categorical(p->probs, rng.uniform());
      x = mat_vec(p->modes[mode], x);
      if (record) record->modes.push_back(mode);
      if (!visit(k + 1, x)) return;
    }
  } else if (const auto* p = std::get_if<PeriodicIidSystem>(&s)) {
    for (std::size_t k = 0; k < horizon; ++k) {
      const auto& step = p->steps[(init.phase + k) % p->period()];
      const std::size_t mode = categorical(step.probs, rng.uniform());
      x = mat_vec(step.modes[mode], x);
      if (record) record->modes.push_back(mode);
      if (!visit(k + 1, x)) return;
    }
  } else if (const auto* p = std::get_if<MarkovJumpSystem>(&s)) {
    const auto dist = initial_mode_distribution(*p, init);
    std::size_t mode = categorical(dist, rng.uniform());
    std::vector<double> row(p->modes.size());
    for (std::size_t k = 0; k < horizon; ++k) {
      if (k > 0) {
        for (std::size_t i = 0; i < row.size(); ++i) row[i] = p->transition(mode, i);
        mode = categorical(row, rng.uniform());
      }
      x = mat_vec(p->modes[mode], x);
      if (record) record->modes.push_back(mode);
      if (!visit(k + 1, x)) return;
    }
  } else {
    const auto& m = std::get<PolytopicMartingaleSystem>(s);
    std::vector<double> xi = initial_simplex_point(m, init);
    if (record) record->xi.push_back(xi);
    for (std::size_t k = 0; k < horizon; ++k) {
      x = mat_vec(polytope_point(m, xi), x);
      xi = simplex_martingale_step(xi, m.gamma, rng.uniform());
      if (record) record->xi.push_back(xi);
      if (!visit(k + 1, x)) return;
    }
  }
}

double squared_norm(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

// Neumaier compensated sum in extended precision.
struct CompensatedSum {
  long double sum = 0.0L;
  long double comp = 0.0L;

  void add(long double v) {
    const long double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  long double value() const { return sum + comp; }
};

struct ChunkStats {
  std::vector<CompensatedSum> s1;
  std::vector<CompensatedSum> s2;
  std::size_t diverged_at;  // horizon + 1 when no path diverged
};

constexpr std::size_t kChunk = 256;
constexpr double kDivergence = 1e150;

}  // namespace

SamplePath sample_path(const SystemModel& s, const InitialCondition& init, std::size_t horizon,
                       std::uint64_t seed) {
  check_initial_condition(s, init);
  SamplePath out;
  run_path(s, init, horizon, seed, &out, [&](std::size_t, const std::vector<double>& x) {
    out.states.push_back(x);
    return true;
  });
  return out;
}

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("MOMENT_STAB_THREADS")) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

SecondMomentCurve estimate_second_moment(const SystemModel& s, const SimParams& p) {
  if (p.paths < 1) throw std::invalid_argument("paths must be at least 1");
  if (p.horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  check_initial_condition(s, p.initial);

  const std::size_t horizon = p.horizon;
  const std::size_t n_chunks = (p.paths + kChunk - 1) / kChunk;
  std::vector<ChunkStats> chunks(n_chunks);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1)) {
      ChunkStats st{std::vector<CompensatedSum>(horizon + 1), std::vector<CompensatedSum>(horizon + 1),
                    horizon + 1};
      const std::size_t first = c * kChunk;
      const std::size_t last = std::min(p.paths, first + kChunk);
      for (std::size_t i = first; i < last; ++i) {
        run_path(s, p.initial, horizon, path_seed(p.master_seed, i), nullptr,
                 [&](std::size_t k, const std::vector<double>& x) {
                   const double v = squared_norm(x);
                   if (!(v <= kDivergence)) {
                     st.diverged_at = std::min(st.diverged_at, k);
                     return false;
                   }
                   if (k >= st.diverged_at) return false;
                   st.s1[k].add(v);
                   st.s2[k].add(static_cast<long double>(v) * v);
                   return true;
                 });
      }
      chunks[c] = std::move(st);
    }
  };

  const std::size_t workers = std::min(resolve_threads(p.threads), n_chunks);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::size_t cut = horizon + 1;
  for (const auto& st : chunks) cut = std::min(cut, st.diverged_at);

  SecondMomentCurve out;
  out.paths = p.paths;
  out.master_seed = p.master_seed;
  out.diverged = cut <= horizon;
  const auto n = static_cast<long double>(p.paths);
  for (std::size_t k = 0; k < cut; ++k) {
    CompensatedSum s1;
    CompensatedSum s2;
    for (const auto& st : chunks) {
      s1.add(st.s1[k].value());
      s2.add(st.s2[k].value());
    }
    const long double mean = s1.value() / n;
    long double var = 0.0L;
    if (p.paths > 1) var = std::max(0.0L, (s2.value() - n * mean * mean) / (n - 1.0L));
    const double se = static_cast<double>(std::sqrt(var / n));
    out.values.push_back(static_cast<double>(mean));
    out.std_errors.push_back(se);
    out.half_widths.push_back(1.96 * se);
  }
  if (!out.values.empty()) {
    // every path starts at x0
    out.values[0] = squared_norm(p.initial.x0);
    out.std_errors[0] = 0.0;
    out.half_widths[0] = 0.0;
  }
  return out;
}

DecayFit estimate_decay_rate(const SecondMomentCurve& c,
                             std::optional<std::pair<std::size_t, std::size_t>> window) {
  const std::size_t len = c.values.size();
  if (len < 8) {
    throw std::invalid_argument("decay fit needs at least 8 curve points, got " + std::to_string(len));
  }
  std::size_t first = len - (2 * len + 2) / 3;
  std::size_t last = len - 1;
  if (window) {
    first = window->first;
    last = window->second;
    if (last >= len || first + 1 > last) throw std::invalid_argument("decay fit window is out of range");
  }
  const std::size_t count = last - first + 1;

  std::vector<double> w(count), y(count), k(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double m = c.values[first + i];
    if (!(m > 0.0)) throw std::invalid_argument("decay fit window contains a nonpositive value");
    const double se = i + first < c.std_errors.size() ? c.std_errors[first + i] : 0.0;
    const double rel = se / m;
    w[i] = 1.0 / std::max(rel * rel, 1e-12);
    y[i] = std::log(m);
    k[i] = static_cast<double>(first + i);
  }
  double sw = 0.0, skw = 0.0, syw = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    sw += w[i];
    skw += w[i] * k[i];
    syw += w[i] * y[i];
  }
  const double kbar = skw / sw;
  const double ybar = syw / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    sxx += w[i] * (k[i] - kbar) * (k[i] - kbar);
    sxy += w[i] * (k[i] - kbar) * (y[i] - ybar);
  }
  const double slope = sxy / sxx;
  double rss = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double r = y[i] - ybar - slope * (k[i] - kbar);
    rss += w[i] * r * r;
  }
  const double residual_se = count > 2 ? std::sqrt(rss / static_cast<double>(count - 2) / sxx) : 0.0;
  const double model_se = std::sqrt(1.0 / sxx);
  const double se = std::max(residual_se, model_se);

  DecayFit fit;
  fit.slope = slope;
  fit.slope_se = se;
  fit.lambda_hat = std::exp(slope / 2.0);
  fit.lo = std::exp((slope - 1.96 * se) / 2.0);
  fit.hi = std::exp((slope + 1.96 * se) / 2.0);
  fit.window_first = first;
  fit.window_last = last;
  return fit;
}

}  // namespace mstab
