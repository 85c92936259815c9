#pragma once

// Random instance generators and independent reference computations shared
// by the unit tests and the acceptance runner. Nothing here calls the
// library's solvers; the oracles use only plain arithmetic.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mstab/linalg.hpp"
#include "mstab/system_model.hpp"

namespace testsupport {

using mstab::Matrix;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(eng_);
  }
  double normal() { return std::normal_distribution<double>()(eng_); }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

inline Matrix random_matrix(Rng& r, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.entries()) v = scale * r.uniform(-1.0, 1.0);
  return m;
}

inline Matrix random_symmetric(Rng& r, std::size_t n) {
  Matrix m = random_matrix(r, n, n);
  return 0.5 * (m + m.transpose());
}

inline std::vector<double> random_probs(Rng& r, std::size_t k) {
  std::vector<double> p(k);
  double s = 0.0;
  for (double& v : p) s += (v = r.uniform(0.05, 1.0));
  for (double& v : p) v /= s;
  return p;
}

inline Matrix random_stochastic(Rng& r, std::size_t m) {
  Matrix t(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto row = random_probs(r, m);
    for (std::size_t i = 0; i < m; ++i) t(j, i) = row[i];
  }
  return t;
}

// Orthogonal matrix as a product of random Givens rotations.
inline Matrix random_orthogonal(Rng& r, std::size_t n) {
  Matrix q = Matrix::identity(n);
  for (std::size_t rep = 0; rep < 4 * n * n; ++rep) {
    const std::size_t i = r.index(0, n - 1);
    std::size_t j = r.index(0, n - 1);
    if (i == j) continue;
    const double th = r.uniform(0.0, 6.283185307179586);
    Matrix g = Matrix::identity(n);
    g(i, i) = std::cos(th);
    g(j, j) = std::cos(th);
    g(i, j) = -std::sin(th);
    g(j, i) = std::sin(th);
    q = g * q;
  }
  return q;
}

inline mstab::IidSystem random_iid(Rng& r, std::size_t n, std::size_t z) {
  std::vector<Matrix> modes;
  for (std::size_t i = 0; i < z; ++i) modes.push_back(random_matrix(r, n, n));
  return mstab::make_iid(std::move(modes), random_probs(r, z));
}

inline mstab::MarkovJumpSystem random_markov(Rng& r, std::size_t n, std::size_t m) {
  std::vector<Matrix> modes;
  for (std::size_t i = 0; i < m; ++i) modes.push_back(random_matrix(r, n, n));
  return mstab::make_markov(std::move(modes), random_stochastic(r, m));
}

inline mstab::PeriodicIidSystem random_periodic(Rng& r, std::size_t n, std::size_t period, std::size_t zmax) {
  std::vector<mstab::PeriodicStep> steps;
  for (std::size_t k = 0; k < period; ++k) {
    const std::size_t z = r.index(1, zmax);
    mstab::PeriodicStep st;
    for (std::size_t i = 0; i < z; ++i) st.modes.push_back(random_matrix(r, n, n));
    st.probs = random_probs(r, z);
    steps.push_back(std::move(st));
  }
  return mstab::make_periodic_iid(std::move(steps));
}

// Multiplies every mode matrix by c.
inline mstab::SystemModel scaled(const mstab::SystemModel& s, double c) {
  return std::visit(
      [c](auto sys) -> mstab::SystemModel {
        using T = decltype(sys);
        if constexpr (std::is_same_v<T, mstab::PeriodicIidSystem>) {
          for (auto& st : sys.steps)
            for (auto& a : st.modes) a *= c;
        } else if constexpr (std::is_same_v<T, mstab::PolytopicMartingaleSystem>) {
          for (auto& a : sys.vertices) a *= c;
        } else {
          for (auto& a : sys.modes) a *= c;
        }
        return sys;
      },
      s);
}

inline double sq_norm(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

inline std::vector<double> mul(const Matrix& a, const std::vector<double>& x) {
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) y[i] += a(i, j) * x[j];
  return y;
}

// Exact E[|x_k|^2], k = 0..horizon, by enumerating every branch of the
// process. Markov chains start from prior·Π; martingale branches follow
// xi' = (1-g) xi + g e_J with probability xi_J.
inline std::vector<double> enumerate_second_moment(const mstab::SystemModel& s, const std::vector<double>& x0,
                                                   std::size_t horizon, const std::vector<double>& prior = {},
                                                   std::size_t phase = 0) {
  std::vector<double> m(horizon + 1, 0.0);
  m[0] = sq_norm(x0);
  if (const auto* p = std::get_if<mstab::IidSystem>(&s)) {
    std::function<void(std::size_t, const std::vector<double>&, double)> rec = [&](std::size_t k, const auto& x,
                                                                                   double w) {
      if (k == horizon) return;
      for (std::size_t i = 0; i < p->modes.size(); ++i) {
        const auto y = mul(p->modes[i], x);
        const double wi = w * p->probs[i];
        m[k + 1] += wi * sq_norm(y);
        rec(k + 1, y, wi);
      }
    };
    rec(0, x0, 1.0);
  } else if (const auto* p = std::get_if<mstab::PeriodicIidSystem>(&s)) {
    std::function<void(std::size_t, const std::vector<double>&, double)> rec = [&](std::size_t k, const auto& x,
                                                                                   double w) {
      if (k == horizon) return;
      const auto& st = p->steps[(phase + k) % p->steps.size()];
      for (std::size_t i = 0; i < st.modes.size(); ++i) {
        const auto y = mul(st.modes[i], x);
        const double wi = w * st.probs[i];
        m[k + 1] += wi * sq_norm(y);
        rec(k + 1, y, wi);
      }
    };
    rec(0, x0, 1.0);
  } else if (const auto* p = std::get_if<mstab::MarkovJumpSystem>(&s)) {
    const std::size_t nm = p->modes.size();
    std::vector<double> prev = prior.empty() ? std::vector<double>(nm, 1.0 / static_cast<double>(nm)) : prior;
    std::vector<double> first(nm, 0.0);
    for (std::size_t j = 0; j < nm; ++j)
      for (std::size_t i = 0; i < nm; ++i) first[i] += prev[j] * p->transition(j, i);
    std::function<void(std::size_t, std::size_t, const std::vector<double>&, double)> rec =
        [&](std::size_t k, std::size_t mode, const auto& x, double w) {
          const auto y = mul(p->modes[mode], x);
          m[k + 1] += w * sq_norm(y);
          if (k + 1 == horizon) return;
          for (std::size_t i = 0; i < nm; ++i) {
            const double wi = w * p->transition(mode, i);
            if (wi > 0.0) rec(k + 1, i, y, wi);
          }
        };
    for (std::size_t i = 0; i < nm; ++i)
      if (first[i] > 0.0) rec(0, i, x0, first[i]);
  } else {
    const auto& pm = std::get<mstab::PolytopicMartingaleSystem>(s);
    const std::size_t z = pm.vertices.size();
    std::vector<double> xi0 = prior.empty() ? std::vector<double>(z, 1.0 / static_cast<double>(z)) : prior;
    std::function<void(std::size_t, const std::vector<double>&, const std::vector<double>&, double)> rec =
        [&](std::size_t k, const auto& xi, const auto& x, double w) {
          Matrix a(pm.n, pm.n);
          for (std::size_t i = 0; i < z; ++i) a += xi[i] * pm.vertices[i];
          const auto y = mul(a, x);
          m[k + 1] += w * sq_norm(y);
          if (k + 1 == horizon) return;
          for (std::size_t j = 0; j < z; ++j) {
            if (xi[j] <= 0.0) continue;
            std::vector<double> nx(z);
            for (std::size_t i = 0; i < z; ++i) nx[i] = (1.0 - pm.gamma) * xi[i] + (i == j ? pm.gamma : 0.0);
            rec(k + 1, nx, y, w * xi[j]);
          }
        };
    rec(0, xi0, x0, 1.0);
  }
  return m;
}

// Characteristic polynomial coefficients c_0..c_n (c_n = 1) by
// Faddeev-LeVerrier, roots by Durand-Kerner; returns max |root|.
inline double root_oracle_radius(const Matrix& a) {
  const std::size_t n = a.rows();
  std::vector<double> c(n + 1, 0.0);
  c[n] = 1.0;
  Matrix mk = Matrix::identity(n);
  Matrix am(n, n);
  for (std::size_t k = 1; k <= n; ++k) {
    am = a * mk;
    double tr = 0.0;
    for (std::size_t i = 0; i < n; ++i) tr += am(i, i);
    c[n - k] = -tr / static_cast<double>(k);
    mk = am;
    for (std::size_t i = 0; i < n; ++i) mk(i, i) += c[n - k];
  }
  using cd = std::complex<double>;
  auto eval = [&](cd z) {
    cd v = 1.0;
    for (std::size_t k = n; k-- > 0;) v = v * z + c[k];
    return v;
  };
  std::vector<cd> roots(n);
  const cd seed(0.4, 0.9);
  for (std::size_t k = 0; k < n; ++k) roots[k] = std::pow(seed, static_cast<double>(k));
  for (int it = 0; it < 2000; ++it) {
    double change = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      cd den = 1.0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != k) den *= roots[k] - roots[j];
      const cd step = eval(roots[k]) / den;
      roots[k] -= step;
      change = std::max(change, std::abs(step));
    }
    if (change < 1e-15) break;
  }
  // Newton polish
  for (auto& z : roots) {
    for (int it = 0; it < 5; ++it) {
      cd d = 0.0;
      for (std::size_t k = n; k >= 1; --k) d = d * z + static_cast<double>(k) * c[k];
      if (std::abs(d) > 0.0) z -= eval(z) / d;
    }
  }
  double r = 0.0;
  for (const auto& z : roots) r = std::max(r, std::abs(z));
  return r;
}

// Determinant by Gaussian elimination with partial pivoting.
inline double det(Matrix a) {
  const std::size_t n = a.rows();
  double d = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (a(piv, k) == 0.0) return 0.0;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      d = -d;
    }
    d *= a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return d;
}

// Smallest eigenvalue of a symmetric matrix via bisection on Sturm counts of
// the LDL^T inertia of (S - sigma I); independent of Jacobi.
inline int negative_pivots(const Matrix& s, double sigma) {
  const std::size_t n = s.rows();
  Matrix a = s;
  for (std::size_t i = 0; i < n; ++i) a(i, i) -= sigma;
  int neg = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double p = a(k, k);
    if (p == 0.0) p = 1e-300;
    if (p < 0.0) ++neg;
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / p;
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return neg;
}

inline double min_eig_bisect(const Matrix& s) {
  double bound = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) row += std::abs(s(i, j));
    bound = std::max(bound, row);
  }
  double lo = -bound - 1.0, hi = bound + 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (negative_pivots(s, mid) >= 1) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace testsupport
