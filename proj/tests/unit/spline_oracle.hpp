#pragma once

// Dense reference for the cubic smoothing spline. Builds the roughness
// matrix K column by column from natural interpolating splines (polarization
// of the quadratic form) and solves (W + lambda K) g = W y by Gaussian
// elimination. Slow, simple, and shares no code with the library.

#include <cmath>
#include <map>
#include <vector>

#include "gustwall/flightlab.hpp"

namespace spline_oracle {

using Matrix = std::vector<std::vector<double>>;

inline std::vector<double> gauss_solve(Matrix a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    }
    std::swap(a[c], a[p]);
    std::swap(b[c], b[p]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

// Second derivatives of the natural cubic spline through (x, g).
inline std::vector<double> natural_second(const std::vector<double>& x, const std::vector<double>& g) {
  const std::size_t n = x.size();
  Matrix a(n, std::vector<double>(n, 0.0));
  std::vector<double> b(n, 0.0);
  a[0][0] = 1.0;
  a[n - 1][n - 1] = 1.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
    a[i][i - 1] = h0 / 6.0;
    a[i][i] = (h0 + h1) / 3.0;
    a[i][i + 1] = h1 / 6.0;
    b[i] = (g[i + 1] - g[i]) / h1 - (g[i] - g[i - 1]) / h0;
  }
  return gauss_solve(a, b);
}

// Integral of s''^2: s'' is linear on each interval.
inline double roughness_of(const std::vector<double>& x, const std::vector<double>& g) {
  const auto m = natural_second(x, g);
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    const double h = x[i + 1] - x[i];
    sum += h / 3.0 * (m[i] * m[i] + m[i] * m[i + 1] + m[i + 1] * m[i + 1]);
  }
  return sum;
}

struct Merged {
  std::vector<double> x, y, w;
};

inline Merged merge(const std::vector<gustwall::flightlab::Point>& pts) {
  std::map<double, std::pair<double, double>> acc;  // x -> (sum w*y, sum w)
  for (const auto& p : pts) {
    acc[p.x].first += p.w * p.y;
    acc[p.x].second += p.w;
  }
  Merged m;
  for (const auto& [x, s] : acc) {
    m.x.push_back(x);
    m.y.push_back(s.first / s.second);
    m.w.push_back(s.second);
  }
  return m;
}

inline Matrix penalty_matrix(const std::vector<double>& x) {
  const std::size_t n = x.size();
  auto unit = [n](std::size_t i, std::size_t j) {
    std::vector<double> e(n, 0.0);
    e[i] += 1.0;
    e[j] += 1.0;
    return e;
  };
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> e(n, 0.0);
    e[i] = 1.0;
    diag[i] = roughness_of(x, e);
  }
  Matrix k(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      k[i][j] = i == j ? diag[i] : (roughness_of(x, unit(i, j)) - diag[i] - diag[j]) / 2.0;
    }
  }
  return k;
}

inline std::vector<double> solve(const std::vector<gustwall::flightlab::Point>& pts, double lambda) {
  const auto m = merge(pts);
  auto a = penalty_matrix(m.x);
  std::vector<double> b(m.x.size());
  for (std::size_t i = 0; i < m.x.size(); ++i) {
    for (auto& v : a[i]) v *= lambda;
    a[i][i] += m.w[i];
    b[i] = m.w[i] * m.y[i];
  }
  return gauss_solve(a, b);
}

inline double penalty(const std::vector<gustwall::flightlab::Point>& pts, const std::vector<double>& g) {
  return roughness_of(merge(pts).x, g);
}

inline double objective(const std::vector<gustwall::flightlab::Point>& pts, const std::vector<double>& g,
                        double lambda) {
  const auto m = merge(pts);
  double sum = 0.0;
  for (const auto& p : pts) {
    const auto i = static_cast<std::size_t>(std::lower_bound(m.x.begin(), m.x.end(), p.x) - m.x.begin());
    sum += p.w * (p.y - g[i]) * (p.y - g[i]);
  }
  return sum + lambda * roughness_of(m.x, g);
}

}  // namespace spline_oracle
