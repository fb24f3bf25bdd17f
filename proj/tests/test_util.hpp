#pragma once

#include "sfda/rng.hpp"
#include "sfda/types.hpp"

#include <cmath>
#include <functional>

namespace testutil {

// Random point on the C-simplex (normalized exponentials, all entries > 0).
inline sfda::Vec random_simplex(sfda::Rng& rng, int c) {
  sfda::Vec p(c);
  for (int i = 0; i < c; ++i) p[i] = rng.exponential(1.0) + 1e-6;
  p /= p.sum();
  return p;
}

inline sfda::Mat random_prob_rows(sfda::Rng& rng, int b, int c) {
  sfda::Mat rows(b, c);
  for (int i = 0; i < b; ++i) rows.row(i) = random_simplex(rng, c).transpose();
  return rows;
}

// Central finite differences of a scalar function over a flat parameter view.
inline sfda::Vec central_diff(const std::function<double()>& f, double* x, int n,
                              double eps = 1e-6) {
  sfda::Vec g(n);
  for (int i = 0; i < n; ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double hi = f();
    x[i] = saved - eps;
    const double lo = f();
    x[i] = saved;
    g[i] = (hi - lo) / (2.0 * eps);
  }
  return g;
}

// Worst-case relative disagreement with an absolute floor of 1.
inline double max_rel_err(const sfda::Vec& a, const sfda::Vec& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace testutil
