#pragma once

#include <cmath>
#include <cstring>
#include <functional>

#include "epsseg/graph.hpp"
#include "epsseg/rng.hpp"
#include "epsseg/tensor.hpp"

namespace epsseg::testutil {

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(double)) == 0;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

/// Central-difference check of d(scalar_fn)/d(x[i]) against analytic[i] for
/// every coordinate of x. scalar_fn must re-run the full forward pass.
inline double max_fd_error(Tensor& x, const Tensor& analytic,
                           const std::function<double()>& scalar_fn, double h = 1e-6) {
  double worst = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = scalar_fn();
    x[i] = orig - h;
    const double fm = scalar_fn();
    x[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, rel_err(analytic[i], numeric));
  }
  return worst;
}

/// Reduce an arbitrary node to a scalar (weighted sum of all entries with
/// fixed random weights), so FD checks exercise every output coordinate.
inline NodePtr weighted_scalar(Tape& t, NodePtr x, uint64_t seed) {
  const int n = static_cast<int>(x->value.numel());
  Tensor w(x->value.shape());
  Rng rng(seed);
  rng.fill_uniform(w, 0.5, 1.5);
  NodePtr prod = ops::mul(t, x, t.constant(w));
  NodePtr flat = ops::reshape(t, prod, {1, 1, n, 1});
  NodePtr mean = ops::global_avg_pool(t, flat);  // (1,1): mean over all entries
  return ops::scale_shift(t, ops::reshape(t, mean, {1}), static_cast<double>(n), 0.0);
}

}  // namespace epsseg::testutil
