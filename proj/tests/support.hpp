#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "demorph/tensor.hpp"

namespace testing {

template <typename T = double>
demorph::Tensor<T> random_tensor(demorph::Shape shape, std::mt19937_64& rng, double lo = 0.0,
                                 double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  demorph::Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

struct FdStats {
  int checked = 0;
  int skipped = 0;
  double max_rel = 0.0;
};

// Central differences on selected coordinates of x. A coordinate is skipped when the central
// differences at step and step/2 disagree, i.e. a kink lies within one step.
inline FdStats fd_check(const std::function<double()>& f, demorph::Tensor<double>& x,
                        const demorph::Tensor<double>& analytic, const std::vector<std::size_t>& coords,
                        double step = 1e-3) {
  FdStats stats;
  for (std::size_t i : coords) {
    double& xi = x.data()[i];
    const double saved = xi;
    auto central = [&](double h) {
      xi = saved + h;
      const double fp = f();
      xi = saved - h;
      const double fm = f();
      xi = saved;
      return (fp - fm) / (2.0 * h);
    };
    const double full = central(step);
    const double half = central(step / 2);
    if (std::abs(full - half) > 1e-9 + 1e-4 * std::max(std::abs(full), std::abs(half))) {
      ++stats.skipped;
      continue;
    }
    const double a = analytic.data()[i];
    const double denom = std::max({std::abs(a), std::abs(full), 1e-7});
    stats.max_rel = std::max(stats.max_rel, std::abs(a - full) / denom);
    ++stats.checked;
  }
  return stats;
}

inline std::vector<std::size_t> all_coords(const demorph::Tensor<double>& x) {
  std::vector<std::size_t> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

inline std::vector<std::size_t> sample_coords(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t i = 0; i < count; ++i) out.push_back(pick(rng));
  return out;
}

}  // namespace testing
