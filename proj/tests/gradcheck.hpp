#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lip2us/tensor.hpp"

namespace lip2us::testing {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t points = 0;
  std::string worst;  // "<input>[<index>] analytic=.. numeric=.."
};

inline double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-7});
}

// Central differences of loss() against the analytic gradient at up to
// points_per_input seeded entries of each input (all entries when smaller).
inline GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                  std::size_t points_per_input, std::uint64_t seed, double step = 1e-5,
                                  const std::vector<std::string>& names = {}) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss());
  std::vector<Tensor> grads;
  for (auto& t : inputs) grads.push_back(t.grad().clone());

  GradCheckResult r;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > points_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(points_per_input);
    }
    NoGradGuard ng;
    for (std::size_t i : idx) {
      const double x = t.value(i);
      t.set_value(i, x + step);
      const double up = loss().item();
      t.set_value(i, x - step);
      const double down = loss().item();
      t.set_value(i, x);
      const double numeric = (up - down) / (2 * step);
      const double analytic = grads[k].value(i);
      const double e = relative_error(analytic, numeric);
      ++r.points;
      if (e >= r.max_rel_error) {
        r.max_rel_error = e;
        r.worst = (k < names.size() ? names[k] : "input" + std::to_string(k)) + "[" + std::to_string(i) +
                  "] analytic=" + std::to_string(analytic) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1,
                            DType dtype = DType::f64) {
  Tensor t(std::move(shape), dtype);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set_value(i, u(rng));
  return t;
}

}  // namespace lip2us::testing
