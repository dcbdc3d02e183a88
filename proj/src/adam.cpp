#include "lip2us/adam.hpp"

#include <cmath>
#include <string>

namespace lip2us {

AdamState AdamState::for_params(std::span<const Tensor> params, AdamOptions options) {
  AdamState s;
  s.options = options;
  for (const auto& p : params) {
    s.m.push_back(Tensor::zeros(p.shape(), p.dtype()));
    s.v.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
  return s;
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, " + std::to_string(state.m.size()) +
                         " moment slots");
  if (state.t < 0) throw UsageError("adam_step: negative step counter");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].shape() != grads[k].shape() || params[k].shape() != state.m[k].shape() ||
        params[k].shape() != state.v[k].shape())
      throw DimensionError("adam_step: parameter " + std::to_string(k) + " has shape " +
                           to_string(params[k].shape()) + " but gradient/moments are " +
                           to_string(grads[k].shape()) + "/" + to_string(state.m[k].shape()));
    detail::check_same_dtype("adam_step", params[k], grads[k]);
  }

  state.t += 1;
  const auto& o = state.options;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    detail::dispatch(params[k].dtype(), [&]<class T>(T) {
      auto p = params[k].mutable_data<T>();
      auto g = grads[k].data<T>();
      auto m = state.m[k].mutable_data<T>();
      auto v = state.v[k].mutable_data<T>();
      const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
      const T lr = static_cast<T>(o.lr), eps = static_cast<T>(o.epsilon);
      const T c1 = static_cast<T>(bc1), c2 = static_cast<T>(bc2);
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const T m_hat = m[i] / c1;
        const T v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
    });
  }
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  adam_step(params, grads, state);
}

}  // namespace lip2us
