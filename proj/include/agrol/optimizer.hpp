#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "agrol/numerics.hpp"

namespace agrol {

enum class OptimizerKind { Adam, AdamW };

// Adam keeps weight decay coupled (added to the gradient); AdamW decays the
// parameter directly before the moment update.
template <typename T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::int64_t step_count = 0;
  std::vector<Tensor2<T>> first_moment;
  std::vector<Tensor2<T>> second_moment;
};

template <typename T>
OptimizerState<T> make_optimizer(OptimizerKind kind, double lr,
                                 double weight_decay) {
  OptimizerState<T> s;
  s.kind = kind;
  s.lr = lr;
  s.weight_decay = weight_decay;
  return s;
}

template <typename T>
void optimizer_step(OptimizerState<T>& state, std::span<Param<T>* const> params) {
  if (state.first_moment.empty()) {
    for (const Param<T>* p : params) {
      state.first_moment.emplace_back(p->value.rows(), p->value.cols());
      state.second_moment.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("optimizer_step: parameter list changed between steps");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const bool decoupled = state.kind == OptimizerKind::AdamW;

  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = *params[i];
    Tensor2<T>& m = state.first_moment[i];
    Tensor2<T>& v = state.second_moment[i];
    if (!m.same_shape(p.value) || !p.grad.same_shape(p.value)) {
      throw DimensionError("optimizer_step: moment/gradient shape mismatch for " +
                           p.name);
    }
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* mm = m.data();
    T* vv = v.data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      double weight = static_cast<double>(w[k]);
      double grad = static_cast<double>(g[k]);
      if (state.weight_decay != 0.0) {
        if (decoupled) {
          weight *= 1.0 - state.lr * state.weight_decay;
        } else {
          grad += state.weight_decay * weight;
        }
      }
      const double m1 = state.beta1 * static_cast<double>(mm[k]) +
                        (1.0 - state.beta1) * grad;
      const double v1 = state.beta2 * static_cast<double>(vv[k]) +
                        (1.0 - state.beta2) * grad * grad;
      mm[k] = static_cast<T>(m1);
      vv[k] = static_cast<T>(v1);
      const double m_hat = m1 / bc1;
      const double v_hat = v1 / bc2;
      weight -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
      w[k] = static_cast<T>(weight);
    }
  }
}

template <typename T>
void optimizer_step(OptimizerState<T>& state, const std::vector<Param<T>*>& params) {
  optimizer_step(state, std::span<Param<T>* const>(params.data(), params.size()));
}

} // namespace agrol
