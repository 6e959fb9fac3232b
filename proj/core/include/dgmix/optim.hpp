#pragma once

#include <cmath>
#include <string>

#include "dgmix/model.hpp"
#include "dgmix/tensor.hpp"

namespace dgmix {

/// Inverse decay: lr(t) = base_lr * (1 + gamma*t)^(-power).
struct LrSchedule {
  double gamma = 0.001;
  double power = 0.75;
};

inline double lr_at(std::size_t t, double base_lr, const LrSchedule& schedule) {
  return base_lr * std::pow(1.0 + schedule.gamma * static_cast<double>(t), -schedule.power);
}

/// One velocity tensor per parameter tensor, all starting at zero.
template <typename S>
struct SgdStateT {
  ModelParamsT<S> velocity;
};

using SgdState = SgdStateT<double>;

template <typename S>
SgdStateT<S> make_sgd_state(const ModelParamsT<S>& params) {
  return SgdStateT<S>{zeros_like(params)};
}

/// v <- momentum*v - lr*(g + weight_decay*theta); theta <- theta + v.
/// With decay_biases off, rank-1 tensors (every bias) skip the decay term.
template <typename S>
void sgd_step(ModelParamsT<S>& params, const ModelParamsT<S>& grads, SgdStateT<S>& state,
              double lr, double momentum, double weight_decay, bool decay_biases = true) {
  std::vector<TensorT<S>*> ps, vs;
  std::vector<const TensorT<S>*> gs;
  for_each_param(params, [&](const std::string&, TensorT<S>& t) { ps.push_back(&t); });
  for_each_param(grads, [&](const std::string&, const TensorT<S>& t) { gs.push_back(&t); });
  for_each_param(state.velocity, [&](const std::string&, TensorT<S>& t) { vs.push_back(&t); });
  if (ps.size() != gs.size() || ps.size() != vs.size()) {
    throw UsageError("sgd_step: gradient/state tensor counts do not match the parameters");
  }
  const S mu = static_cast<S>(momentum);
  const S eta = static_cast<S>(lr);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    TensorT<S>& theta = *ps[i];
    const TensorT<S>& g = *gs[i];
    TensorT<S>& v = *vs[i];
    if (!theta.same_shape(g) || !theta.same_shape(v)) {
      throw UsageError("sgd_step: tensor " + std::to_string(i) + " has mismatched shapes (param " +
                       shape_str(theta.shape) + ", grad " + shape_str(g.shape) + ", velocity " +
                       shape_str(v.shape) + ")");
    }
    const S wd = (decay_biases || theta.rank() > 1) ? static_cast<S>(weight_decay) : S(0);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = mu * v[k] - eta * (g[k] + wd * theta[k]);
      theta[k] += v[k];
    }
  }
}

}  // namespace dgmix
