#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dgmix/gradcheck.hpp"
#include "dgmix/model.hpp"
#include "dgmix/ops.hpp"
#include "dgmix/rng.hpp"

namespace dgmix {

/// One finite-difference sweep over every parameter of a model on a random
/// batch. Runs at 64-bit.
struct ModelCheckSetup {
  ModelConfig config = micro_model_config();
  std::size_t batch = 2;
  double alpha = 0.25;
  double lambda = 0.5;
  std::uint64_t seed = 17;
  double eps = 1e-5;
  bool switched = false; // per-sample switch draws instead of the blend
};

/// Build a random batch and parameters, compute analytic gradients, and
/// compare each one against central differences of the scalar loss. The
/// branch's final layer is given small random values (its zero default would
/// start the check from an unrepresentative symmetric point).
inline GradCheckReport model_grad_check(const ModelCheckSetup& setup) {
  const ModelConfig& cfg = setup.config;
  cfg.validate();

  Rng data_rng(derive_seed(setup.seed, "check/data"));
  Tensor images({setup.batch, 1, cfg.image_size, cfg.image_size});
  for (double& v : images.data) v = data_rng.uniform();
  std::vector<int> class_labels(setup.batch), domain_labels(setup.batch);
  for (auto& y : class_labels) y = static_cast<int>(data_rng.below(cfg.classes));
  for (auto& d : domain_labels) d = 1 + static_cast<int>(data_rng.below(cfg.domains));
  const Tensor y = one_hot(class_labels, cfg.classes);
  const Tensor d = indicator_weights(domain_labels, cfg.domains);

  ModelParams params = init_params(cfg, derive_seed(setup.seed, "check/init"));
  Rng branch_rng(derive_seed(setup.seed, "check/branch"));
  for (double& v : params.branch.fc_w.data) v = branch_rng.uniform(-0.5, 0.5);
  for (double& v : params.branch.fc_b.data) v = branch_rng.uniform(-0.5, 0.5);

  MixPlan plan = MixPlan::blend();
  if (setup.switched) {
    Rng switch_rng(derive_seed(setup.seed, "check/switch"));
    plan = MixPlan::switched(draw_switches(setup.batch, setup.alpha, switch_rng));
  }

  auto [z0, cache] = model_forward(images, params, cfg, setup.alpha, plan);
  ModelParams grads = model_backward(cache, params, y, d, setup.lambda);

  std::vector<std::pair<std::string, Tensor*>> param_list;
  for_each_param(params, [&](const std::string& name, Tensor& t) {
    param_list.emplace_back(name, &t);
  });
  std::vector<const Tensor*> grad_list;
  for_each_param(grads, [&](const std::string&, const Tensor& t) {
    grad_list.push_back(&t);
  });

  auto loss = [&]() {
    auto [z, c] = model_forward(images, params, cfg, setup.alpha, plan);
    return total_loss(z, y, c.w, d, setup.lambda).total;
  };
  return grad_check(loss, param_list, grad_list, setup.eps);
}

}  // namespace dgmix
