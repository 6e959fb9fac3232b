#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dgmix/checkpoint.hpp"
#include "dgmix/data.hpp"
#include "dgmix/model.hpp"
#include "dgmix/optim.hpp"
#include "dgmix/report.hpp"
#include "dgmix/rng.hpp"

namespace dgmix {

struct TrainSeeds {
  std::uint64_t data = 1;
  std::uint64_t init = 2;
  std::uint64_t switch_draws = 3;
};

struct TrainConfig {
  double alpha = 0.25;
  double lambda = 0.5;
  std::size_t batch = 250;
  std::size_t iterations = 10000;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  LrSchedule schedule;
  TrainSeeds seeds;
  std::size_t log_interval = 100;
  bool decay_biases = true;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw ConfigError("train: alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
    if (lambda < 0) {
      throw ConfigError("train: lambda must be nonnegative, got " + std::to_string(lambda));
    }
    if (base_lr <= 0) {
      throw ConfigError("train: base_lr must be positive, got " + std::to_string(base_lr));
    }
    if (momentum < 0 || momentum >= 1) {
      throw ConfigError("train: momentum must lie in [0, 1), got " + std::to_string(momentum));
    }
    if (weight_decay < 0) {
      throw ConfigError("train: weight_decay must be nonnegative, got " +
                        std::to_string(weight_decay));
    }
    if (batch == 0) throw ConfigError("train: batch must be positive");
    if (log_interval == 0) throw ConfigError("train: log_interval must be positive");
  }
};

struct TrainRecord {
  std::size_t iteration = 0;
  double lr = 0;
  double loss = 0;
  double loss_cls = 0;
  double loss_dom = 0;
  double batch_acc = 0;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  std::string csv() const {
    std::string out = "iteration,lr,loss,loss_cls,loss_dom,batch_acc\n";
    for (const TrainRecord& r : records) {
      out += std::to_string(r.iteration);
      out += ',';
      out += format_double(r.lr);
      out += ',';
      out += format_double(r.loss);
      out += ',';
      out += format_double(r.loss_cls);
      out += ',';
      out += format_double(r.loss_dom);
      out += ',';
      out += format_double(r.batch_acc);
      out += '\n';
    }
    return out;
  }
};

template <typename S>
struct TrainResultT {
  ModelParamsT<S> params;
  SgdStateT<S> state;
  TrainLog log;
};

using TrainResult = TrainResultT<double>;

namespace detail {

template <typename S>
double batch_accuracy(const TensorT<S>& z, const std::vector<int>& labels) {
  const std::size_t b_n = z.extent(0), c_n = z.extent(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < b_n; ++b) {
    const S* row = z.ptr() + b * c_n;
    std::size_t best = 0;
    for (std::size_t c = 1; c < c_n; ++c) {
      if (row[c] > row[best]) best = c;
    }
    if (static_cast<int>(best) == labels[b]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(b_n);
}

}  // namespace detail

/// Run iterations [t_begin, t_end). Every per-iteration random draw (batch
/// order, switch flags) is derived from the seeds and the iteration number
/// alone, so a resumed range continues an interrupted run bitwise.
template <typename S>
void train_range(ModelParamsT<S>& params, SgdStateT<S>& state, TrainLog& log,
                 const TrainConfig& tc, const ModelConfig& cfg, const Episode& episode,
                 std::size_t t_begin, std::size_t t_end) {
  tc.validate();
  cfg.validate();
  if (cfg.domains != episode.domains()) {
    throw ConfigError("train: model has " + std::to_string(cfg.domains) +
                      " heads but the episode has " + std::to_string(episode.domains()) +
                      " source domains");
  }
  if (tc.batch % episode.domains() != 0) {
    throw ConfigError("train: batch " + std::to_string(tc.batch) +
                      " is not divisible by the domain count " +
                      std::to_string(episode.domains()));
  }

  BatchSampler sampler(episode, tc.batch, derive_seed(tc.seeds.data, "sampler"));
  sampler.seek(t_begin);

  for (std::size_t t = t_begin; t < t_end; ++t) {
    const Batch batch = sampler.next();
    const TensorT<S> images = batch.images.template cast<S>();
    const TensorT<S> y = one_hot<S>(batch.class_labels, cfg.classes);
    const TensorT<S> d = indicator_weights<S>(batch.domain_labels, cfg.domains);

    Rng switch_rng(derive_seed(tc.seeds.switch_draws, static_cast<std::uint64_t>(t)));
    const MixPlan plan = MixPlan::switched(draw_switches(tc.batch, tc.alpha, switch_rng));

    auto [z, cache] = model_forward(images, params, cfg, tc.alpha, plan);
    const LossParts parts = total_loss(z, y, cache.w, d, tc.lambda);
    const double lr = lr_at(t, tc.base_lr, tc.schedule);
    if (!std::isfinite(parts.total)) {
      throw NumericError("train: loss diverged at iteration " + std::to_string(t) + " (lr " +
                         format_double(lr) + ", cls " + format_double(parts.cls) + ", dom " +
                         format_double(parts.dom) + ")");
    }

    if (t % tc.log_interval == 0 || t + 1 == t_end) {
      log.records.push_back(TrainRecord{t, lr, parts.total, parts.cls, parts.dom,
                                        detail::batch_accuracy(z, batch.class_labels)});
    }

    ModelParamsT<S> grads = model_backward(cache, params, y, d, tc.lambda);
    sgd_step(params, grads, state, lr, tc.momentum, tc.weight_decay, tc.decay_biases);
  }
}

/// Fresh training run over tc.iterations steps.
template <typename S = double>
TrainResultT<S> train(const TrainConfig& tc, const ModelConfig& cfg, const Episode& episode) {
  TrainResultT<S> result;
  result.params = init_params<S>(cfg, tc.seeds.init);
  result.state = make_sgd_state(result.params);
  train_range(result.params, result.state, result.log, tc, cfg, episode, 0, tc.iterations);
  return result;
}

/// Continue a loaded checkpoint to tc.iterations. The log holds only the
/// resumed iterations.
template <typename S = double>
TrainResultT<S> train_resume(const Checkpoint& ckpt, const TrainConfig& tc,
                             const Episode& episode) {
  if (ckpt.iteration > tc.iterations) {
    throw ConfigError("train: checkpoint is at iteration " + std::to_string(ckpt.iteration) +
                      ", past the configured " + std::to_string(tc.iterations));
  }
  TrainResultT<S> result;
  result.params = cast_params<S>(ckpt.params);
  result.state = SgdStateT<S>{cast_params<S>(ckpt.state.velocity)};
  train_range(result.params, result.state, result.log, tc, ckpt.config, episode, ckpt.iteration,
              tc.iterations);
  return result;
}

}  // namespace dgmix
