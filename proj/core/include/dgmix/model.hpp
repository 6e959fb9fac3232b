#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dgmix/ops.hpp"
#include "dgmix/rng.hpp"
#include "dgmix/tensor.hpp"

namespace dgmix {

/// Which layers are domain-specific. ClassifierOnly keeps one shared fc1 in
/// the trunk and gives each domain a 500->C classifier; Fc1AndClassifier
/// moves fc1 into each head as well.
enum class HeadScope { ClassifierOnly, Fc1AndClassifier };

/// Whether the domain-prediction branch reuses the trunk's convolution
/// weights or owns structurally identical copies.
enum class BranchConvs { Shared, Owned };

struct ModelConfig {
  std::size_t domains = 5;  // N source domains, one head each
  std::size_t classes = 10; // C
  std::size_t conv1_channels = 20;
  std::size_t conv2_channels = 50;
  std::size_t fc1_units = 500;
  std::size_t image_size = 28; // square single-channel input
  std::size_t kernel = 5;
  HeadScope head_scope = HeadScope::ClassifierOnly;
  BranchConvs branch_convs = BranchConvs::Shared;

  std::size_t conv1_out() const { return image_size - kernel + 1; }
  std::size_t pool1_out() const { return conv1_out() / 2; }
  std::size_t conv2_out() const { return pool1_out() - kernel + 1; }
  std::size_t pool2_out() const { return conv2_out() / 2; }
  std::size_t flat_units() const {
    return conv2_channels * pool2_out() * pool2_out();
  }
  std::size_t head_input_units() const {
    return head_scope == HeadScope::ClassifierOnly ? fc1_units : flat_units();
  }

  /// Throws ConfigError unless both convolution/pool stages tile exactly.
  void validate() const {
    if (domains == 0) throw ConfigError("model: domains must be at least 1");
    if (classes < 2) throw ConfigError("model: classes must be at least 2");
    if (conv1_channels == 0 || conv2_channels == 0 || fc1_units == 0) {
      throw ConfigError("model: channel and unit counts must be positive");
    }
    if (image_size < kernel || conv1_out() % 2 != 0) {
      throw ConfigError("model: image size " + std::to_string(image_size) +
                        " does not pool evenly after a " + std::to_string(kernel) +
                        "-wide convolution");
    }
    if (pool1_out() < kernel || conv2_out() % 2 != 0 || conv2_out() == 0) {
      throw ConfigError("model: second convolution does not fit the pooled " +
                        std::to_string(pool1_out()) + "x" + std::to_string(pool1_out()) +
                        " activation");
    }
  }
};

/// Default model: 28x28 input, 20/50 channel convolutions, 500-unit fc1.
inline ModelConfig default_model_config(std::size_t domains, std::size_t classes = 10) {
  ModelConfig cfg;
  cfg.domains = domains;
  cfg.classes = classes;
  cfg.validate();
  return cfg;
}

/// Reduced widths for fast finite-difference checks over every parameter.
inline ModelConfig micro_model_config() {
  ModelConfig cfg;
  cfg.domains = 3;
  cfg.classes = 4;
  cfg.conv1_channels = 3;
  cfg.conv2_channels = 5;
  cfg.fc1_units = 16;
  cfg.image_size = 14;
  cfg.kernel = 3;
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Parameters. Optional tensors (trunk fc1, per-head fc1, branch convolutions)
// are left empty when the configuration does not use them; traversal skips
// empty tensors, so the named parameter list always mirrors the architecture.
// ---------------------------------------------------------------------------

template <typename S>
struct HeadT {
  TensorT<S> fc1_w, fc1_b; // only under Fc1AndClassifier
  TensorT<S> cls_w, cls_b;
};

template <typename S>
struct BranchT {
  TensorT<S> conv1_w, conv1_b, conv2_w, conv2_b; // only under Owned
  TensorT<S> fc_w, fc_b;
};

template <typename S>
struct ModelParamsT {
  TensorT<S> conv1_w, conv1_b, conv2_w, conv2_b;
  TensorT<S> fc1_w, fc1_b; // only under ClassifierOnly
  std::vector<HeadT<S>> heads;
  BranchT<S> branch;
};

using ModelParams = ModelParamsT<double>;

namespace detail {

template <typename S, typename P, typename Fn>
void visit_params(P& p, Fn&& fn) {
  auto visit = [&](const char* name, auto& t) {
    if (t.size() != 0) fn(std::string(name), t);
  };
  visit("trunk/conv1_w", p.conv1_w);
  visit("trunk/conv1_b", p.conv1_b);
  visit("trunk/conv2_w", p.conv2_w);
  visit("trunk/conv2_b", p.conv2_b);
  visit("trunk/fc1_w", p.fc1_w);
  visit("trunk/fc1_b", p.fc1_b);
  for (std::size_t j = 0; j < p.heads.size(); ++j) {
    const std::string base = "head" + std::to_string(j + 1) + "/";
    auto named = [&](const char* leaf, auto& t) {
      if (t.size() != 0) fn(base + leaf, t);
    };
    named("fc1_w", p.heads[j].fc1_w);
    named("fc1_b", p.heads[j].fc1_b);
    named("cls_w", p.heads[j].cls_w);
    named("cls_b", p.heads[j].cls_b);
  }
  visit("branch/conv1_w", p.branch.conv1_w);
  visit("branch/conv1_b", p.branch.conv1_b);
  visit("branch/conv2_w", p.branch.conv2_w);
  visit("branch/conv2_b", p.branch.conv2_b);
  visit("branch/fc_w", p.branch.fc_w);
  visit("branch/fc_b", p.branch.fc_b);
}

}  // namespace detail

/// Visit every parameter tensor as (name, tensor) in a fixed order. The order
/// defines the checkpoint layout and the optimizer's update sequence.
template <typename S, typename Fn>
void for_each_param(ModelParamsT<S>& p, Fn&& fn) {
  detail::visit_params<S>(p, std::forward<Fn>(fn));
}

template <typename S, typename Fn>
void for_each_param(const ModelParamsT<S>& p, Fn&& fn) {
  detail::visit_params<S>(p, std::forward<Fn>(fn));
}

template <typename S>
ModelParamsT<S> zeros_like(const ModelParamsT<S>& p) {
  ModelParamsT<S> z;
  auto zero = [](const TensorT<S>& t) {
    return t.size() ? TensorT<S>(t.shape) : TensorT<S>();
  };
  z.conv1_w = zero(p.conv1_w); z.conv1_b = zero(p.conv1_b);
  z.conv2_w = zero(p.conv2_w); z.conv2_b = zero(p.conv2_b);
  z.fc1_w = zero(p.fc1_w); z.fc1_b = zero(p.fc1_b);
  z.heads.resize(p.heads.size());
  for (std::size_t j = 0; j < p.heads.size(); ++j) {
    z.heads[j].fc1_w = zero(p.heads[j].fc1_w);
    z.heads[j].fc1_b = zero(p.heads[j].fc1_b);
    z.heads[j].cls_w = zero(p.heads[j].cls_w);
    z.heads[j].cls_b = zero(p.heads[j].cls_b);
  }
  z.branch.conv1_w = zero(p.branch.conv1_w); z.branch.conv1_b = zero(p.branch.conv1_b);
  z.branch.conv2_w = zero(p.branch.conv2_w); z.branch.conv2_b = zero(p.branch.conv2_b);
  z.branch.fc_w = zero(p.branch.fc_w); z.branch.fc_b = zero(p.branch.fc_b);
  return z;
}

/// Per-tensor precision change with the structure preserved.
template <typename To, typename From>
ModelParamsT<To> cast_params(const ModelParamsT<From>& p) {
  ModelParamsT<To> out;
  auto cv = [](const TensorT<From>& t) { return t.template cast<To>(); };
  out.conv1_w = cv(p.conv1_w); out.conv1_b = cv(p.conv1_b);
  out.conv2_w = cv(p.conv2_w); out.conv2_b = cv(p.conv2_b);
  out.fc1_w = cv(p.fc1_w); out.fc1_b = cv(p.fc1_b);
  out.heads.resize(p.heads.size());
  for (std::size_t j = 0; j < p.heads.size(); ++j) {
    out.heads[j].fc1_w = cv(p.heads[j].fc1_w);
    out.heads[j].fc1_b = cv(p.heads[j].fc1_b);
    out.heads[j].cls_w = cv(p.heads[j].cls_w);
    out.heads[j].cls_b = cv(p.heads[j].cls_b);
  }
  out.branch.conv1_w = cv(p.branch.conv1_w); out.branch.conv1_b = cv(p.branch.conv1_b);
  out.branch.conv2_w = cv(p.branch.conv2_w); out.branch.conv2_b = cv(p.branch.conv2_b);
  out.branch.fc_w = cv(p.branch.fc_w); out.branch.fc_b = cv(p.branch.fc_b);
  return out;
}

namespace detail {

/// Uniform(-limit, +limit) fill with limit = sqrt(6 / (fan_in + fan_out)).
/// Samples are drawn at 64-bit and narrowed, so 32-bit runs start from the
/// same underlying values.
template <typename S>
void glorot_fill(TensorT<S>& t, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed,
                 const std::string& name) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(derive_seed(seed, "init/" + name));
  for (S& v : t.data) v = static_cast<S>(rng.uniform(-limit, limit));
}

}  // namespace detail

/// Weights uniform within the fan-balanced limit, biases zero, and the
/// branch's final layer all zero so every sample starts with uniform domain
/// weights.
template <typename S = double>
ModelParamsT<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t k = cfg.kernel;
  ModelParamsT<S> p;

  auto conv_pair = [&](TensorT<S>& w, TensorT<S>& b, std::size_t cin, std::size_t cout,
                       const std::string& name) {
    w = TensorT<S>({cout, cin, k, k});
    b = TensorT<S>({cout});
    detail::glorot_fill(w, cin * k * k, cout * k * k, seed, name);
  };
  conv_pair(p.conv1_w, p.conv1_b, 1, cfg.conv1_channels, "trunk/conv1_w");
  conv_pair(p.conv2_w, p.conv2_b, cfg.conv1_channels, cfg.conv2_channels, "trunk/conv2_w");

  auto fc_pair = [&](TensorT<S>& w, TensorT<S>& b, std::size_t in, std::size_t out,
                     const std::string& name) {
    w = TensorT<S>({in, out});
    b = TensorT<S>({out});
    detail::glorot_fill(w, in, out, seed, name);
  };

  if (cfg.head_scope == HeadScope::ClassifierOnly) {
    fc_pair(p.fc1_w, p.fc1_b, cfg.flat_units(), cfg.fc1_units, "trunk/fc1_w");
  }
  p.heads.resize(cfg.domains);
  for (std::size_t j = 0; j < cfg.domains; ++j) {
    const std::string base = "head" + std::to_string(j + 1) + "/";
    if (cfg.head_scope == HeadScope::Fc1AndClassifier) {
      fc_pair(p.heads[j].fc1_w, p.heads[j].fc1_b, cfg.flat_units(), cfg.fc1_units,
              base + "fc1_w");
    }
    fc_pair(p.heads[j].cls_w, p.heads[j].cls_b, cfg.fc1_units, cfg.classes, base + "cls_w");
  }
  if (cfg.branch_convs == BranchConvs::Owned) {
    conv_pair(p.branch.conv1_w, p.branch.conv1_b, 1, cfg.conv1_channels, "branch/conv1_w");
    conv_pair(p.branch.conv2_w, p.branch.conv2_b, cfg.conv1_channels, cfg.conv2_channels,
              "branch/conv2_w");
  }
  p.branch.fc_w = TensorT<S>({cfg.conv2_channels, cfg.domains});
  p.branch.fc_b = TensorT<S>({cfg.domains});
  return p;
}

// ---------------------------------------------------------------------------
// Convolution stack shared by the trunk and the (owned-weights) branch:
// conv -> relu -> pool -> conv -> relu -> pool.
// ---------------------------------------------------------------------------

template <typename S>
struct ConvStackCacheT {
  Conv2dCacheT<S> conv1;
  TensorT<S> pre1;
  MaxPoolCache pool1;
  Conv2dCacheT<S> conv2;
  TensorT<S> pre2;
  MaxPoolCache pool2;
  TensorT<S> pooled; // [B, conv2_channels, pool2, pool2]
};

template <typename S>
struct ConvStackGradsT {
  TensorT<S> conv1_w, conv1_b, conv2_w, conv2_b;
};

template <typename S>
ConvStackCacheT<S> conv_stack_forward(const TensorT<S>& images, const TensorT<S>& conv1_w,
                                      const TensorT<S>& conv1_b, const TensorT<S>& conv2_w,
                                      const TensorT<S>& conv2_b) {
  ConvStackCacheT<S> c;
  TensorT<S> a;
  std::tie(c.pre1, c.conv1) = conv2d_forward(images, conv1_w, conv1_b);
  a = relu(c.pre1);
  std::tie(a, c.pool1) = maxpool2(a);
  std::tie(c.pre2, c.conv2) = conv2d_forward(a, conv2_w, conv2_b);
  a = relu(c.pre2);
  std::tie(c.pooled, c.pool2) = maxpool2(a);
  return c;
}

/// Backward through the stack; image gradients are not needed (inputs are
/// data) and are skipped.
template <typename S>
ConvStackGradsT<S> conv_stack_backward(const ConvStackCacheT<S>& cache,
                                       const TensorT<S>& grad_pooled) {
  ConvStackGradsT<S> g;
  TensorT<S> d = maxpool2_backward(cache.pool2, grad_pooled);
  d = relu_backward(cache.pre2, d);
  LayerGradsT<S> c2 = conv2d_backward(cache.conv2, d);
  g.conv2_w = std::move(c2.grad_params[0]);
  g.conv2_b = std::move(c2.grad_params[1]);
  d = maxpool2_backward(cache.pool1, c2.grad_input);
  d = relu_backward(cache.pre1, d);
  auto [gw, gb] = conv2d_backward_params(cache.conv1.input, d, 1, cache.conv1.kernel.shape);
  g.conv1_w = std::move(gw);
  g.conv1_b = std::move(gb);
  return g;
}

// ---------------------------------------------------------------------------
// Trunk: convolution stack then (under the default sharing boundary) the
// shared fc1 with relu.
// ---------------------------------------------------------------------------

template <typename S>
struct TrunkCacheT {
  ConvStackCacheT<S> convs;
  TensorT<S> flat;      // [B, flat_units]
  AffineCacheT<S> fc1;  // only under ClassifierOnly
  TensorT<S> pre3;
};

/// Features for the heads: [B, 500] under the default boundary, the flat
/// [B, 800] pooled activation when fc1 is per-head.
template <typename S>
std::pair<TensorT<S>, TrunkCacheT<S>> trunk_forward(const TensorT<S>& images,
                                                    const ModelParamsT<S>& params,
                                                    const ModelConfig& cfg) {
  detail::require_rank(images, 4, "trunk_forward", "images");
  if (images.extent(1) != 1 || images.extent(2) != cfg.image_size ||
      images.extent(3) != cfg.image_size) {
    throw ShapeError("trunk_forward: images " + shape_str(images.shape) + " do not match a " +
                     std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
                     " single-channel input");
  }
  TrunkCacheT<S> cache;
  cache.convs =
      conv_stack_forward(images, params.conv1_w, params.conv1_b, params.conv2_w, params.conv2_b);
  cache.flat = cache.convs.pooled.reshaped({images.extent(0), cfg.flat_units()});
  if (cfg.head_scope == HeadScope::Fc1AndClassifier) {
    return {cache.flat, std::move(cache)};
  }
  std::tie(cache.pre3, cache.fc1) = affine_forward(cache.flat, params.fc1_w, params.fc1_b);
  TensorT<S> features = relu(cache.pre3);
  return {std::move(features), std::move(cache)};
}

// ---------------------------------------------------------------------------
// Heads: one classifier per source domain, all applied to every sample.
// ---------------------------------------------------------------------------

template <typename S>
struct HeadCacheT {
  AffineCacheT<S> fc1; // only under Fc1AndClassifier
  TensorT<S> pre;
  AffineCacheT<S> cls;
};

template <typename S>
struct HeadsCacheT {
  std::vector<HeadCacheT<S>> per_head;
};

/// scores[b, j, :] is head j's pre-softmax class scores for sample b.
template <typename S>
std::pair<TensorT<S>, HeadsCacheT<S>> heads_forward(const TensorT<S>& features,
                                                    const std::vector<HeadT<S>>& heads,
                                                    HeadScope scope) {
  detail::require_rank(features, 2, "heads_forward", "features");
  if (heads.empty()) throw ValidationError("heads_forward: no heads");
  const std::size_t b_n = features.extent(0), n = heads.size();
  const std::size_t c_n = heads[0].cls_b.extent(0);

  TensorT<S> scores({b_n, n, c_n});
  HeadsCacheT<S> cache;
  cache.per_head.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    HeadCacheT<S>& hc = cache.per_head[j];
    TensorT<S> out;
    if (scope == HeadScope::Fc1AndClassifier) {
      std::tie(hc.pre, hc.fc1) = affine_forward(features, heads[j].fc1_w, heads[j].fc1_b);
      out = relu(hc.pre);
      std::tie(out, hc.cls) = affine_forward(out, heads[j].cls_w, heads[j].cls_b);
    } else {
      std::tie(out, hc.cls) = affine_forward(features, heads[j].cls_w, heads[j].cls_b);
    }
    for (std::size_t b = 0; b < b_n; ++b) {
      for (std::size_t c = 0; c < c_n; ++c) {
        scores[(b * n + j) * c_n + c] = out[b * c_n + c];
      }
    }
  }
  return {std::move(scores), std::move(cache)};
}

// ---------------------------------------------------------------------------
// Domain-prediction branch: the convolution stack (shared weights by
// default), spatial mean over channels, one fully connected layer, softmax.
// ---------------------------------------------------------------------------

template <typename S>
struct BranchCacheT {
  ConvStackCacheT<S> convs; // only under Owned
  Shape pooled_shape;
  TensorT<S> gap; // [B, conv2_channels]
  AffineCacheT<S> fc;
  TensorT<S> w; // [B, N] rows on the simplex
};

/// Branch forward from an already-computed pooled activation (the trunk's,
/// when convolutions are shared).
template <typename S>
std::pair<TensorT<S>, BranchCacheT<S>> branch_head_forward(const TensorT<S>& pooled,
                                                           const ModelParamsT<S>& params) {
  BranchCacheT<S> cache;
  cache.pooled_shape = pooled.shape;
  cache.gap = global_avg_pool(pooled);
  TensorT<S> logits;
  std::tie(logits, cache.fc) = affine_forward(cache.gap, params.branch.fc_w, params.branch.fc_b);
  cache.w = softmax_rows(logits);
  TensorT<S> w = cache.w;
  return {std::move(w), std::move(cache)};
}

/// Standalone branch evaluation; recomputes the convolution stack (with the
/// trunk's weights when shared), bitwise identical to the fused model pass.
template <typename S>
std::pair<TensorT<S>, BranchCacheT<S>> domain_branch_forward(const TensorT<S>& images,
                                                             const ModelParamsT<S>& params,
                                                             const ModelConfig& cfg) {
  const bool owned = cfg.branch_convs == BranchConvs::Owned;
  ConvStackCacheT<S> convs =
      owned ? conv_stack_forward(images, params.branch.conv1_w, params.branch.conv1_b,
                                 params.branch.conv2_w, params.branch.conv2_b)
            : conv_stack_forward(images, params.conv1_w, params.conv1_b, params.conv2_w,
                                 params.conv2_b);
  auto [w, cache] = branch_head_forward(convs.pooled, params);
  if (owned) cache.convs = std::move(convs);
  return {std::move(w), std::move(cache)};
}

// ---------------------------------------------------------------------------
// Mixing of head scores. Training uses a per-sample switch that replaces the
// predicted weights with uniform ones; inference blends both terms
// deterministically.
// ---------------------------------------------------------------------------

/// How mix combines head scores for each sample. Deterministic mode computes
/// (1-a)*weighted + a*uniform; switched mode picks per sample between the
/// weighted and the uniform combination based on recorded draws.
struct MixPlan {
  bool deterministic = true;
  std::vector<std::uint8_t> uniform; // per-sample draws, switched mode only

  static MixPlan blend() { return MixPlan{}; }
  static MixPlan switched(std::vector<std::uint8_t> flags) {
    return MixPlan{false, std::move(flags)};
  }
};

/// One Bernoulli(alpha) draw per sample; alpha 0 and 1 are exact.
inline std::vector<std::uint8_t> draw_switches(std::size_t batch, double alpha, Rng& rng) {
  std::vector<std::uint8_t> flags(batch);
  for (auto& f : flags) f = rng.bernoulli(alpha) ? 1 : 0;
  return flags;
}

namespace detail {

template <typename S>
void check_mix_args(const TensorT<S>& scores, const TensorT<S>& w, double alpha,
                    const MixPlan& plan) {
  require_rank(scores, 3, "mix", "scores");
  require_rank(w, 2, "mix", "weights");
  if (w.extent(0) != scores.extent(0) || w.extent(1) != scores.extent(1)) {
    throw ShapeError("mix: weights " + shape_str(w.shape) + " do not match scores " +
                     shape_str(scores.shape));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ValidationError("mix: alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (!plan.deterministic && plan.uniform.size() != scores.extent(0)) {
    throw UsageError("mix: plan holds " + std::to_string(plan.uniform.size()) +
                     " switch draws for a batch of " + std::to_string(scores.extent(0)));
  }
}

// The mixing arithmetic is compared bitwise against independently written
// loops, so it must keep one rounding per multiply and per add; fused
// contraction would round differently. These few flops per sample do not
// need the fma anyway.
#if defined(__GNUC__) && !defined(__clang__)
#define DGMIX_PLAIN_FP __attribute__((optimize("-ffp-contract=off")))
#else
#define DGMIX_PLAIN_FP
#endif

/// z[b,:] = sum_j w[b,j] * scores[b,j,:], accumulated in ascending j.
template <typename S>
DGMIX_PLAIN_FP void weighted_row(const S* scores, const S* w, std::size_t n, std::size_t c_n,
                                 S* out) {
  for (std::size_t c = 0; c < c_n; ++c) out[c] = S(0);
  for (std::size_t j = 0; j < n; ++j) {
    const S wj = w[j];
    const S* srow = scores + j * c_n;
    for (std::size_t c = 0; c < c_n; ++c) out[c] += wj * srow[c];
  }
}

/// z[b,:] = (sum_j scores[b,j,:]) / N, accumulated in ascending j.
template <typename S>
DGMIX_PLAIN_FP void uniform_row(const S* scores, std::size_t n, std::size_t c_n, S* out) {
  for (std::size_t c = 0; c < c_n; ++c) out[c] = S(0);
  for (std::size_t j = 0; j < n; ++j) {
    const S* srow = scores + j * c_n;
    for (std::size_t c = 0; c < c_n; ++c) out[c] += srow[c];
  }
  const S nn = static_cast<S>(n);
  for (std::size_t c = 0; c < c_n; ++c) out[c] /= nn;
}

/// weighted[c] = (1-a)*weighted[c] + a*uniform[c].
template <typename S>
DGMIX_PLAIN_FP void blend_rows(S* weighted, const S* uniform, S a, std::size_t c_n) {
  for (std::size_t c = 0; c < c_n; ++c) {
    weighted[c] = (S(1) - a) * weighted[c] + a * uniform[c];
  }
}

}  // namespace detail

/// Fuse per-head scores into one [B, C] score row per sample.
template <typename S>
TensorT<S> mix(const TensorT<S>& scores, const TensorT<S>& w, double alpha, const MixPlan& plan) {
  detail::check_mix_args(scores, w, alpha, plan);
  const std::size_t b_n = scores.extent(0), n = scores.extent(1), c_n = scores.extent(2);
  TensorT<S> z({b_n, c_n});
  const S a = static_cast<S>(alpha);
  std::vector<S> tmp(c_n);
  for (std::size_t b = 0; b < b_n; ++b) {
    const S* srow = scores.ptr() + b * n * c_n;
    const S* wrow = w.ptr() + b * n;
    S* zrow = z.ptr() + b * c_n;
    if (plan.deterministic) {
      // endpoints return the pure combination so the identities are exact
      if (alpha == 0.0) {
        detail::weighted_row(srow, wrow, n, c_n, zrow);
      } else if (alpha == 1.0) {
        detail::uniform_row(srow, n, c_n, zrow);
      } else {
        detail::weighted_row(srow, wrow, n, c_n, zrow);
        detail::uniform_row(srow, n, c_n, tmp.data());
        detail::blend_rows(zrow, tmp.data(), a, c_n);
      }
    } else if (plan.uniform[b]) {
      detail::uniform_row(srow, n, c_n, zrow);
    } else {
      detail::weighted_row(srow, wrow, n, c_n, zrow);
    }
  }
  return z;
}

/// Gradients of mix w.r.t. scores and weights. The switch draws are
/// constants: a uniform-drawn sample contributes nothing to the weight
/// gradient, and a weighted sample's score gradient is exactly w[b,j] * dz,
/// which keeps absent-domain head gradients at exact zero under one-hot
/// weights.
template <typename S>
std::pair<TensorT<S>, TensorT<S>> mix_backward(const TensorT<S>& scores, const TensorT<S>& w,
                                               double alpha, const MixPlan& plan,
                                               const TensorT<S>& grad_z) {
  detail::check_mix_args(scores, w, alpha, plan);
  const std::size_t b_n = scores.extent(0), n = scores.extent(1), c_n = scores.extent(2);
  if (grad_z.shape != Shape{b_n, c_n}) {
    throw ShapeError("mix_backward: grad " + shape_str(grad_z.shape) + " does not match [" +
                     std::to_string(b_n) + "," + std::to_string(c_n) + "]");
  }
  TensorT<S> gs({b_n, n, c_n});
  TensorT<S> gw({b_n, n});
  const S a = static_cast<S>(alpha);
  const S inv_n = S(1) / static_cast<S>(n);
  for (std::size_t b = 0; b < b_n; ++b) {
    const S* srow = scores.ptr() + b * n * c_n;
    const S* wrow = w.ptr() + b * n;
    const S* dz = grad_z.ptr() + b * c_n;
    S* gsrow = gs.ptr() + b * n * c_n;
    S* gwrow = gw.ptr() + b * n;
    const bool uniform_sample = !plan.deterministic && plan.uniform[b];
    for (std::size_t j = 0; j < n; ++j) {
      S coef;
      if (plan.deterministic) {
        coef = alpha == 0.0 ? wrow[j]
             : alpha == 1.0 ? inv_n
                            : (S(1) - a) * wrow[j] + a * inv_n;
      } else {
        coef = uniform_sample ? inv_n : wrow[j];
      }
      S* gj = gsrow + j * c_n;
      const S* sj = srow + j * c_n;
      S dot = S(0);
      for (std::size_t c = 0; c < c_n; ++c) {
        gj[c] = coef * dz[c];
        dot += dz[c] * sj[c];
      }
      if (plan.deterministic) {
        gwrow[j] = alpha == 1.0 ? S(0) : (S(1) - a) * dot;
      } else {
        gwrow[j] = uniform_sample ? S(0) : dot;
      }
    }
  }
  return {std::move(gs), std::move(gw)};
}

/// One-hot rows from 1-based domain labels.
template <typename S = double>
TensorT<S> indicator_weights(const std::vector<int>& domain_labels, std::size_t domains) {
  TensorT<S> w({domain_labels.size(), domains});
  for (std::size_t i = 0; i < domain_labels.size(); ++i) {
    const int d = domain_labels[i];
    if (d < 1 || static_cast<std::size_t>(d) > domains) {
      throw ValidationError("indicator_weights: domain label " + std::to_string(d) +
                            " outside 1.." + std::to_string(domains));
    }
    w[i * domains + static_cast<std::size_t>(d - 1)] = S(1);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Loss: classification cross-entropy on the fused scores plus the weighted
// domain cross-entropy on the branch output.
// ---------------------------------------------------------------------------

struct LossParts {
  double total = 0;
  double cls = 0;
  double dom = 0;
};

template <typename S>
LossParts total_loss(const TensorT<S>& z, const TensorT<S>& y_onehot, const TensorT<S>& w,
                     const TensorT<S>& d_onehot, double lambda) {
  if (lambda < 0) {
    throw ValidationError("total_loss: lambda must be nonnegative, got " + std::to_string(lambda));
  }
  LossParts parts;
  parts.cls = cross_entropy(softmax_rows(z), y_onehot);
  parts.dom = cross_entropy(w, d_onehot);
  parts.total = parts.cls + lambda * parts.dom;
  return parts;
}

// ---------------------------------------------------------------------------
// Whole-model forward/backward.
// ---------------------------------------------------------------------------

template <typename S>
struct ForwardCacheT {
  ModelConfig config;
  double alpha = 0;
  MixPlan plan;
  TrunkCacheT<S> trunk;
  TensorT<S> features;
  HeadsCacheT<S> heads;
  TensorT<S> scores;
  BranchCacheT<S> branch;
  TensorT<S> w;
  TensorT<S> z;
};

using ForwardCache = ForwardCacheT<double>;

/// Full pass: trunk, every head, the domain branch, then mixing. Returns the
/// fused scores; the cache carries every activation plus the switch draws, so
/// backward and any replay reproduce this pass bitwise.
template <typename S>
std::pair<TensorT<S>, ForwardCacheT<S>> model_forward(const TensorT<S>& images,
                                                      const ModelParamsT<S>& params,
                                                      const ModelConfig& cfg, double alpha,
                                                      const MixPlan& plan) {
  ForwardCacheT<S> cache;
  cache.config = cfg;
  cache.alpha = alpha;
  cache.plan = plan;
  std::tie(cache.features, cache.trunk) = trunk_forward(images, params, cfg);
  std::tie(cache.scores, cache.heads) =
      heads_forward(cache.features, params.heads, cfg.head_scope);
  if (cfg.branch_convs == BranchConvs::Shared) {
    std::tie(cache.w, cache.branch) = branch_head_forward(cache.trunk.convs.pooled, params);
  } else {
    std::tie(cache.w, cache.branch) = domain_branch_forward(images, params, cfg);
  }
  cache.z = mix(cache.scores, cache.w, alpha, plan);
  TensorT<S> z = cache.z;
  return {std::move(z), std::move(cache)};
}

/// Gradients of mean[L_cls + lambda * L_dom] for every parameter. The
/// classification loss reaches the branch through the w-dependence of the
/// fused scores as well as through L_dom; the switch draws recorded in the
/// cache are constants.
template <typename S>
ModelParamsT<S> model_backward(const ForwardCacheT<S>& cache, const ModelParamsT<S>& params,
                               const TensorT<S>& y_onehot, const TensorT<S>& d_onehot,
                               double lambda) {
  const ModelConfig& cfg = cache.config;
  const std::size_t b_n = cache.z.extent(0);
  if (y_onehot.extent(0) != b_n || d_onehot.extent(0) != b_n) {
    throw UsageError("model_backward: label batch does not match the cached forward batch of " +
                     std::to_string(b_n));
  }
  if (lambda < 0) {
    throw ValidationError("model_backward: lambda must be nonnegative, got " +
                          std::to_string(lambda));
  }
  ModelParamsT<S> g = zeros_like(params);

  // fused classification gradient at the mixed scores
  TensorT<S> probs = softmax_rows(cache.z);
  TensorT<S> dz = softmax_ce_grad(probs, y_onehot);
  auto [dscores, dw_mix] = mix_backward(cache.scores, cache.w, cache.alpha, cache.plan, dz);

  // branch: both loss paths meet at the pre-softmax logits
  TensorT<S> du = softmax_rows_backward(cache.w, dw_mix);
  const S lam_over_b = static_cast<S>(lambda) / static_cast<S>(b_n);
  for (std::size_t i = 0; i < du.size(); ++i) {
    du[i] += lam_over_b * (cache.w[i] - d_onehot[i]);
  }
  LayerGradsT<S> bfc = affine_backward(cache.branch.fc, du);
  g.branch.fc_w = std::move(bfc.grad_params[0]);
  g.branch.fc_b = std::move(bfc.grad_params[1]);
  TensorT<S> dpooled_branch =
      global_avg_pool_backward<S>(cache.branch.pooled_shape, bfc.grad_input);

  // heads, accumulating the shared feature gradient in ascending head order
  const std::size_t n = params.heads.size(), c_n = cfg.classes;
  TensorT<S> dfeatures(cache.features.shape);
  TensorT<S> ds_j({b_n, c_n});
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t b = 0; b < b_n; ++b) {
      for (std::size_t c = 0; c < c_n; ++c) {
        ds_j[b * c_n + c] = dscores[(b * n + j) * c_n + c];
      }
    }
    const HeadCacheT<S>& hc = cache.heads.per_head[j];
    LayerGradsT<S> cls = affine_backward(hc.cls, ds_j);
    g.heads[j].cls_w = std::move(cls.grad_params[0]);
    g.heads[j].cls_b = std::move(cls.grad_params[1]);
    TensorT<S> dh = std::move(cls.grad_input);
    if (cfg.head_scope == HeadScope::Fc1AndClassifier) {
      dh = relu_backward(hc.pre, dh);
      LayerGradsT<S> fc1 = affine_backward(hc.fc1, dh);
      g.heads[j].fc1_w = std::move(fc1.grad_params[0]);
      g.heads[j].fc1_b = std::move(fc1.grad_params[1]);
      dh = std::move(fc1.grad_input);
    }
    for (std::size_t i = 0; i < dfeatures.size(); ++i) dfeatures[i] += dh[i];
  }

  // trunk fc1 (when shared), then back to the pooled activation
  TensorT<S> dflat;
  if (cfg.head_scope == HeadScope::ClassifierOnly) {
    TensorT<S> dpre3 = relu_backward(cache.trunk.pre3, dfeatures);
    LayerGradsT<S> fc1 = affine_backward(cache.trunk.fc1, dpre3);
    g.fc1_w = std::move(fc1.grad_params[0]);
    g.fc1_b = std::move(fc1.grad_params[1]);
    dflat = std::move(fc1.grad_input);
  } else {
    dflat = std::move(dfeatures);
  }
  TensorT<S> dpooled = dflat.reshaped(cache.trunk.convs.pooled.shape);

  if (cfg.branch_convs == BranchConvs::Shared) {
    // the two paths meet at the shared pooled activation
    for (std::size_t i = 0; i < dpooled.size(); ++i) dpooled[i] += dpooled_branch[i];
    ConvStackGradsT<S> cg = conv_stack_backward(cache.trunk.convs, dpooled);
    g.conv1_w = std::move(cg.conv1_w);
    g.conv1_b = std::move(cg.conv1_b);
    g.conv2_w = std::move(cg.conv2_w);
    g.conv2_b = std::move(cg.conv2_b);
  } else {
    ConvStackGradsT<S> cg = conv_stack_backward(cache.trunk.convs, dpooled);
    g.conv1_w = std::move(cg.conv1_w);
    g.conv1_b = std::move(cg.conv1_b);
    g.conv2_w = std::move(cg.conv2_w);
    g.conv2_b = std::move(cg.conv2_b);
    ConvStackGradsT<S> bg = conv_stack_backward(cache.branch.convs, dpooled_branch);
    g.branch.conv1_w = std::move(bg.conv1_w);
    g.branch.conv1_b = std::move(bg.conv1_b);
    g.branch.conv2_w = std::move(bg.conv2_w);
    g.branch.conv2_b = std::move(bg.conv2_b);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Inference.
// ---------------------------------------------------------------------------

template <typename S>
struct PredictionT {
  std::vector<int> labels;
  TensorT<S> w; // [B, N]
};

using Prediction = PredictionT<double>;

/// Deterministic-blend inference in slices of chunk samples. Class argmax
/// ties break toward the lowest index.
template <typename S>
PredictionT<S> predict(const TensorT<S>& images, const ModelParamsT<S>& params,
                       const ModelConfig& cfg, double alpha, std::size_t chunk = 250) {
  detail::require_rank(images, 4, "predict", "images");
  if (chunk == 0) throw ValidationError("predict: chunk must be positive");
  const std::size_t m = images.extent(0);
  const std::size_t px = images.extent(1) * images.extent(2) * images.extent(3);

  PredictionT<S> out;
  out.labels.reserve(m);
  out.w = TensorT<S>({m, cfg.domains});
  for (std::size_t start = 0; start < m; start += chunk) {
    const std::size_t count = std::min(chunk, m - start);
    TensorT<S> slice({count, images.extent(1), images.extent(2), images.extent(3)});
    std::copy(images.ptr() + start * px, images.ptr() + (start + count) * px, slice.ptr());
    auto [z, cache] = model_forward(slice, params, cfg, alpha, MixPlan::blend());
    for (std::size_t b = 0; b < count; ++b) {
      const S* zrow = z.ptr() + b * cfg.classes;
      std::size_t best = 0;
      for (std::size_t c = 1; c < cfg.classes; ++c) {
        if (zrow[c] > zrow[best]) best = c;
      }
      out.labels.push_back(static_cast<int>(best));
      std::copy(cache.w.ptr() + b * cfg.domains, cache.w.ptr() + (b + 1) * cfg.domains,
                out.w.ptr() + (start + b) * cfg.domains);
    }
  }
  return out;
}

}  // namespace dgmix
