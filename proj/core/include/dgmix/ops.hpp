#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <utility>
#include <vector>

#include "dgmix/tensor.hpp"

namespace dgmix {

// ---------------------------------------------------------------------------
// conv2d: valid padding, cross-correlation, per-channel bias.
// ---------------------------------------------------------------------------

template <typename S>
struct Conv2dCacheT {
  TensorT<S> input;
  TensorT<S> kernel;
  std::size_t stride = 0;  // 0 marks an unfilled cache
};

using Conv2dCache = Conv2dCacheT<double>;

namespace detail {

template <typename S>
inline void check_conv_shapes(const TensorT<S>& input, const TensorT<S>& kernel,
                              const TensorT<S>& bias, std::size_t stride) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  require_rank(bias, 1, "conv2d", "bias");
  if (stride == 0) throw ValidationError("conv2d: stride must be positive");
  if (input.extent(1) != kernel.extent(1)) {
    throw ShapeError("conv2d: input channels do not match kernel channels (input " +
                     shape_str(input.shape) + ", kernel " + shape_str(kernel.shape) + ")");
  }
  if (bias.extent(0) != kernel.extent(0)) {
    throw ShapeError("conv2d: bias does not match kernel output channels (bias " +
                     shape_str(bias.shape) + ", kernel " + shape_str(kernel.shape) + ")");
  }
  const std::size_t h = input.extent(2), w = input.extent(3);
  const std::size_t kh = kernel.extent(2), kw = kernel.extent(3);
  if (h < kh || w < kw || (h - kh) % stride != 0 || (w - kw) % stride != 0) {
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape) + " does not tile input " +
                     shape_str(input.shape) + " at stride " + std::to_string(stride));
  }
}

}  // namespace detail

template <typename S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& kernel, const TensorT<S>& bias,
                  std::size_t stride = 1) {
  detail::check_conv_shapes(input, kernel, bias, stride);
  const std::size_t b_n = input.extent(0), cin = input.extent(1);
  const std::size_t h = input.extent(2), w = input.extent(3);
  const std::size_t cout = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
  const std::size_t oh = (h - kh) / stride + 1, ow = (w - kw) / stride + 1;

  TensorT<S> out({b_n, cout, oh, ow});
  const S* in = input.ptr();
  const S* k = kernel.ptr();
  S* o = out.ptr();
  for (std::size_t b = 0; b < b_n; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      S* oplane = o + ((b * cout + co) * oh) * ow;
      const S bv = bias[co];
      for (std::size_t i = 0; i < oh * ow; ++i) oplane[i] = bv;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const S* iplane = in + ((b * cin + ci) * h) * w;
        const S* kplane = k + ((co * cin + ci) * kh) * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const S kv = kplane[ky * kw + kx];
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const S* irow = iplane + (oy * stride + ky) * w + kx;
              S* orow = oplane + oy * ow;
              if (stride == 1) {
                for (std::size_t ox = 0; ox < ow; ++ox) orow[ox] += kv * irow[ox];
              } else {
                for (std::size_t ox = 0; ox < ow; ++ox) orow[ox] += kv * irow[ox * stride];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename S>
std::pair<TensorT<S>, Conv2dCacheT<S>> conv2d_forward(const TensorT<S>& input,
                                                      const TensorT<S>& kernel,
                                                      const TensorT<S>& bias,
                                                      std::size_t stride = 1) {
  TensorT<S> out = conv2d(input, kernel, bias, stride);
  return {std::move(out), Conv2dCacheT<S>{input, kernel, stride}};
}

/// Gradient w.r.t. the convolution input. in_shape is the forward input shape.
template <typename S>
TensorT<S> conv2d_backward_input(const TensorT<S>& kernel, const TensorT<S>& grad_output,
                                 std::size_t stride, const Shape& in_shape) {
  const std::size_t b_n = in_shape[0], cin = in_shape[1], h = in_shape[2], w = in_shape[3];
  const std::size_t cout = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
  const std::size_t oh = grad_output.extent(2), ow = grad_output.extent(3);

  TensorT<S> gin(in_shape);
  const S* k = kernel.ptr();
  const S* go = grad_output.ptr();
  S* gi = gin.ptr();
  for (std::size_t b = 0; b < b_n; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      const S* goplane = go + ((b * cout + co) * oh) * ow;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        S* giplane = gi + ((b * cin + ci) * h) * w;
        const S* kplane = k + ((co * cin + ci) * kh) * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const S kv = kplane[ky * kw + kx];
            for (std::size_t oy = 0; oy < oh; ++oy) {
              S* girow = giplane + (oy * stride + ky) * w + kx;
              const S* gorow = goplane + oy * ow;
              if (stride == 1) {
                for (std::size_t ox = 0; ox < ow; ++ox) girow[ox] += kv * gorow[ox];
              } else {
                for (std::size_t ox = 0; ox < ow; ++ox) girow[ox * stride] += kv * gorow[ox];
              }
            }
          }
        }
      }
    }
  }
  return gin;
}

/// Gradients w.r.t. kernel and bias. Accumulation runs in a fixed order so
/// results are reproducible bitwise run to run.
template <typename S>
std::pair<TensorT<S>, TensorT<S>> conv2d_backward_params(const TensorT<S>& input,
                                                         const TensorT<S>& grad_output,
                                                         std::size_t stride,
                                                         const Shape& kernel_shape) {
  const std::size_t b_n = input.extent(0), cin = input.extent(1);
  const std::size_t h = input.extent(2), w = input.extent(3);
  const std::size_t cout = kernel_shape[0], kh = kernel_shape[2], kw = kernel_shape[3];
  const std::size_t oh = grad_output.extent(2), ow = grad_output.extent(3);

  TensorT<S> gk(kernel_shape);
  TensorT<S> gb({cout});
  const S* in = input.ptr();
  const S* go = grad_output.ptr();
  S* gkp = gk.ptr();
  for (std::size_t b = 0; b < b_n; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      const S* goplane = go + ((b * cout + co) * oh) * ow;
      S bacc = 0;
      for (std::size_t i = 0; i < oh * ow; ++i) bacc += goplane[i];
      gb[co] += bacc;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const S* iplane = in + ((b * cin + ci) * h) * w;
        S* gkplane = gkp + ((co * cin + ci) * kh) * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            S acc = 0;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const S* irow = iplane + (oy * stride + ky) * w + kx;
              const S* gorow = goplane + oy * ow;
              if (stride == 1) {
                for (std::size_t ox = 0; ox < ow; ++ox) acc += irow[ox] * gorow[ox];
              } else {
                for (std::size_t ox = 0; ox < ow; ++ox) acc += irow[ox * stride] * gorow[ox];
              }
            }
            gkplane[ky * kw + kx] += acc;
          }
        }
      }
    }
  }
  return {std::move(gk), std::move(gb)};
}

template <typename S>
LayerGradsT<S> conv2d_backward(const Conv2dCacheT<S>& cache, const TensorT<S>& grad_output) {
  if (cache.stride == 0 || cache.input.size() == 0) {
    throw UsageError("conv2d_backward: cache was not produced by conv2d_forward");
  }
  const std::size_t kh = cache.kernel.extent(2), kw = cache.kernel.extent(3);
  const std::size_t oh = (cache.input.extent(2) - kh) / cache.stride + 1;
  const std::size_t ow = (cache.input.extent(3) - kw) / cache.stride + 1;
  const Shape expect{cache.input.extent(0), cache.kernel.extent(0), oh, ow};
  if (grad_output.shape != expect) {
    throw ShapeError("conv2d_backward: grad_output " + shape_str(grad_output.shape) +
                     " does not match forward output " + shape_str(expect));
  }
  LayerGradsT<S> g;
  g.grad_input = conv2d_backward_input(cache.kernel, grad_output, cache.stride, cache.input.shape);
  auto [gk, gb] = conv2d_backward_params(cache.input, grad_output, cache.stride, cache.kernel.shape);
  g.grad_params.push_back(std::move(gk));
  g.grad_params.push_back(std::move(gb));
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Ties break toward the lowest row-major index.
// ---------------------------------------------------------------------------

struct MaxPoolCache {
  Shape in_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename S>
std::pair<TensorT<S>, MaxPoolCache> maxpool2(const TensorT<S>& input) {
  detail::require_rank(input, 4, "maxpool2", "input");
  const std::size_t b_n = input.extent(0), c_n = input.extent(1);
  const std::size_t h = input.extent(2), w = input.extent(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2: spatial extents must be even, got " + shape_str(input.shape));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  TensorT<S> out({b_n, c_n, oh, ow});
  MaxPoolCache cache;
  cache.in_shape = input.shape;
  cache.argmax.resize(out.size());

  const S* in = input.ptr();
  S* o = out.ptr();
  std::size_t oi = 0;
  for (std::size_t bc = 0; bc < b_n * c_n; ++bc) {
    const S* plane = in + bc * h * w;
    const std::size_t plane_base = bc * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++oi) {
        const std::size_t base = (2 * oy) * w + 2 * ox;
        // lowest row-major index wins ties: strict > comparisons below
        std::size_t best = base;
        S bv = plane[base];
        if (plane[base + 1] > bv) { bv = plane[base + 1]; best = base + 1; }
        if (plane[base + w] > bv) { bv = plane[base + w]; best = base + w; }
        if (plane[base + w + 1] > bv) { bv = plane[base + w + 1]; best = base + w + 1; }
        o[oi] = bv;
        cache.argmax[oi] = plane_base + best;
      }
    }
  }
  return {std::move(out), std::move(cache)};
}

template <typename S>
TensorT<S> maxpool2_backward(const MaxPoolCache& cache, const TensorT<S>& grad_output) {
  if (cache.in_shape.empty()) throw UsageError("maxpool2_backward: cache was not produced by maxpool2");
  if (grad_output.size() != cache.argmax.size()) {
    throw ShapeError("maxpool2_backward: grad_output " + shape_str(grad_output.shape) +
                     " does not match pooled output of " + shape_str(cache.in_shape));
  }
  TensorT<S> gin(cache.in_shape);
  for (std::size_t i = 0; i < grad_output.size(); ++i) {
    gin[cache.argmax[i]] += grad_output[i];
  }
  return gin;
}

// ---------------------------------------------------------------------------
// ReLU. Backward uses subgradient 0 at exactly 0.
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> relu(const TensorT<S>& input) {
  TensorT<S> out = input;
  for (S& v : out.data) v = v > S(0) ? v : S(0);
  return out;
}

template <typename S>
TensorT<S> relu_backward(const TensorT<S>& pre_activation, const TensorT<S>& grad_output) {
  if (!pre_activation.same_shape(grad_output)) {
    throw ShapeError("relu_backward: grad_output " + shape_str(grad_output.shape) +
                     " does not match input " + shape_str(pre_activation.shape));
  }
  TensorT<S> gin(pre_activation.shape);
  for (std::size_t i = 0; i < gin.size(); ++i) {
    gin[i] = pre_activation[i] > S(0) ? grad_output[i] : S(0);
  }
  return gin;
}

// ---------------------------------------------------------------------------
// affine: out = x W + b, rows are samples.
// ---------------------------------------------------------------------------

template <typename S>
struct AffineCacheT {
  TensorT<S> input;
  TensorT<S> weight;
};

using AffineCache = AffineCacheT<double>;

template <typename S>
TensorT<S> affine(const TensorT<S>& x, const TensorT<S>& weight, const TensorT<S>& bias) {
  detail::require_rank(x, 2, "affine", "input");
  detail::require_rank(weight, 2, "affine", "weight");
  detail::require_rank(bias, 1, "affine", "bias");
  if (x.extent(1) != weight.extent(0) || weight.extent(1) != bias.extent(0)) {
    throw ShapeError("affine: shapes do not chain: x " + shape_str(x.shape) + ", weight " +
                     shape_str(weight.shape) + ", bias " + shape_str(bias.shape));
  }
  const std::size_t b_n = x.extent(0), d = x.extent(1), k_n = weight.extent(1);
  TensorT<S> out({b_n, k_n});
  const S* xp = x.ptr();
  const S* wp = weight.ptr();
  S* o = out.ptr();
  for (std::size_t b = 0; b < b_n; ++b) {
    S* orow = o + b * k_n;
    for (std::size_t k = 0; k < k_n; ++k) orow[k] = bias[k];
    const S* xrow = xp + b * d;
    for (std::size_t i = 0; i < d; ++i) {
      const S xv = xrow[i];
      const S* wrow = wp + i * k_n;
      for (std::size_t k = 0; k < k_n; ++k) orow[k] += xv * wrow[k];
    }
  }
  return out;
}

template <typename S>
std::pair<TensorT<S>, AffineCacheT<S>> affine_forward(const TensorT<S>& x, const TensorT<S>& weight,
                                                      const TensorT<S>& bias) {
  TensorT<S> out = affine(x, weight, bias);
  return {std::move(out), AffineCacheT<S>{x, weight}};
}

template <typename S>
TensorT<S> affine_backward_input(const TensorT<S>& weight, const TensorT<S>& grad_output) {
  const std::size_t b_n = grad_output.extent(0), d = weight.extent(0), k_n = weight.extent(1);
  TensorT<S> gx({b_n, d});
  const S* wp = weight.ptr();
  const S* go = grad_output.ptr();
  S* gp = gx.ptr();
  for (std::size_t b = 0; b < b_n; ++b) {
    const S* gorow = go + b * k_n;
    S* gxrow = gp + b * d;
    for (std::size_t i = 0; i < d; ++i) {
      const S* wrow = wp + i * k_n;
      S acc = 0;
      for (std::size_t k = 0; k < k_n; ++k) acc += gorow[k] * wrow[k];
      gxrow[i] = acc;
    }
  }
  return gx;
}

template <typename S>
std::pair<TensorT<S>, TensorT<S>> affine_backward_params(const TensorT<S>& x,
                                                         const TensorT<S>& grad_output) {
  const std::size_t b_n = x.extent(0), d = x.extent(1), k_n = grad_output.extent(1);
  TensorT<S> gw({d, k_n});
  TensorT<S> gb({k_n});
  const S* xp = x.ptr();
  const S* go = grad_output.ptr();
  S* gwp = gw.ptr();
  for (std::size_t b = 0; b < b_n; ++b) {
    const S* xrow = xp + b * d;
    const S* gorow = go + b * k_n;
    for (std::size_t i = 0; i < d; ++i) {
      const S xv = xrow[i];
      S* gwrow = gwp + i * k_n;
      for (std::size_t k = 0; k < k_n; ++k) gwrow[k] += xv * gorow[k];
    }
    for (std::size_t k = 0; k < k_n; ++k) gb[k] += gorow[k];
  }
  return {std::move(gw), std::move(gb)};
}

template <typename S>
LayerGradsT<S> affine_backward(const AffineCacheT<S>& cache, const TensorT<S>& grad_output) {
  if (cache.input.size() == 0) throw UsageError("affine_backward: cache was not produced by affine_forward");
  const Shape expect{cache.input.extent(0), cache.weight.extent(1)};
  if (grad_output.shape != expect) {
    throw ShapeError("affine_backward: grad_output " + shape_str(grad_output.shape) +
                     " does not match forward output " + shape_str(expect));
  }
  LayerGradsT<S> g;
  g.grad_input = affine_backward_input(cache.weight, grad_output);
  auto [gw, gb] = affine_backward_params(cache.input, grad_output);
  g.grad_params.push_back(std::move(gw));
  g.grad_params.push_back(std::move(gb));
  return g;
}

// ---------------------------------------------------------------------------
// Global average pooling over the spatial extent.
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> global_avg_pool(const TensorT<S>& x) {
  detail::require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t b_n = x.extent(0), c_n = x.extent(1), hw = x.extent(2) * x.extent(3);
  TensorT<S> out({b_n, c_n});
  const S* xp = x.ptr();
  for (std::size_t bc = 0; bc < b_n * c_n; ++bc) {
    const S* plane = xp + bc * hw;
    S acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
    out[bc] = acc / static_cast<S>(hw);
  }
  return out;
}

template <typename S>
TensorT<S> global_avg_pool_backward(const Shape& in_shape, const TensorT<S>& grad_output) {
  const std::size_t hw = in_shape[2] * in_shape[3];
  if (grad_output.shape != Shape{in_shape[0], in_shape[1]}) {
    throw ShapeError("global_avg_pool_backward: grad_output " + shape_str(grad_output.shape) +
                     " does not match pooled " + shape_str(in_shape));
  }
  TensorT<S> gin(in_shape);
  S* gp = gin.ptr();
  const S inv = S(1) / static_cast<S>(hw);
  for (std::size_t bc = 0; bc < grad_output.size(); ++bc) {
    const S v = grad_output[bc] * inv;
    S* plane = gp + bc * hw;
    for (std::size_t i = 0; i < hw; ++i) plane[i] = v;
  }
  return gin;
}

// ---------------------------------------------------------------------------
// Row softmax with max subtraction, cross-entropy, and the fused gradient.
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& x) {
  detail::require_rank(x, 2, "softmax_rows", "input");
  if (!x.all_finite()) throw NumericError("softmax_rows: input contains non-finite values");
  const std::size_t b_n = x.extent(0), k_n = x.extent(1);
  TensorT<S> out(x.shape);
  for (std::size_t b = 0; b < b_n; ++b) {
    const S* row = x.ptr() + b * k_n;
    S* orow = out.ptr() + b * k_n;
    S m = row[0];
    for (std::size_t k = 1; k < k_n; ++k) m = std::max(m, row[k]);
    S sum = 0;
    for (std::size_t k = 0; k < k_n; ++k) {
      orow[k] = std::exp(row[k] - m);
      sum += orow[k];
    }
    const S inv = S(1) / sum;
    for (std::size_t k = 0; k < k_n; ++k) orow[k] *= inv;
  }
  return out;
}

/// Pull a gradient on softmax outputs back to its inputs: g_x = p .* (g - <g, p>).
template <typename S>
TensorT<S> softmax_rows_backward(const TensorT<S>& probs, const TensorT<S>& grad_probs) {
  if (!probs.same_shape(grad_probs)) {
    throw ShapeError("softmax_rows_backward: grad " + shape_str(grad_probs.shape) +
                     " does not match probs " + shape_str(probs.shape));
  }
  const std::size_t b_n = probs.extent(0), k_n = probs.extent(1);
  TensorT<S> gx(probs.shape);
  for (std::size_t b = 0; b < b_n; ++b) {
    const S* p = probs.ptr() + b * k_n;
    const S* g = grad_probs.ptr() + b * k_n;
    S* o = gx.ptr() + b * k_n;
    S dot = 0;
    for (std::size_t k = 0; k < k_n; ++k) dot += g[k] * p[k];
    for (std::size_t k = 0; k < k_n; ++k) o[k] = p[k] * (g[k] - dot);
  }
  return gx;
}

inline constexpr double kCrossEntropyClamp = 1e-12;

template <typename S>
void validate_one_hot(const TensorT<S>& onehot, const char* who) {
  detail::require_rank(onehot, 2, who, "one-hot labels");
  const std::size_t b_n = onehot.extent(0), k_n = onehot.extent(1);
  for (std::size_t b = 0; b < b_n; ++b) {
    std::size_t ones = 0;
    for (std::size_t k = 0; k < k_n; ++k) {
      const S v = onehot[b * k_n + k];
      if (v == S(1)) {
        ++ones;
      } else if (v != S(0)) {
        std::ostringstream os;
        os << who << ": label row " << b << " has entry " << static_cast<double>(v)
           << ", expected 0 or 1";
        throw ValidationError(os.str());
      }
    }
    if (ones != 1) {
      std::ostringstream os;
      os << who << ": label row " << b << " has " << ones << " ones, expected exactly 1";
      throw ValidationError(os.str());
    }
  }
}

/// Mean over the batch of -ln p[true class]; probabilities clamped at 1e-12.
template <typename S>
double cross_entropy(const TensorT<S>& probs, const TensorT<S>& onehot) {
  if (!probs.same_shape(onehot)) {
    throw ShapeError("cross_entropy: probs " + shape_str(probs.shape) + " vs labels " +
                     shape_str(onehot.shape));
  }
  validate_one_hot(onehot, "cross_entropy");
  const std::size_t b_n = probs.extent(0), k_n = probs.extent(1);
  double loss = 0;
  for (std::size_t b = 0; b < b_n; ++b) {
    for (std::size_t k = 0; k < k_n; ++k) {
      if (onehot[b * k_n + k] == S(1)) {
        loss -= std::log(std::max(static_cast<double>(probs[b * k_n + k]), kCrossEntropyClamp));
      }
    }
  }
  return loss / static_cast<double>(b_n);
}

/// Gradient of cross_entropy(softmax_rows(x), y) w.r.t. x: (p - y) / B.
template <typename S>
TensorT<S> softmax_ce_grad(const TensorT<S>& probs, const TensorT<S>& onehot) {
  if (!probs.same_shape(onehot)) {
    throw ShapeError("softmax_ce_grad: probs " + shape_str(probs.shape) + " vs labels " +
                     shape_str(onehot.shape));
  }
  const S inv_b = S(1) / static_cast<S>(probs.extent(0));
  TensorT<S> g(probs.shape);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (probs[i] - onehot[i]) * inv_b;
  return g;
}

/// One-hot encode labels in [0, classes).
template <typename S = double>
TensorT<S> one_hot(const std::vector<int>& labels, std::size_t classes) {
  TensorT<S> t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= classes) {
      throw ValidationError("one_hot: label " + std::to_string(c) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
    t[i * classes + static_cast<std::size_t>(c)] = S(1);
  }
  return t;
}

}  // namespace dgmix
