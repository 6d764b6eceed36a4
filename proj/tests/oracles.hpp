#pragma once

// Straight-line reference implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "align/autograd.hpp"
#include "align/gradcam.hpp"
#include "align/models.hpp"
#include "align/ops.hpp"
#include "test_support.hpp"

namespace align::testing {

inline Tensor naive_conv2d(const Tensor& in, const Tensor& k, const Tensor& bias, int stride, int pad) {
  const auto n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const auto f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const auto oh = (h + 2 * pad - kh) / stride + 1;
  const auto ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * f * oh * ow, 0.0);
  auto x = in.data();
  auto kk = k.data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < f; ++o)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = bias.defined() ? bias.data()[o] : 0.0;
          for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const auto iy = oy * stride + ky - pad;
                const auto ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x[((b * c + ch) * h + iy) * w + ix] * kk[((o * c + ch) * kh + ky) * kw + kx];
              }
          out[((b * f + o) * oh + oy) * ow + ox] = acc;
        }
  return Tensor::from_data({n, f, oh, ow}, std::move(out));
}

struct ConvConfig {
  std::int64_t n, c, f, h, w, kh, kw;
  int stride, pad;
};

inline ConvConfig random_conv_config(std::mt19937_64& rng) {
  auto pick = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (;;) {
    ConvConfig cfg{pick(1, 2), pick(1, 3), pick(1, 4), pick(3, 9), pick(3, 9), pick(1, 3), pick(1, 3),
                   pick(1, 2), pick(0, 2)};
    const auto sh = cfg.h + 2 * cfg.pad - cfg.kh;
    const auto sw = cfg.w + 2 * cfg.pad - cfg.kw;
    if (sh >= 0 && sw >= 0 && sh % cfg.stride == 0 && sw % cfg.stride == 0) return cfg;
  }
}

/// Max deviation of conv2d (and its two adjoints) from the naive loops for
/// one random configuration.
inline double conv_oracle_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ConvConfig c = random_conv_config(rng);
  Tensor x = random_tensor({c.n, c.c, c.h, c.w}, rng);
  Tensor k = random_tensor({c.f, c.c, c.kh, c.kw}, rng);
  Tensor b = random_tensor({c.f}, rng);
  const Conv2dParams p{c.stride, c.pad};
  Tensor fast = conv2d(x, k, b, p);
  Tensor slow = naive_conv2d(x, k, b, c.stride, c.pad);
  if (fast.shape() != slow.shape()) return INFINITY;
  double err = max_abs_diff(fast, slow);

  // Adjoint identities <conv(x), g> = <x, conv_input_grad(g)> = <k, conv_kernel_grad(g)>.
  Tensor g = random_tensor(slow.shape(), rng);
  Tensor no_bias;
  const double lhs = sum(mul(naive_conv2d(x, k, no_bias, c.stride, c.pad), g)).item();
  const double via_input = sum(mul(x, conv2d_input_grad(g, k, x.shape(), p))).item();
  const double via_kernel = sum(mul(k, conv2d_kernel_grad(x, g, k.shape(), p))).item();
  err = std::max({err, std::abs(lhs - via_input), std::abs(lhs - via_kernel)});
  return err;
}

inline double bilinear_reference(const std::vector<double>& src, std::int64_t h, std::int64_t w, std::int64_t H,
                                 std::int64_t W, std::int64_t Y, std::int64_t X) {
  const double sy = H > 1 ? static_cast<double>(Y) * (h - 1) / (H - 1) : 0.0;
  const double sx = W > 1 ? static_cast<double>(X) * (w - 1) / (W - 1) : 0.0;
  const auto y0 = static_cast<std::int64_t>(std::floor(sy));
  const auto x0 = static_cast<std::int64_t>(std::floor(sx));
  const auto y1 = std::min(y0 + 1, h - 1);
  const auto x1 = std::min(x0 + 1, w - 1);
  const double ty = sy - y0;
  const double tx = sx - x0;
  const double top = src[y0 * w + x0] * (1 - tx) + src[y0 * w + x1] * tx;
  const double bottom = src[y1 * w + x0] * (1 - tx) + src[y1 * w + x1] * tx;
  return top * (1 - ty) + bottom * ty;
}

struct ManualCam {
  Tensor raw;
  Tensor normalized;
};

/// Grad-CAM assembled step by step: activation, gradient of the summed class
/// scores, channel means, weighted ReLU sum, max normalization, upsampling.
inline ManualCam manual_gradcam(const ClassifierNet& net, const Tensor& x, const std::vector<std::int64_t>& y,
                                CamRoot root) {
  Tensor act;
  {
    NoGradGuard ng;
    act = net.features(x);
  }
  Tensor a = act.detach();
  a.set_requires_grad(true);
  Tensor grads;
  {
    EnableGradGuard on(true);
    Tensor logits = net.logits_from_features(a);
    Tensor scores = root == CamRoot::prob ? softmax_rows(logits) : logits;
    Tensor total = sum(gather_rows(scores, y));
    grads = grad(total, {a})[0];
  }
  const auto n = a.dim(0), k = a.dim(1), h = a.dim(2), w = a.dim(3);
  const auto H = x.dim(2), W = x.dim(3);
  auto av = act.data();
  auto gv = grads.data();
  std::vector<double> raw(n * h * w, 0.0), norm(n * H * W, 0.0);
  for (std::int64_t b = 0; b < n; ++b) {
    std::vector<double> alpha(k, 0.0);
    for (std::int64_t ch = 0; ch < k; ++ch) {
      double s = 0;
      for (std::int64_t i = 0; i < h * w; ++i) s += gv[(b * k + ch) * h * w + i];
      alpha[ch] = s / static_cast<double>(h * w);
    }
    double peak = 0;
    for (std::int64_t i = 0; i < h * w; ++i) {
      double s = 0;
      for (std::int64_t ch = 0; ch < k; ++ch) s += alpha[ch] * av[(b * k + ch) * h * w + i];
      raw[b * h * w + i] = std::max(0.0, s);
      peak = std::max(peak, raw[b * h * w + i]);
    }
    peak = std::max(peak, 1e-12);
    std::vector<double> scaled(h * w);
    for (std::int64_t i = 0; i < h * w; ++i) scaled[i] = raw[b * h * w + i] / peak;
    for (std::int64_t Y = 0; Y < H; ++Y)
      for (std::int64_t X = 0; X < W; ++X) norm[b * H * W + Y * W + X] = bilinear_reference(scaled, h, w, H, W, Y, X);
  }
  return {Tensor::from_data({n, 1, h, w}, std::move(raw)), Tensor::from_data({n, 1, H, W}, std::move(norm))};
}

/// Max deviation of explain() from the manual composition for a random
/// network, input and Grad-CAM layer.
inline double gradcam_oracle_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  ClassifierConfig cc;
  cc.num_classes = pick(2, 4);
  cc.channels.assign(pick(1, 3), 0);
  for (auto& ch : cc.channels) ch = pick(2, 5);
  cc.cam_layer_index = pick(-1, static_cast<int>(cc.channels.size()) - 1);
  ClassifierNet net(cc);
  net.init_params(seed + 11);
  const std::int64_t side = 8 << pick(0, 1);
  const std::int64_t n = pick(1, 3);
  Tensor x = random_tensor({n, 3, side, side}, rng, 0, 1);
  std::vector<std::int64_t> y(n);
  for (auto& v : y) v = pick(0, cc.num_classes - 1);
  const CamRoot root = pick(0, 1) ? CamRoot::prob : CamRoot::logit;

  ExplainOptions opts;
  opts.root = root;
  SaliencyMap fast = explain(net, x, y, opts);
  ManualCam slow = manual_gradcam(net, x, y, root);
  if (fast.raw.shape() != slow.raw.shape() || fast.normalized.shape() != slow.normalized.shape()) return INFINITY;
  double err = std::max(max_abs_diff(fast.raw, slow.raw), max_abs_diff(fast.normalized, slow.normalized));

  // The differentiable path must give the same map.
  opts.create_graph = true;
  SaliencyMap recorded = explain(net, x, y, opts);
  err = std::max(err, max_abs_diff(recorded.normalized, slow.normalized));
  return err;
}

}  // namespace align::testing
