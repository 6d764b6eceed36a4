#pragma once

// Finite-difference cases shared by the unit tests and the acceptance run.
// Every case builds its inputs from a seed and returns the worst relative
// error between reverse-mode and central-difference gradients.
//
// ReLU, abs, max and Grad-CAM's normalization are piecewise smooth. A random
// probe that sits within one step of a kink makes the central difference
// average two slopes. Such coordinates are recognised by the one-sided
// differences disagreeing while the analytic value matches one of them; the
// case is then redrawn from a derived seed (see run_case).

#include <cmath>
#include <functional>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "align/autograd.hpp"
#include "align/gradcam.hpp"
#include "align/gradcheck.hpp"
#include "align/losses.hpp"
#include "align/models.hpp"
#include "align/ops.hpp"
#include "test_support.hpp"

namespace align::testing {

struct FdResult {
  double error = 0;
  int kinks = 0;  ///< coordinates within one step of a kink
};

inline FdResult worst_of(std::initializer_list<FdResult> rs) {
  FdResult out;
  for (const auto& r : rs) {
    out.error = std::max(out.error, r.error);
    out.kinks += r.kinks;
  }
  return out;
}

struct GradCase {
  std::string name;
  std::function<FdResult(std::uint64_t seed)> run;
};

constexpr double kFdTolerance = 1e-4;

struct SlopeTally {
  double worst = 0;
  int kinks = 0;

  void add(double analytic, double f0, double up, double down, double step) {
    const double central = (up - down) / (2 * step);
    const double fwd = (up - f0) / step;
    const double bwd = (f0 - down) / step;
    const double scale = std::max(1.0, std::abs(central));
    const double err = std::abs(analytic - central) / scale;
    worst = std::max(worst, err);
    const bool sides_disagree = std::abs(fwd - bwd) / scale > kFdTolerance;
    const bool matches_a_side = std::abs(analytic - fwd) / scale < kFdTolerance ||
                                std::abs(analytic - bwd) / scale < kFdTolerance;
    if (err >= kFdTolerance && sides_disagree && matches_a_side) ++kinks;
  }
};

/// Central-difference error from finite_difference_check plus the kink scan.
inline FdResult fd_check(const ScalarFn& fn, const Tensor& x, double step = 1e-5) {
  FdResult out;
  out.error = finite_difference_check(fn, x, step);
  if (out.error < kFdTolerance) return out;

  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  std::vector<double> analytic(probe.numel(), 0.0);
  {
    EnableGradGuard on(true);
    Tensor y = fn(probe);
    if (y.requires_grad()) backward(y);
  }
  if (probe.has_grad()) analytic.assign(probe.grad_data().begin(), probe.grad_data().end());
  Tensor point = x.clone();
  auto v = point.mutable_data();
  const double f0 = fn(point).item();
  SlopeTally tally;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double o = v[i];
    v[i] = o + step;
    const double up = fn(point).item();
    v[i] = o - step;
    const double down = fn(point).item();
    v[i] = o;
    tally.add(analytic[i], f0, up, down, step);
  }
  out.kinks = tally.kinks;
  return out;
}

/// sum(w * y) with fixed random weights, so every output element matters
/// with a different coefficient.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5157ull);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

/// Central differences against backward() for model parameters, perturbing
/// each parameter value in place.
inline FdResult param_gradcheck(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& params,
                                double step = 1e-6) {
  for (auto p : params) p.value.clear_grad();
  backward(loss());
  const double f0 = loss().item();
  SlopeTally tally;
  for (const auto& p : params) {
    Tensor t = p.value;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad_data().begin(), t.grad_data().end());
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double o = v[i];
      v[i] = o + step;
      const double up = loss().item();
      v[i] = o - step;
      const double down = loss().item();
      v[i] = o;
      tally.add(analytic[i], f0, up, down, step);
    }
    t.clear_grad();
  }
  return {tally.worst, tally.kinks};
}

/// Zero biases put dead-ReLU regions of the next stage exactly on the kink,
/// where central differences see the mean of the one-sided slopes.
inline void jitter_biases(const std::vector<NamedTensor>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xB1A5ull);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto p : params) {
    if (p.name.size() < 5 || p.name.compare(p.name.size() - 4, 4, "bias") != 0) continue;
    for (double& v : p.value.mutable_data()) v = u(rng);
  }
}

inline ClassifierNet small_classifier(std::uint64_t seed, int classes = 3) {
  ClassifierConfig cc;
  cc.num_classes = classes;
  cc.channels = {3, 4};
  ClassifierNet net(cc);
  net.init_params(seed);
  jitter_biases(net.parameters(), seed);
  return net;
}

inline MaskerNet small_masker(std::uint64_t seed) {
  MaskerConfig mc;
  mc.hidden_channels = 3;
  MaskerNet m(mc);
  m.init_params(seed);
  jitter_biases(m.parameters(), seed);
  return m;
}

inline std::vector<std::int64_t> labels_for(std::int64_t n, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::vector<std::int64_t> y(n);
  for (auto& v : y) v = pick(rng);
  return y;
}

inline FdResult unary_case(std::uint64_t seed, const Shape& shape, double lo, double hi,
                         const std::function<Tensor(const Tensor&)>& op) {
  std::mt19937_64 rng(seed);
  Tensor x = random_tensor(shape, rng, lo, hi);
  return fd_check([&](const Tensor& t) { return weighted_sum(op(t), seed); }, x);
}

/// Checks both operands of a binary op.
inline FdResult binary_case(std::uint64_t seed, const Shape& sa, const Shape& sb, double lo, double hi,
                          const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
  std::mt19937_64 rng(seed);
  Tensor a = random_tensor(sa, rng, lo, hi);
  Tensor b = random_tensor(sb, rng, lo, hi);
  const FdResult ea = fd_check([&](const Tensor& t) { return weighted_sum(op(t, b), seed); }, a);
  const FdResult eb = fd_check([&](const Tensor& t) { return weighted_sum(op(a, t), seed); }, b);
  return worst_of({ea, eb});
}

inline std::vector<GradCase> op_grad_cases() {
  const Shape img{2, 2, 8, 8};
  const Shape mat{4, 5};
  std::vector<GradCase> c;
  auto add_unary = [&](std::string name, Shape shape, double lo, double hi, std::function<Tensor(const Tensor&)> op) {
    c.push_back({std::move(name), [=](std::uint64_t s) { return unary_case(s, shape, lo, hi, op); }});
  };
  auto add_binary = [&](std::string name, Shape sa, Shape sb, double lo, double hi,
                        std::function<Tensor(const Tensor&, const Tensor&)> op) {
    c.push_back({std::move(name), [=](std::uint64_t s) { return binary_case(s, sa, sb, lo, hi, op); }});
  };

  add_binary("add", img, img, -1, 1, [](const Tensor& a, const Tensor& b) { return add(a, b); });
  add_binary("sub", img, img, -1, 1, [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  add_binary("mul", img, img, -1, 1, [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  add_binary("div", img, img, 0.5, 2, [](const Tensor& a, const Tensor& b) { return div(a, b); });
  add_unary("neg", img, -1, 1, [](const Tensor& a) { return neg(a); });
  add_unary("add_scalar", img, -1, 1, [](const Tensor& a) { return add_scalar(a, 0.7); });
  add_unary("mul_scalar", img, -1, 1, [](const Tensor& a) { return mul_scalar(a, -1.3); });
  add_unary("exp", img, -1, 1, [](const Tensor& a) { return exp(a); });
  add_unary("log", img, 0.5, 2, [](const Tensor& a) { return log(a); });
  add_unary("sqrt", img, 0.5, 2, [](const Tensor& a) { return sqrt(a); });
  add_unary("abs", img, -1, 1, [](const Tensor& a) { return abs(a); });
  add_unary("square", img, -1, 1, [](const Tensor& a) { return square(a); });
  add_unary("relu", img, -1, 1, [](const Tensor& a) { return relu(a); });
  add_unary("sigmoid", img, -2, 2, [](const Tensor& a) { return sigmoid(a); });
  add_unary("tanh", img, -2, 2, [](const Tensor& a) { return tanh(a); });
  add_unary("clamp", img, -1, 1, [](const Tensor& a) { return clamp(a, -0.5, 0.5); });
  add_unary("reduce_sum_axes", img, -1, 1, [](const Tensor& a) { return reduce(a, ReduceKind::sum, {1, 3}, true); });
  add_unary("reduce_mean_axes", img, -1, 1, [](const Tensor& a) { return reduce(a, ReduceKind::mean, {2}); });
  add_unary("reduce_abs_sum", img, -1, 1, [](const Tensor& a) { return reduce(a, ReduceKind::abs_sum, {0, 2}); });
  add_unary("amax", img, -1, 1, [](const Tensor& a) { return amax(a, {1, 2, 3}, true); });
  add_unary("reshape", img, -1, 1, [](const Tensor& a) { return reshape(a, {4, 64}); });
  add_unary("broadcast_to", {2, 1, 8, 1}, -1, 1, [](const Tensor& a) { return broadcast_to(a, {2, 3, 8, 8}); });
  add_unary("sum_to", img, -1, 1, [](const Tensor& a) { return sum_to(a, {1, 2, 1, 8}); });
  add_unary("slice", img, -1, 1, [](const Tensor& a) { return slice(a, 3, 2, 5); });
  add_unary("embed", {2, 2, 3, 8}, -1, 1, [](const Tensor& a) { return embed(a, 2, 4, 8); });
  add_unary("transpose2d", mat, -1, 1, [](const Tensor& a) { return transpose2d(a); });
  add_binary("matmul", {3, 4}, {4, 5}, -1, 1, [](const Tensor& a, const Tensor& b) { return matmul(a, b); });
  add_unary("linear", {3, 6}, -1, 1, [](const Tensor& x) {
    std::mt19937_64 rng(3);
    return linear(x, random_tensor({4, 6}, rng), random_tensor({4}, rng));
  });
  c.push_back({"linear_weight_bias", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 Tensor x = random_tensor({3, 6}, rng);
                 Tensor w = random_tensor({4, 6}, rng);
                 Tensor b = random_tensor({4}, rng);
                 const FdResult ew = fd_check(
                     [&](const Tensor& t) { return weighted_sum(linear(x, t, b), s); }, w);
                 const FdResult eb = fd_check(
                     [&](const Tensor& t) { return weighted_sum(linear(x, w, t), s); }, b);
                 return worst_of({ew, eb});
               }});
  add_unary("gather_rows", {4, 3}, -1, 1, [](const Tensor& a) {
    const std::vector<std::int64_t> idx{2, 0, 1, 2};
    return gather_rows(a, idx);
  });
  add_unary("scatter_rows", {4}, -1, 1, [](const Tensor& a) {
    const std::vector<std::int64_t> idx{2, 0, 1, 2};
    return scatter_rows(a, idx, 3);
  });
  add_unary("softmax_rows", {4, 5}, -3, 3, [](const Tensor& a) { return softmax_rows(a); });
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      const std::string tag = "conv2d_s" + std::to_string(stride) + "_p" + std::to_string(pad);
      c.push_back({tag, [stride, pad](std::uint64_t s) {
                     std::mt19937_64 rng(s);
                     Tensor x = random_tensor({2, 2, 9, 9}, rng);
                     Tensor k = random_tensor({3, 2, 3, 3}, rng);
                     Tensor b = random_tensor({3}, rng);
                     Conv2dParams p{stride, pad};
                     const FdResult ex = fd_check(
                         [&](const Tensor& t) { return weighted_sum(conv2d(t, k, b, p), s); }, x);
                     const FdResult ek = fd_check(
                         [&](const Tensor& t) { return weighted_sum(conv2d(x, t, b, p), s); }, k);
                     const FdResult eb = fd_check(
                         [&](const Tensor& t) { return weighted_sum(conv2d(x, k, t, p), s); }, b);
                     return worst_of({ex, ek, eb});
                   }});
    }
  }
  add_unary("avg_pool2x2", img, -1, 1, [](const Tensor& a) { return avg_pool2x2(a); });
  add_unary("avg_unpool2x2", {2, 2, 4, 4}, -1, 1, [](const Tensor& a) { return avg_unpool2x2(a); });
  add_unary("bilinear_upsample", {2, 1, 3, 4}, -1, 1, [](const Tensor& a) { return bilinear_upsample(a, 8, 8); });
  add_unary("bilinear_upsample_adjoint", {2, 1, 8, 8}, -1, 1,
            [](const Tensor& a) { return bilinear_upsample_adjoint(a, 3, 4); });
  c.push_back({"second_order_tanh", [](std::uint64_t s) {
                 // d/dx of sum(w * d tanh(x)^3 / dx), needs create_graph.
                 std::mt19937_64 rng(s);
                 Tensor x = random_tensor({2, 1, 8, 8}, rng);
                 return fd_check(
                     [&](const Tensor& t) {
                       EnableGradGuard on(true);
                       Tensor u = t;
                       if (!u.requires_grad()) {
                         u = t.detach();
                         u.set_requires_grad(true);
                       }
                       Tensor y = sum(mul(tanh(u), square(tanh(u))));
                       Tensor g = grad(y, {u}, {.retain_graph = true, .create_graph = true})[0];
                       return weighted_sum(g, s);
                     },
                     x);
               }});
  return c;
}

inline std::vector<GradCase> model_grad_cases() {
  std::vector<GradCase> c;
  c.push_back({"classifier_forward", [](std::uint64_t s) {
                 ClassifierNet net = small_classifier(s);
                 std::mt19937_64 rng(s);
                 Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
                 const FdResult ex = fd_check(
                     [&](const Tensor& t) { return weighted_sum(net.forward(t).probs, s); }, x);
                 const FdResult ep = param_gradcheck(
                     [&] {
                       EnableGradGuard on(true);
                       return weighted_sum(net.forward(x).logits, s);
                     },
                     net.parameters());
                 return worst_of({ex, ep});
               }});
  c.push_back({"masker_forward", [](std::uint64_t s) {
                 MaskerNet m = small_masker(s);
                 std::mt19937_64 rng(s);
                 Tensor x = random_tensor({3, 3, 8, 8}, rng, 0, 1);
                 const FdResult ex = fd_check(
                     [&](const Tensor& t) { return weighted_sum(m.forward(t, false), s); }, x);
                 const FdResult ep = param_gradcheck(
                     [&] {
                       EnableGradGuard on(true);
                       return weighted_sum(m.forward(x, false), s);
                     },
                     m.parameters());
                 return worst_of({ex, ep});
               }});
  for (CamRoot root : {CamRoot::prob, CamRoot::logit}) {
    const std::string tag = root == CamRoot::prob ? "gradcam_prob" : "gradcam_logit";
    c.push_back({tag, [root](std::uint64_t s) {
                   ClassifierNet net = small_classifier(s);
                   std::mt19937_64 rng(s);
                   Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
                   const auto y = labels_for(2, 3, s);
                   const FdResult ex = fd_check(
                       [&](const Tensor& t) {
                         EnableGradGuard on(true);
                         return weighted_sum(explain_recorded(net.forward(t), y, 8, 8, root).normalized, s);
                       },
                       x);
                   const FdResult ep = param_gradcheck(
                       [&] {
                         EnableGradGuard on(true);
                         return weighted_sum(explain_recorded(net.forward(x), y, 8, 8, root).normalized, s);
                       },
                       net.parameters());
                   return worst_of({ex, ep});
                 }});
  }
  return c;
}

inline std::vector<GradCase> loss_grad_cases() {
  std::vector<GradCase> c;
  c.push_back({"loss_cls", [](std::uint64_t s) {
                 const auto y = labels_for(4, 5, s);
                 return unary_case(s, {4, 5}, -2, 2, [&](const Tensor& z) { return loss_cls(softmax_rows(z), y); });
               }});
  c.push_back({"loss_egl", [](std::uint64_t s) {
                 std::mt19937_64 rng(s + 1);
                 Tensor mask = random_tensor({2, 1, 8, 8}, rng, 0, 1);
                 return unary_case(s, {2, 1, 8, 8}, 0.05, 0.95, [&](const Tensor& cam) { return loss_egl(cam, mask); });
               }});
  c.push_back({"loss_egl_l1", [](std::uint64_t s) {
                 std::mt19937_64 rng(s + 1);
                 Tensor mask = random_tensor({2, 1, 8, 8}, rng, 0, 1);
                 return unary_case(s, {2, 1, 8, 8}, 0, 1, [&](const Tensor& cam) { return loss_egl_l1(cam, mask); });
               }});
  c.push_back({"loss_sparsity", [](std::uint64_t s) {
                 return unary_case(s, {2, 1, 8, 8}, 0, 1, [](const Tensor& m) { return loss_sparsity(m); });
               }});
  c.push_back({"loss_smooth", [](std::uint64_t s) {
                 return unary_case(s, {2, 1, 8, 8}, 0, 1, [](const Tensor& m) { return loss_smooth(m); });
               }});
  c.push_back({"loss_dist", [](std::uint64_t s) {
                 ClassifierNet net = small_classifier(s);
                 std::mt19937_64 rng(s);
                 Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
                 const auto y = labels_for(2, 3, s);
                 return unary_case(s, {2, 1, 8, 8}, 0, 1, [&](const Tensor& m) {
                   EnableGradGuard on(true);
                   return loss_dist(dist(net, x, m, y));
                 });
               }});
  c.push_back({"loss_mask_total", [](std::uint64_t s) {
                 ClassifierNet net = small_classifier(s);
                 MaskerNet m = small_masker(s + 7);
                 std::mt19937_64 rng(s);
                 Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
                 const auto y = labels_for(2, 3, s);
                 LossConfig cfg;
                 return param_gradcheck([&] { return loss_mask_total(x, y, net, m, cfg).total; }, m.parameters());
               }});
  c.push_back({"loss_reg", [](std::uint64_t s) {
                 ClassifierNet net = small_classifier(s);
                 std::mt19937_64 rng(s);
                 Tensor xi = random_tensor({2, 3, 8, 8}, rng, 0, 1);
                 Tensor xj = random_tensor({2, 3, 8, 8}, rng, 0, 1);
                 const auto y = labels_for(2, 3, s);
                 LossConfig cfg;
                 return param_gradcheck(
                     [&] {
                       Tensor mixed = mix(xi, xj, 0.3);
                       return loss_reg(net, xi, xj, mixed, 0.3, y, cfg).total;
                     },
                     net.parameters());
               }});
  c.push_back({"loss_clf_total", [](std::uint64_t s) {
                 ClassifierNet net = small_classifier(s);
                 MaskerNet m = small_masker(s + 7);
                 std::mt19937_64 rng(s);
                 ClassifierBatch batch;
                 batch.x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
                 batch.partner = random_tensor({2, 3, 8, 8}, rng, 0, 1);
                 batch.labels = labels_for(2, 3, s);
                 batch.beta = 0.6;
                 LossConfig cfg;
                 return param_gradcheck([&] { return loss_clf_total(batch, net, &m, cfg).total; }, net.parameters());
               }});
  return c;
}

inline std::vector<GradCase> all_grad_cases() {
  auto c = op_grad_cases();
  for (auto& m : model_grad_cases()) c.push_back(std::move(m));
  for (auto& l : loss_grad_cases()) c.push_back(std::move(l));
  return c;
}

/// Runs a case at `seed`; while the probe sits on a kink, redraws it from
/// derived seeds (at most four times). `redraws` counts the redraws.
inline FdResult run_case(const GradCase& c, std::uint64_t seed, int* redraws = nullptr) {
  FdResult r = c.run(seed);
  for (std::uint64_t attempt = 1; r.kinks > 0 && attempt <= 4; ++attempt) {
    if (redraws) ++*redraws;
    r = c.run(seed + 1000 * attempt);
  }
  return r;
}

}  // namespace align::testing
