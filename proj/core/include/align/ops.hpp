#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "align/tensor.hpp"

// Differentiable tensor operations. Every backward rule is itself written in
// terms of these operations, so gradients can be differentiated again (the
// alignment loss differentiates through a Grad-CAM gradient).
//
// Binary elementwise operations require identical shapes; the only implicit
// broadcast is tensor-with-scalar. Use broadcast_to for anything else.
namespace align {

// elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

enum class Activation { relu, sigmoid };
Tensor activation(const Tensor& a, Activation kind);

// reductions
enum class ReduceKind { sum, mean, abs_sum };
/// Reduces over `axes` (all axes when empty). The result keeps reduced axes
/// as extent 1 when `keepdim`, otherwise drops them; a full reduction without
/// keepdim yields shape [1].
Tensor reduce(const Tensor& a, ReduceKind kind, std::vector<int> axes = {}, bool keepdim = false);
Tensor sum(const Tensor& a, std::vector<int> axes = {}, bool keepdim = false);
Tensor mean(const Tensor& a, std::vector<int> axes = {}, bool keepdim = false);
/// Maximum over `axes`; the gradient flows to the first maximal element in
/// row-major order.
Tensor amax(const Tensor& a, std::vector<int> axes, bool keepdim = false);

// shape
Tensor reshape(const Tensor& a, Shape shape);
/// Expands extent-1 axes of `a` to `shape`. Ranks must match.
Tensor broadcast_to(const Tensor& a, const Shape& shape);
/// Sums `a` down to `shape` (the adjoint of broadcast_to).
Tensor sum_to(const Tensor& a, const Shape& shape);
/// Elements [start, start+length) along `axis`.
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length);
/// Adjoint of slice: places `a` at `start` along `axis` inside zeros of extent `full`.
Tensor embed(const Tensor& a, int axis, std::int64_t start, std::int64_t full);
Tensor transpose2d(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[N,in] * weight[out,in]^T + bias[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// out[n] = a[n, index[n]]
Tensor gather_rows(const Tensor& a, std::span<const std::int64_t> index);
/// Adjoint of gather_rows: out[n, index[n]] = a[n], zero elsewhere.
Tensor scatter_rows(const Tensor& a, std::span<const std::int64_t> index, std::int64_t columns);
/// Row-wise softmax of an [N,C] tensor.
Tensor softmax_rows(const Tensor& logits);

// spatial
struct Conv2dParams {
  int stride = 1;
  int padding = 0;
};

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, Conv2dParams params);
/// Cross-correlation of input[N,C,H,W] with kernel[F,C,kh,kw]; `bias` may be
/// undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv2dParams params = {});
/// Gradient of conv2d with respect to its input, given the output gradient.
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                         Conv2dParams params);
/// Gradient of conv2d with respect to its kernel, given the output gradient.
Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                          Conv2dParams params);

/// 2x2 average pooling with stride 2; H and W must be even.
Tensor avg_pool2x2(const Tensor& a);
/// Adjoint of avg_pool2x2: spreads each value / 4 over its 2x2 window.
Tensor avg_unpool2x2(const Tensor& a);

/// Align-corners bilinear interpolation of [N,C,h,w] to [N,C,H,W] with H>=h, W>=w.
Tensor bilinear_upsample(const Tensor& a, std::int64_t height, std::int64_t width);
/// Adjoint of bilinear_upsample, mapping [N,C,H,W] back to [N,C,h,w].
Tensor bilinear_upsample_adjoint(const Tensor& a, std::int64_t height, std::int64_t width);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return mul_scalar(a, 1.0 / s); }

}  // namespace align
