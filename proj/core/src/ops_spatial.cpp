#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

#include "align/ops.hpp"

namespace align {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

struct ConvGeometry {
  std::int64_t batch, channels, height, width;
  std::int64_t filters, kh, kw;
  std::int64_t out_h, out_w;
  int stride, padding;

  std::int64_t patch() const { return channels * kh * kw; }
  std::int64_t positions() const { return out_h * out_w; }
};

ConvGeometry geometry(const Shape& input, const Shape& kernel, Conv2dParams p) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw std::invalid_argument("conv2d: expected NCHW input and FCkk kernel, got " + shape_str(input) + " and " +
                                shape_str(kernel));
  }
  if (input[1] != kernel[1]) {
    throw std::invalid_argument("conv2d: channel mismatch between input " + shape_str(input) + " and kernel " +
                                shape_str(kernel));
  }
  if (p.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (p.padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  const auto padded_h = input[2] + 2 * p.padding;
  const auto padded_w = input[3] + 2 * p.padding;
  if (kernel[2] > padded_h || kernel[3] > padded_w) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(kernel) + " larger than padded input " +
                                shape_str(input));
  }
  if ((padded_h - kernel[2]) % p.stride != 0 || (padded_w - kernel[3]) % p.stride != 0) {
    throw std::invalid_argument("conv2d: stride " + std::to_string(p.stride) + " does not divide input " +
                                shape_str(input) + " for kernel " + shape_str(kernel));
  }
  return ConvGeometry{input[0],
                      input[1],
                      input[2],
                      input[3],
                      kernel[0],
                      kernel[2],
                      kernel[3],
                      (padded_h - kernel[2]) / p.stride + 1,
                      (padded_w - kernel[3]) / p.stride + 1,
                      p.stride,
                      p.padding};
}

// cols[(c*kh+i)*kw+j, oy*out_w+ox] = x[c, oy*s+i-p, ox*s+j-p] (zero outside)
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const auto positions = g.positions();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * positions;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = oy * g.stride + i - g.padding;
          double* dst = row + oy * g.out_w;
          if (y < 0 || y >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.height + y) * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const auto xx = ox * g.stride + j - g.padding;
            dst[ox] = (xx < 0 || xx >= g.width) ? 0.0 : src[xx];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* x) {
  const auto positions = g.positions();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * positions;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = oy * g.stride + i - g.padding;
          if (y < 0 || y >= g.height) continue;
          double* dst = x + (c * g.height + y) * g.width;
          const double* src = row + oy * g.out_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const auto xx = ox * g.stride + j - g.padding;
            if (xx >= 0 && xx < g.width) dst[xx] += src[ox];
          }
        }
      }
    }
  }
}

std::vector<double> conv_forward(std::span<const double> x, std::span<const double> k, const ConvGeometry& g) {
  std::vector<double> out(static_cast<std::size_t>(g.batch * g.filters * g.positions()));
  std::vector<double> cols(static_cast<std::size_t>(g.patch() * g.positions()));
  ConstMap kernel(k.data(), g.filters, g.patch());
  for (std::int64_t n = 0; n < g.batch; ++n) {
    im2col(x.data() + n * g.channels * g.height * g.width, g, cols.data());
    MutMap(out.data() + n * g.filters * g.positions(), g.filters, g.positions()).noalias() =
        kernel * ConstMap(cols.data(), g.patch(), g.positions());
  }
  return out;
}

std::vector<double> conv_input_grad(std::span<const double> grad_out, std::span<const double> k,
                                    const ConvGeometry& g) {
  std::vector<double> out(static_cast<std::size_t>(g.batch * g.channels * g.height * g.width), 0.0);
  RowMatrix cols(g.patch(), g.positions());
  ConstMap kernel(k.data(), g.filters, g.patch());
  for (std::int64_t n = 0; n < g.batch; ++n) {
    cols.noalias() = kernel.transpose() * ConstMap(grad_out.data() + n * g.filters * g.positions(), g.filters,
                                                   g.positions());
    col2im_add(cols.data(), g, out.data() + n * g.channels * g.height * g.width);
  }
  return out;
}

std::vector<double> conv_kernel_grad(std::span<const double> x, std::span<const double> grad_out,
                                     const ConvGeometry& g) {
  RowMatrix acc = RowMatrix::Zero(g.filters, g.patch());
  std::vector<double> cols(static_cast<std::size_t>(g.patch() * g.positions()));
  for (std::int64_t n = 0; n < g.batch; ++n) {
    im2col(x.data() + n * g.channels * g.height * g.width, g, cols.data());
    acc.noalias() += ConstMap(grad_out.data() + n * g.filters * g.positions(), g.filters, g.positions()) *
                     ConstMap(cols.data(), g.patch(), g.positions()).transpose();
  }
  return {acc.data(), acc.data() + acc.size()};
}

void require_output_shape(const Tensor& grad_out, const ConvGeometry& g, const char* op) {
  const Shape expected{g.batch, g.filters, g.out_h, g.out_w};
  if (grad_out.shape() != expected) {
    throw std::invalid_argument(std::string(op) + ": gradient shape " + shape_str(grad_out.shape()) +
                                " does not match convolution output " + shape_str(expected));
  }
}

}  // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, Conv2dParams params) {
  const auto g = geometry(input, kernel, params);
  return {g.batch, g.filters, g.out_h, g.out_w};
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv2dParams params) {
  const auto g = geometry(input.shape(), kernel.shape(), params);
  auto out = conv_forward(input.data(), kernel.data(), g);
  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) {
    if (bias.shape() != Shape{g.filters}) {
      throw std::invalid_argument("conv2d: bias " + shape_str(bias.shape()) + " does not match kernel " +
                                  shape_str(kernel.shape()));
    }
    auto b = bias.data();
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t f = 0; f < g.filters; ++f) {
        double* dst = out.data() + (n * g.filters + f) * g.positions();
        for (std::int64_t p = 0; p < g.positions(); ++p) dst[p] += b[static_cast<std::size_t>(f)];
      }
    inputs.push_back(bias);
  }
  Shape out_shape{g.batch, g.filters, g.out_h, g.out_w};
  return record(make_tensor(out_shape, std::move(out)), "conv2d", std::move(inputs),
                [params](const Tensor& grad, const std::vector<Tensor>& in, const std::vector<bool>& wanted) {
                  std::vector<Tensor> result(in.size());
                  if (wanted[0]) result[0] = conv2d_input_grad(grad, in[1], in[0].shape(), params);
                  if (wanted[1]) result[1] = conv2d_kernel_grad(in[0], grad, in[1].shape(), params);
                  if (in.size() > 2 && wanted[2]) result[2] = sum(grad, {0, 2, 3});
                  return result;
                });
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                         Conv2dParams params) {
  const auto g = geometry(input_shape, kernel.shape(), params);
  require_output_shape(grad_out, g, "conv2d_input_grad");
  auto out = conv_input_grad(grad_out.data(), kernel.data(), g);
  return record(make_tensor(input_shape, std::move(out)), "conv2d_input_grad", {grad_out, kernel},
                [params](const Tensor& grad, const std::vector<Tensor>& in, const std::vector<bool>& wanted) {
                  Tensor g_out, g_kernel;
                  if (wanted[0]) g_out = conv2d(grad, in[1], Tensor(), params);
                  if (wanted[1]) g_kernel = conv2d_kernel_grad(grad, in[0], in[1].shape(), params);
                  return std::vector<Tensor>{g_out, g_kernel};
                });
}

Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                          Conv2dParams params) {
  const auto g = geometry(input.shape(), kernel_shape, params);
  require_output_shape(grad_out, g, "conv2d_kernel_grad");
  auto out = conv_kernel_grad(input.data(), grad_out.data(), g);
  return record(make_tensor(kernel_shape, std::move(out)), "conv2d_kernel_grad", {input, grad_out},
                [params](const Tensor& grad, const std::vector<Tensor>& in, const std::vector<bool>& wanted) {
                  Tensor g_in, g_out;
                  if (wanted[0]) g_in = conv2d_input_grad(in[1], grad, in[0].shape(), params);
                  if (wanted[1]) g_out = conv2d(in[0], grad, Tensor(), params);
                  return std::vector<Tensor>{g_in, g_out};
                });
}

Tensor avg_pool2x2(const Tensor& a) {
  const auto& s = a.shape();
  if (s.size() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0) {
    throw std::invalid_argument("avg_pool2x2: expected NCHW with even H and W, got " + shape_str(s));
  }
  const auto planes = s[0] * s[1];
  const auto h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(planes * oh * ow));
  auto src = a.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* in = src.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x) {
        const double* q = in + 2 * y * w + 2 * x;
        dst[y * ow + x] = 0.25 * (q[0] + q[1] + q[w] + q[w + 1]);
      }
  }
  return record(make_tensor({s[0], s[1], oh, ow}, std::move(out)), "avg_pool2x2", {a},
                [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{avg_unpool2x2(g)};
                });
}

Tensor avg_unpool2x2(const Tensor& a) {
  const auto& s = a.shape();
  if (s.size() != 4) throw std::invalid_argument("avg_unpool2x2: expected NCHW, got " + shape_str(s));
  const auto planes = s[0] * s[1];
  const auto h = s[2], w = s[3], oh = 2 * h, ow = 2 * w;
  std::vector<double> out(static_cast<std::size_t>(planes * oh * ow));
  auto src = a.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* in = src.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x) dst[y * ow + x] = 0.25 * in[(y / 2) * w + x / 2];
  }
  return record(make_tensor({s[0], s[1], oh, ow}, std::move(out)), "avg_unpool2x2", {a},
                [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{avg_pool2x2(g)};
                });
}

namespace {

struct Tap {
  std::int64_t lo, hi;
  double t;  // weight of `hi`
};

// Align-corners source taps: output index i maps to i*(in-1)/(out-1).
std::vector<Tap> interpolation_taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  for (std::int64_t i = 0; i < out; ++i) {
    const double pos = out > 1 ? static_cast<double>(i * (in - 1)) / static_cast<double>(out - 1) : 0.0;
    auto lo = static_cast<std::int64_t>(std::floor(pos));
    lo = std::min(lo, in - 1);
    const auto hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, pos - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& a, std::int64_t height, std::int64_t width) {
  const auto& s = a.shape();
  if (s.size() != 4) throw std::invalid_argument("bilinear_upsample: expected NCHW, got " + shape_str(s));
  if (height < s[2] || width < s[3]) {
    throw std::invalid_argument("bilinear_upsample: target " + std::to_string(height) + "x" + std::to_string(width) +
                                " would downsample " + shape_str(s));
  }
  const auto planes = s[0] * s[1];
  const auto h = s[2], w = s[3];
  const auto ty = interpolation_taps(h, height);
  const auto tx = interpolation_taps(w, width);
  std::vector<double> out(static_cast<std::size_t>(planes * height * width));
  auto src = a.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* in = src.data() + p * h * w;
    double* dst = out.data() + p * height * width;
    for (std::int64_t y = 0; y < height; ++y) {
      const auto& vy = ty[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < width; ++x) {
        const auto& vx = tx[static_cast<std::size_t>(x)];
        const double top = (1.0 - vx.t) * in[vy.lo * w + vx.lo] + vx.t * in[vy.lo * w + vx.hi];
        const double bottom = (1.0 - vx.t) * in[vy.hi * w + vx.lo] + vx.t * in[vy.hi * w + vx.hi];
        dst[y * width + x] = (1.0 - vy.t) * top + vy.t * bottom;
      }
    }
  }
  return record(make_tensor({s[0], s[1], height, width}, std::move(out)), "bilinear_upsample", {a},
                [h, w](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{bilinear_upsample_adjoint(g, h, w)};
                });
}

Tensor bilinear_upsample_adjoint(const Tensor& a, std::int64_t height, std::int64_t width) {
  const auto& s = a.shape();
  if (s.size() != 4 || s[2] < height || s[3] < width) {
    throw std::invalid_argument("bilinear_upsample_adjoint: cannot map " + shape_str(s) + " to " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  const auto planes = s[0] * s[1];
  const auto big_h = s[2], big_w = s[3];
  const auto ty = interpolation_taps(height, big_h);
  const auto tx = interpolation_taps(width, big_w);
  std::vector<double> out(static_cast<std::size_t>(planes * height * width), 0.0);
  auto src = a.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* in = src.data() + p * big_h * big_w;
    double* dst = out.data() + p * height * width;
    for (std::int64_t y = 0; y < big_h; ++y) {
      const auto& vy = ty[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < big_w; ++x) {
        const auto& vx = tx[static_cast<std::size_t>(x)];
        const double v = in[y * big_w + x];
        dst[vy.lo * width + vx.lo] += (1.0 - vy.t) * (1.0 - vx.t) * v;
        dst[vy.lo * width + vx.hi] += (1.0 - vy.t) * vx.t * v;
        dst[vy.hi * width + vx.lo] += vy.t * (1.0 - vx.t) * v;
        dst[vy.hi * width + vx.hi] += vy.t * vx.t * v;
      }
    }
  }
  return record(make_tensor({s[0], s[1], height, width}, std::move(out)), "bilinear_upsample_adjoint", {a},
                [big_h, big_w](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{bilinear_upsample(g, big_h, big_w)};
                });
}

}  // namespace align
