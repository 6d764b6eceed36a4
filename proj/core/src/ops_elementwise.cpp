#include <cmath>
#include <stdexcept>

#include "align/ops.hpp"

namespace align {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  auto src = a.data();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = f(src[i]);
  return make_tensor(a.shape(), std::move(out));
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
  return make_tensor(a.shape(), std::move(out));
}

// Constant (non-differentiable) tensor derived from `a`, used for
// piecewise-constant derivative factors such as relu's step.
template <class F>
Tensor constant_from(const Tensor& a, F f) {
  return map_unary(a, f);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return record(map_binary(a, b, [](double x, double y) { return x + y; }), "add", {a, b},
                [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{g, g};
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return record(map_binary(a, b, [](double x, double y) { return x - y; }), "sub", {a, b},
                [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>& wanted) {
                  return std::vector<Tensor>{g, wanted[1] ? neg(g) : Tensor()};
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return record(map_binary(a, b, [](double x, double y) { return x * y; }), "mul", {a, b},
                [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>& wanted) {
                  return std::vector<Tensor>{wanted[0] ? mul(g, in[1]) : Tensor(),
                                             wanted[1] ? mul(g, in[0]) : Tensor()};
                });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  return record(map_binary(a, b, [](double x, double y) { return x / y; }), "div", {a, b},
                [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>& wanted) {
                  Tensor ga, gb;
                  if (wanted[0]) ga = div(g, in[1]);
                  if (wanted[1]) gb = neg(div(mul(g, in[0]), square(in[1])));
                  return std::vector<Tensor>{ga, gb};
                });
}

Tensor neg(const Tensor& a) {
  return record(map_unary(a, [](double x) { return -x; }), "neg", {a},
                [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{neg(g)};
                });
}

Tensor add_scalar(const Tensor& a, double s) {
  return record(map_unary(a, [s](double x) { return x + s; }), "add_scalar", {a},
                [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{g};
                });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return record(map_unary(a, [s](double x) { return x * s; }), "mul_scalar", {a},
                [s](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul_scalar(g, s)};
                });
}

Tensor exp(const Tensor& a) {
  return record(map_unary(a, [](double x) { return std::exp(x); }), "exp", {a},
                [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(g, exp(in[0]))};
                });
}

Tensor log(const Tensor& a) {
  return record(map_unary(a, [](double x) { return std::log(x); }), "log", {a},
                [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                  return std::vector<Tensor>{div(g, in[0])};
                });
}

Tensor sqrt(const Tensor& a) {
  return record(map_unary(a, [](double x) { return std::sqrt(x); }), "sqrt", {a},
                [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                  return std::vector<Tensor>{div(g, mul_scalar(sqrt(in[0]), 2.0))};
                });
}

Tensor abs(const Tensor& a) {
  return record(map_unary(a, [](double x) { return std::abs(x); }), "abs", {a},
                [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                  auto sign = constant_from(in[0], [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
                  return std::vector<Tensor>{mul(g, sign)};
                });
}

Tensor square(const Tensor& a) {
  return record(map_unary(a, [](double x) { return x * x; }), "square", {a},
                [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(g, mul_scalar(in[0], 2.0))};
                });
}

Tensor relu(const Tensor& a) {
  return record(map_unary(a, [](double x) { return x > 0 ? x : 0.0; }), "relu", {a},
                [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                  auto step = constant_from(in[0], [](double x) { return x > 0 ? 1.0 : 0.0; });
                  return std::vector<Tensor>{mul(g, step)};
                });
}

Tensor sigmoid(const Tensor& a) {
  auto logistic = [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  return record(map_unary(a, logistic), "sigmoid", {a},
                [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                  Tensor s = sigmoid(in[0]);
                  return std::vector<Tensor>{mul(g, mul(s, 1.0 - s))};
                });
}

Tensor tanh(const Tensor& a) {
  return record(map_unary(a, [](double x) { return std::tanh(x); }), "tanh", {a},
                [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                  Tensor t = tanh(in[0]);
                  return std::vector<Tensor>{mul(g, 1.0 - square(t))};
                });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lower bound exceeds upper bound");
  return record(map_unary(a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); }), "clamp", {a},
                [lo, hi](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                  auto inside = constant_from(in[0], [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
                  return std::vector<Tensor>{mul(g, inside)};
                });
}

Tensor activation(const Tensor& a, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return relu(a);
    case Activation::sigmoid:
      return sigmoid(a);
  }
  throw std::invalid_argument("unknown activation");
}

}  // namespace align
