#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <stdexcept>

#include "align/ops.hpp"

namespace align {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

std::vector<bool> reduced_axes(const Shape& shape, const std::vector<int>& axes) {
  std::vector<bool> reduced(shape.size(), axes.empty());
  for (int axis : axes) {
    if (axis < 0 || static_cast<std::size_t>(axis) >= shape.size()) {
      throw std::invalid_argument("reduce: axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
    }
    reduced[static_cast<std::size_t>(axis)] = true;
  }
  return reduced;
}

// For every input element (row-major), the flat index of the element of
// `target` it maps to when the axes flagged in `collapsed` are squeezed to 1.
std::vector<std::int64_t> collapse_map(const Shape& shape, const std::vector<bool>& collapsed) {
  const std::size_t rank = shape.size();
  std::vector<std::int64_t> out_stride(rank, 0);
  std::int64_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    if (!collapsed[i]) {
      out_stride[i] = stride;
      stride *= shape[i];
    }
  }
  const auto n = numel_of(shape);
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  std::vector<std::int64_t> index(rank, 0);
  std::int64_t flat_out = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    map[static_cast<std::size_t>(k)] = flat_out;
    for (std::size_t i = rank; i-- > 0;) {
      ++index[i];
      flat_out += out_stride[i];
      if (index[i] < shape[i]) break;
      flat_out -= out_stride[i] * index[i];
      index[i] = 0;
    }
  }
  return map;
}

Shape keep_shape_of(const Shape& shape, const std::vector<bool>& reduced) {
  Shape keep = shape;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (reduced[i]) keep[i] = 1;
  return keep;
}

Shape drop_shape_of(const Shape& shape, const std::vector<bool>& reduced) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (!reduced[i]) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

Tensor reduce_sum_impl(const Tensor& a, const std::vector<bool>& reduced, double scale, bool keepdim,
                       const char* name) {
  const Shape& in_shape = a.shape();
  const Shape keep = keep_shape_of(in_shape, reduced);
  const auto map = collapse_map(in_shape, reduced);
  std::vector<double> out(static_cast<std::size_t>(numel_of(keep)), 0.0);
  auto src = a.data();
  for (std::size_t k = 0; k < src.size(); ++k) out[static_cast<std::size_t>(map[k])] += src[k];
  if (scale != 1.0)
    for (auto& v : out) v *= scale;
  Shape out_shape = keepdim ? keep : drop_shape_of(in_shape, reduced);
  return record(make_tensor(out_shape, std::move(out)), name, {a},
                [in_shape, keep, scale](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  Tensor spread = broadcast_to(reshape(g, keep), in_shape);
                  return std::vector<Tensor>{scale == 1.0 ? spread : mul_scalar(spread, scale)};
                });
}

}  // namespace

Tensor reduce(const Tensor& a, ReduceKind kind, std::vector<int> axes, bool keepdim) {
  const auto reduced = reduced_axes(a.shape(), axes);
  switch (kind) {
    case ReduceKind::sum:
      return reduce_sum_impl(a, reduced, 1.0, keepdim, "sum");
    case ReduceKind::mean: {
      std::int64_t count = 1;
      for (std::size_t i = 0; i < reduced.size(); ++i)
        if (reduced[i]) count *= a.shape()[i];
      return reduce_sum_impl(a, reduced, 1.0 / static_cast<double>(count), keepdim, "mean");
    }
    case ReduceKind::abs_sum:
      return reduce_sum_impl(abs(a), reduced, 1.0, keepdim, "abs_sum");
  }
  throw std::invalid_argument("unknown reduction");
}

Tensor sum(const Tensor& a, std::vector<int> axes, bool keepdim) {
  return reduce(a, ReduceKind::sum, std::move(axes), keepdim);
}

Tensor mean(const Tensor& a, std::vector<int> axes, bool keepdim) {
  return reduce(a, ReduceKind::mean, std::move(axes), keepdim);
}

Tensor amax(const Tensor& a, std::vector<int> axes, bool keepdim) {
  const Shape in_shape = a.shape();
  const auto reduced = reduced_axes(in_shape, axes);
  const Shape keep = keep_shape_of(in_shape, reduced);
  const auto map = collapse_map(in_shape, reduced);
  const auto n_out = static_cast<std::size_t>(numel_of(keep));
  std::vector<double> best(n_out, -std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> where(n_out, -1);
  auto src = a.data();
  for (std::size_t k = 0; k < src.size(); ++k) {
    auto o = static_cast<std::size_t>(map[k]);
    if (where[o] < 0 || src[k] > best[o]) {
      best[o] = src[k];
      where[o] = static_cast<std::int64_t>(k);
    }
  }
  std::vector<double> onehot(src.size(), 0.0);
  for (auto w : where) onehot[static_cast<std::size_t>(w)] = 1.0;
  Tensor selector = make_tensor(in_shape, std::move(onehot));
  Shape out_shape = keepdim ? keep : drop_shape_of(in_shape, reduced);
  return record(make_tensor(out_shape, std::move(best)), "amax", {a},
                [in_shape, keep, selector](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(broadcast_to(reshape(g, keep), in_shape), selector)};
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  const Shape original = a.shape();
  std::vector<double> copy(a.data().begin(), a.data().end());
  return record(make_tensor(std::move(shape), std::move(copy)), "reshape", {a},
                [original](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{reshape(g, original)};
                });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  const Shape& in_shape = a.shape();
  if (in_shape.size() != shape.size()) {
    throw std::invalid_argument("broadcast_to: rank mismatch " + shape_str(in_shape) + " vs " + shape_str(shape));
  }
  std::vector<bool> expanded(shape.size(), false);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (in_shape[i] == shape[i]) continue;
    if (in_shape[i] != 1) {
      throw std::invalid_argument("broadcast_to: cannot expand " + shape_str(in_shape) + " to " + shape_str(shape));
    }
    expanded[i] = true;
  }
  if (in_shape == shape) return a;
  const auto map = collapse_map(shape, expanded);
  auto src = a.data();
  std::vector<double> out(map.size());
  for (std::size_t k = 0; k < map.size(); ++k) out[k] = src[static_cast<std::size_t>(map[k])];
  const Shape original = in_shape;
  return record(make_tensor(shape, std::move(out)), "broadcast_to", {a},
                [original](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{sum_to(g, original)};
                });
}

Tensor sum_to(const Tensor& a, const Shape& shape) {
  const Shape& in_shape = a.shape();
  if (in_shape.size() != shape.size()) {
    throw std::invalid_argument("sum_to: rank mismatch " + shape_str(in_shape) + " vs " + shape_str(shape));
  }
  std::vector<int> axes;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (in_shape[i] == shape[i]) continue;
    if (shape[i] != 1) {
      throw std::invalid_argument("sum_to: cannot reduce " + shape_str(in_shape) + " to " + shape_str(shape));
    }
    axes.push_back(static_cast<int>(i));
  }
  if (axes.empty()) return a;
  return sum(a, axes, true);
}

namespace {

// Views `shape` as [outer, extent(axis), inner].
void split_at_axis(const Shape& shape, int axis, std::int64_t& outer, std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

}  // namespace

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length) {
  const Shape& s = a.shape();
  if (axis < 0 || static_cast<std::size_t>(axis) >= s.size() || start < 0 || length < 1 ||
      start + length > s[static_cast<std::size_t>(axis)]) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                                ") on axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  std::int64_t outer, inner;
  split_at_axis(s, axis, outer, inner);
  const auto extent = s[static_cast<std::size_t>(axis)];
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = length;
  std::vector<double> out(static_cast<std::size_t>(outer * length * inner));
  auto src = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(src.begin() + (o * extent + start) * inner, length * inner, out.begin() + o * length * inner);
  }
  return record(make_tensor(out_shape, std::move(out)), "slice", {a},
                [axis, start, extent](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{embed(g, axis, start, extent)};
                });
}

Tensor embed(const Tensor& a, int axis, std::int64_t start, std::int64_t full) {
  const Shape& s = a.shape();
  if (axis < 0 || static_cast<std::size_t>(axis) >= s.size() || start < 0 ||
      start + s[static_cast<std::size_t>(axis)] > full) {
    throw std::invalid_argument("embed: cannot place " + shape_str(s) + " at " + std::to_string(start) +
                                " of extent " + std::to_string(full));
  }
  std::int64_t outer, inner;
  split_at_axis(s, axis, outer, inner);
  const auto length = s[static_cast<std::size_t>(axis)];
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = full;
  std::vector<double> out(static_cast<std::size_t>(outer * full * inner), 0.0);
  auto src = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(src.begin() + o * length * inner, length * inner, out.begin() + (o * full + start) * inner);
  }
  return record(make_tensor(out_shape, std::move(out)), "embed", {a},
                [axis, start, length](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{slice(g, axis, start, length)};
                });
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose2d: expected rank 2, got " + shape_str(a.shape()));
  const auto rows = a.dim(0);
  const auto cols = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(rows * cols));
  MutMap(out.data(), cols, rows) = ConstMap(a.data().data(), rows, cols).transpose();
  return record(make_tensor({cols, rows}, std::move(out)), "transpose2d", {a},
                [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{transpose2d(g)};
                });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto m = a.dim(0);
  const auto k = a.dim(1);
  const auto n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return record(make_tensor({m, n}, std::move(out)), "matmul", {a, b},
                [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>& wanted) {
                  Tensor ga, gb;
                  if (wanted[0]) ga = matmul(g, transpose2d(in[1]));
                  if (wanted[1]) gb = matmul(transpose2d(in[0]), g);
                  return std::vector<Tensor>{ga, gb};
                });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw std::invalid_argument("linear: weight " + shape_str(weight.shape()) + " and bias " +
                                shape_str(bias.shape()) + " disagree");
  }
  Tensor y = matmul(x, transpose2d(weight));
  return add(y, broadcast_to(reshape(bias, {1, bias.dim(0)}), y.shape()));
}

Tensor gather_rows(const Tensor& a, std::span<const std::int64_t> index) {
  if (a.rank() != 2 || static_cast<std::int64_t>(index.size()) != a.dim(0)) {
    throw std::invalid_argument("gather_rows: " + std::to_string(index.size()) + " indices for shape " +
                                shape_str(a.shape()));
  }
  const auto cols = a.dim(1);
  std::vector<double> out(index.size());
  for (std::size_t n = 0; n < index.size(); ++n) {
    if (index[n] < 0 || index[n] >= cols) {
      throw std::out_of_range("gather_rows: index " + std::to_string(index[n]) + " outside [0," +
                              std::to_string(cols) + ")");
    }
    out[n] = a.data()[n * static_cast<std::size_t>(cols) + static_cast<std::size_t>(index[n])];
  }
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return record(make_tensor({a.dim(0)}, std::move(out)), "gather_rows", {a},
                [idx, cols](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{scatter_rows(g, idx, cols)};
                });
}

Tensor scatter_rows(const Tensor& a, std::span<const std::int64_t> index, std::int64_t columns) {
  if (a.rank() != 1 || static_cast<std::int64_t>(index.size()) != a.dim(0)) {
    throw std::invalid_argument("scatter_rows: " + std::to_string(index.size()) + " indices for shape " +
                                shape_str(a.shape()));
  }
  const auto rows = a.dim(0);
  std::vector<double> out(static_cast<std::size_t>(rows * columns), 0.0);
  for (std::size_t n = 0; n < index.size(); ++n) {
    if (index[n] < 0 || index[n] >= columns) throw std::out_of_range("scatter_rows: index out of range");
    out[n * static_cast<std::size_t>(columns) + static_cast<std::size_t>(index[n])] = a.data()[n];
  }
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return record(make_tensor({rows, columns}, std::move(out)), "scatter_rows", {a},
                [idx](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                  return std::vector<Tensor>{gather_rows(g, idx)};
                });
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_rows: expected [N,C], got " + shape_str(logits.shape()));
  const auto rows = logits.dim(0);
  const auto cols = logits.dim(1);
  // Row maxima as a constant shift; softmax is invariant to it.
  std::vector<double> shift(static_cast<std::size_t>(rows * cols));
  auto src = logits.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double m = src[static_cast<std::size_t>(r * cols)];
    for (std::int64_t c = 1; c < cols; ++c) m = std::max(m, src[static_cast<std::size_t>(r * cols + c)]);
    for (std::int64_t c = 0; c < cols; ++c) shift[static_cast<std::size_t>(r * cols + c)] = m;
  }
  Tensor e = exp(sub(logits, make_tensor(logits.shape(), std::move(shift))));
  Tensor total = broadcast_to(sum(e, {1}, true), e.shape());
  return div(e, total);
}

}  // namespace align
