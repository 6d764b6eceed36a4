#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace align {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
struct Node;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::unique_ptr<std::vector<double>> grad;
  std::shared_ptr<Node> grad_fn;
};

}  // namespace detail

/// Dense row-major float64 tensor with reference semantics.
///
/// Copies of a Tensor share storage and autograd state, mirroring how a
/// parameter handle is passed around between a network, its optimizer and
/// the loss code. Use clone() or detach() for an independent value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_data(Shape shape, std::vector<double> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const;

  std::span<const double> data() const;
  /// Direct write access. Only valid on tensors that are not part of a
  /// recorded graph (leaves, or values produced under NoGradGuard).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  const std::shared_ptr<Node>& grad_fn() const;

  bool has_grad() const;
  /// Gradient as a constant tensor. Throws when no gradient is stored.
  Tensor grad() const;
  std::span<const double> grad_data() const;
  void zero_grad();
  void clear_grad();
  void accumulate_grad(std::span<const double> values);

  /// Same values, no graph, no requires_grad.
  Tensor detach() const;
  Tensor clone() const;

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }
  const detail::TensorImpl* id() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_tensor(Shape, std::vector<double>);
  friend void attach_node(Tensor&, std::shared_ptr<Node>);

  std::shared_ptr<detail::TensorImpl> impl_;
};

Tensor make_tensor(Shape shape, std::vector<double> data);

using BackwardFn = std::function<std::vector<Tensor>(
    const Tensor& grad_out, const std::vector<Tensor>& inputs, const std::vector<bool>& wanted)>;

/// One recorded operation. Holds its inputs, never its output, so the graph
/// is owned from the root downwards and has no reference cycles.
struct Node {
  std::string name;
  std::vector<Tensor> inputs;
  /// requires_grad of each input when the node was recorded. Freezing a
  /// tensor afterwards does not change what the node propagates to.
  std::vector<bool> input_requires_grad;
  BackwardFn backward;
  std::uint64_t sequence = 0;
  bool released = false;

  void release();
};

void attach_node(Tensor& out, std::shared_ptr<Node> node);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class EnableGradGuard {
 public:
  explicit EnableGradGuard(bool enabled);
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

/// Records `name` as the producer of `out` when grad mode is on and any input
/// requires a gradient. Returns `out` either way.
Tensor record(Tensor out, std::string name, std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace align
