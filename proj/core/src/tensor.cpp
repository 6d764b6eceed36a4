#include "align/tensor.hpp"

#include <atomic>
#include <sstream>
#include <stdexcept>

namespace align {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_node_sequence{0};

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape " + shape_str(shape) + " has a non-positive extent");
  }
}

}  // namespace

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor make_tensor(Shape shape, std::vector<double> data) {
  check_shape(shape);
  if (static_cast<std::int64_t>(data.size()) != numel_of(shape)) {
    std::ostringstream os;
    os << "data length " << data.size() << " does not match shape " << shape_str(shape);
    throw std::invalid_argument(os.str());
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  check_shape(shape);
  auto n = static_cast<std::size_t>(numel_of(shape));
  return make_tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return make_tensor({1}, {value}); }

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  return make_tensor(std::move(shape), std::move(data));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  if (impl_->grad_fn) throw std::logic_error("in-place write to a tensor recorded in a graph");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw std::invalid_argument("index rank mismatch for shape " + shape_str(s));
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[axis]) throw std::out_of_range("index out of range for shape " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  if (impl_->grad_fn && !flag) throw std::logic_error("cannot clear requires_grad on a non-leaf tensor");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->grad_fn; }

const std::shared_ptr<Node>& Tensor::grad_fn() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return impl_->grad_fn;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad; }

Tensor Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return make_tensor(impl_->shape, *impl_->grad);
}

std::span<const double> Tensor::grad_data() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return *impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

void Tensor::clear_grad() { impl_->grad.reset(); }

void Tensor::accumulate_grad(std::span<const double> values) {
  if (values.size() != impl_->data.size()) throw std::invalid_argument("gradient size mismatch");
  if (!impl_->grad) {
    impl_->grad = std::make_unique<std::vector<double>>(values.begin(), values.end());
    return;
  }
  auto& g = *impl_->grad;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += values[i];
}

Tensor Tensor::detach() const { return make_tensor(shape(), impl_->data); }

Tensor Tensor::clone() const {
  Tensor out = detach();
  out.impl_->requires_grad = impl_->requires_grad && !impl_->grad_fn;
  return out;
}

void Node::release() {
  inputs.clear();
  backward = nullptr;
  released = true;
}

void attach_node(Tensor& out, std::shared_ptr<Node> node) {
  out.impl_->grad_fn = std::move(node);
  out.impl_->requires_grad = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

EnableGradGuard::EnableGradGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }

Tensor record(Tensor out, std::string name, std::vector<Tensor> inputs, BackwardFn backward) {
  if (!g_grad_enabled) return out;
  std::vector<bool> flags(inputs.size());
  bool any = false;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    flags[i] = inputs[i].requires_grad();
    any = any || flags[i];
  }
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->name = std::move(name);
  node->input_requires_grad = std::move(flags);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  node->sequence = g_node_sequence.fetch_add(1);
  attach_node(out, std::move(node));
  return out;
}

}  // namespace align
