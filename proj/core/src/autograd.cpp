#include "align/autograd.hpp"

#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "align/ops.hpp"

namespace align {

namespace {

enum class Mode { leaves, targets };

// Post-order over the nodes reachable from `root`; reversed, it is a valid
// processing order for reverse mode.
std::vector<std::shared_ptr<Node>> post_order(const std::shared_ptr<Node>& root) {
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<const Node*> seen;
  struct Frame {
    std::shared_ptr<Node> node;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.node->released) throw std::logic_error("backward through a graph that has already been freed");
    if (top.next < top.node->inputs.size()) {
      const auto& child = top.node->inputs[top.next++].grad_fn();
      if (child && seen.insert(child.get()).second) stack.push_back({child, 0});
      continue;
    }
    order.push_back(top.node);
    stack.pop_back();
  }
  return order;
}

void accumulate(std::unordered_map<const void*, Tensor>& table, const void* key, const Tensor& value) {
  auto it = table.find(key);
  if (it == table.end()) {
    table.emplace(key, value);
  } else {
    it->second = add(it->second, value);
  }
}

std::vector<Tensor> run(const Tensor& root, const std::vector<Tensor>& targets, Mode mode,
                        BackwardOptions options) {
  if (!root.defined()) throw std::invalid_argument("backward from an undefined tensor");
  if (root.numel() != 1) {
    throw std::invalid_argument("backward requires a scalar root, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) throw std::invalid_argument("backward from a tensor that does not require grad");

  const bool retain = options.retain_graph || options.create_graph;
  EnableGradGuard mode_guard(options.create_graph);

  std::unordered_map<const void*, std::size_t> target_index;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& t = targets[i];
    const void* key = t.is_leaf() ? static_cast<const void*>(t.id()) : static_cast<const void*>(t.grad_fn().get());
    target_index.emplace(key, i);
  }
  auto key_of = [](const Tensor& t) -> const void* {
    return t.is_leaf() ? static_cast<const void*>(t.id()) : static_cast<const void*>(t.grad_fn().get());
  };
  auto is_target = [&](const Tensor& t) { return target_index.count(key_of(t)) != 0; };

  std::unordered_map<const void*, Tensor> grads;
  const Tensor seed = Tensor::ones(root.shape());

  if (root.is_leaf()) {
    if (mode == Mode::leaves) {
      const_cast<Tensor&>(root).accumulate_grad(seed.data());
    } else {
      grads.emplace(key_of(root), seed);
    }
  } else {
    auto order = post_order(root.grad_fn());

    // A node is needed when some path from it reaches a gradient sink.
    std::unordered_map<const Node*, bool> needed;
    auto input_needed = [&](const Node& node, std::size_t i) {
      const Tensor& in = node.inputs[i];
      if (!node.input_requires_grad[i]) return false;
      if (is_target(in)) return true;
      if (in.is_leaf()) return mode == Mode::leaves;
      return needed[in.grad_fn().get()];
    };
    for (const auto& node : order) {
      bool any = false;
      for (std::size_t i = 0; i < node->inputs.size(); ++i) any = any || input_needed(*node, i);
      needed[node.get()] = any;
    }

    grads.emplace(root.grad_fn().get(), seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const auto& node = *it;
      auto found = grads.find(node.get());
      if (found == grads.end() || !needed[node.get()]) {
        if (!retain) node->release();
        continue;
      }
      const Tensor grad_out = found->second;
      std::vector<bool> wanted(node->inputs.size());
      for (std::size_t i = 0; i < wanted.size(); ++i) wanted[i] = input_needed(*node, i);
      auto input_grads = node->backward(grad_out, node->inputs, wanted);
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        if (!wanted[i] || !input_grads[i].defined()) continue;
        auto& in = node->inputs[i];
        if (in.is_leaf()) {
          if (mode == Mode::leaves && !is_target(in)) {
            NoGradGuard no_grad;
            in.accumulate_grad(input_grads[i].data());
          } else {
            accumulate(grads, key_of(in), input_grads[i]);
          }
        } else {
          accumulate(grads, key_of(in), input_grads[i]);
        }
      }
      if (!retain) node->release();
    }
  }

  std::vector<Tensor> result;
  result.reserve(targets.size());
  for (const auto& t : targets) {
    auto it = grads.find(key_of(t));
    result.push_back(it == grads.end() ? Tensor::zeros(t.shape()) : it->second);
  }
  return result;
}

}  // namespace

void backward(const Tensor& root, BackwardOptions options) { run(root, {}, Mode::leaves, options); }

std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& targets, BackwardOptions options) {
  for (const auto& t : targets) {
    if (!t.defined()) throw std::invalid_argument("gradient requested for an undefined tensor");
  }
  return run(root, targets, Mode::targets, options);
}

}  // namespace align
