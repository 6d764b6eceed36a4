#pragma once

#include <vector>

#include "align/tensor.hpp"

namespace align {

struct BackwardOptions {
  /// Keep the recorded graph alive so it can be traversed again.
  bool retain_graph = false;
  /// Record the backward computation itself, making the returned gradients
  /// differentiable. Implies retain_graph.
  bool create_graph = false;
};

/// Accumulates d(root)/d(leaf) into the grad buffer of every leaf that
/// requires a gradient. `root` must hold exactly one element.
void backward(const Tensor& root, BackwardOptions options = {});

/// Returns d(root)/d(target) for each target, which may be intermediate
/// tensors. Targets the root does not depend on get an all-zero gradient.
/// Leaf grad buffers are left untouched.
std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& targets,
                         BackwardOptions options = {});

}  // namespace align
