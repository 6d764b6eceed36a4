#include "align/gradcam.hpp"

#include <limits>
#include <stdexcept>

#include "align/autograd.hpp"
#include "align/ops.hpp"

namespace align {

namespace {

void check_labels(std::span<const std::int64_t> labels, std::int64_t batch, std::int64_t classes) {
  if (static_cast<std::int64_t>(labels.size()) != batch) {
    throw std::invalid_argument("explain: " + std::to_string(labels.size()) + " labels for a batch of " +
                                std::to_string(batch));
  }
  for (auto y : labels) {
    if (y < 0 || y >= classes) {
      throw std::out_of_range("explain: class " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");
    }
  }
}

Tensor score_root(const Tensor& logits, std::span<const std::int64_t> labels, CamRoot root) {
  Tensor scores = root == CamRoot::prob ? softmax_rows(logits) : logits;
  return sum(gather_rows(scores, labels));
}

SaliencyMap assemble(const Tensor& activation, const Tensor& grads, std::span<const std::int64_t> labels,
                     std::int64_t height, std::int64_t width) {
  Tensor raw = gradcam_map(activation, channel_weights(activation, grads));
  Tensor normalized = normalize_and_upsample(raw, height, width);
  return {raw, normalized, {labels.begin(), labels.end()}};
}

}  // namespace

Tensor channel_weights(const Tensor& activation, const Tensor& grads) {
  if (activation.rank() != 4 || activation.shape() != grads.shape()) {
    throw std::invalid_argument("channel_weights: activation " + shape_str(activation.shape()) + " and gradient " +
                                shape_str(grads.shape()) + " differ");
  }
  return mean(grads, {2, 3});
}

Tensor gradcam_map(const Tensor& activation, const Tensor& weights) {
  if (activation.rank() != 4 || weights.rank() != 2 || weights.dim(0) != activation.dim(0) ||
      weights.dim(1) != activation.dim(1)) {
    throw std::invalid_argument("gradcam_map: weights " + shape_str(weights.shape()) + " do not match activation " +
                                shape_str(activation.shape()));
  }
  const Shape& s = activation.shape();
  Tensor w = broadcast_to(reshape(weights, {s[0], s[1], 1, 1}), s);
  return relu(sum(mul(w, activation), {1}, true));
}

Tensor normalize_and_upsample(const Tensor& raw, std::int64_t height, std::int64_t width) {
  if (raw.rank() != 4 || raw.dim(1) != 1) {
    throw std::invalid_argument("normalize_and_upsample: expected [N,1,h,w], got " + shape_str(raw.shape()));
  }
  Tensor peak = clamp(amax(raw, {1, 2, 3}, true), kSaliencyMaxFloor, std::numeric_limits<double>::max());
  Tensor scaled = div(raw, broadcast_to(peak, raw.shape()));
  return bilinear_upsample(scaled, height, width);
}

SaliencyMap explain(const ClassifierNet& classifier, const Tensor& x, std::span<const std::int64_t> labels,
                    ExplainOptions options) {
  classifier.check_input(x.shape());
  check_labels(labels, x.dim(0), classifier.config().num_classes);
  const auto height = x.dim(2);
  const auto width = x.dim(3);

  if (options.create_graph) {
    EnableGradGuard grad_on(true);
    return explain_recorded(classifier.forward(x), labels, height, width, options.root);
  }

  // Constant map: differentiate only the head, starting from a detached
  // activation, and leave parameter grad buffers alone.
  Tensor activation;
  {
    NoGradGuard no_grad;
    activation = classifier.features(x);
  }
  activation.set_requires_grad(true);
  std::vector<Tensor> grads;
  {
    FreezeGuard frozen(classifier.parameters());
    EnableGradGuard grad_on(true);
    Tensor root = score_root(classifier.logits_from_features(activation), labels, options.root);
    grads = grad(root, {activation});
  }
  NoGradGuard no_grad;
  return assemble(activation.detach(), grads[0], labels, height, width);
}

SaliencyMap explain_recorded(const ClassifierOutput& forward, std::span<const std::int64_t> labels,
                             std::int64_t height, std::int64_t width, CamRoot root) {
  check_labels(labels, forward.logits.dim(0), forward.logits.dim(1));
  const Tensor& activation = forward.activation;
  if (!activation.requires_grad()) {
    // Nothing upstream requires a gradient; the map is a constant.
    throw std::logic_error("explain_recorded: forward pass was not recorded");
  }
  Tensor score = score_root(forward.logits, labels, root);
  auto grads = grad(score, {activation}, {.retain_graph = true, .create_graph = true});
  return assemble(activation, grads[0], labels, height, width);
}

}  // namespace align
