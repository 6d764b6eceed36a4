#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "align/models.hpp"

namespace align {

/// Which scalar Grad-CAM differentiates: the softmax probability f_y (default)
/// or the pre-softmax logit.
enum class CamRoot { prob, logit };

struct SaliencyMap {
  Tensor raw;         ///< [N,1,h,w], post-ReLU, at Grad-CAM layer resolution
  Tensor normalized;  ///< [N,1,H,W], per-sample max scaled to 1, in [0,1]
  std::vector<std::int64_t> class_index;
};

constexpr double kSaliencyMaxFloor = 1e-12;

/// alpha[n,k] = mean over (i,j) of grads[n,k,i,j].
Tensor channel_weights(const Tensor& activation, const Tensor& grads);
/// ReLU(sum_k weights[n,k] * activation[n,k]) as [N,1,h,w].
Tensor gradcam_map(const Tensor& activation, const Tensor& weights);
/// Divides each sample by max(max(raw), 1e-12), then bilinear-upsamples.
Tensor normalize_and_upsample(const Tensor& raw, std::int64_t height, std::int64_t width);

struct ExplainOptions {
  CamRoot root = CamRoot::prob;
  /// Keep the map differentiable with respect to the classifier parameters
  /// (needed when the map enters a training loss).
  bool create_graph = false;
};

/// Grad-CAM for class `labels[n]` of each sample. Without create_graph the
/// result is constant and the classifier's parameter grads are untouched.
SaliencyMap explain(const ClassifierNet& classifier, const Tensor& x, std::span<const std::int64_t> labels,
                    ExplainOptions options = {});

/// Grad-CAM from an existing forward pass whose graph is still recorded.
/// Gradients are taken with create_graph so the map stays differentiable.
SaliencyMap explain_recorded(const ClassifierOutput& forward, std::span<const std::int64_t> labels,
                             std::int64_t height, std::int64_t width, CamRoot root = CamRoot::prob);

}  // namespace align
