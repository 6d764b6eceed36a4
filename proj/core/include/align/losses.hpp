#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "align/gradcam.hpp"
#include "align/models.hpp"

namespace align {

using Rng = std::mt19937_64;

enum class EglDivergence { bce, l1 };

struct LossConfig {
  double lambda_sparsity = 10.0;  ///< lambda1, masker sparsity
  double lambda_smooth = 1.0;     ///< lambda2, masker smoothness
  double lambda_egl = 0.1;        ///< lambda3, explanation alignment
  double lambda_reg = 0.1;        ///< lambda4, mixup regularization
  double beta_alpha = 1.0;        ///< Beta(alpha, alpha) for the mixup coefficient
  double bce_epsilon = 1e-6;
  CamRoot cam_root = CamRoot::prob;
  EglDivergence divergence = EglDivergence::bce;

  void validate() const;
};

/// x[N,C,H,W] * mask[N,1,H,W], the mask repeated over channels.
Tensor apply_mask(const Tensor& x, const Tensor& mask);
/// f_y(x) for each sample, as [N].
Tensor class_probability(const ClassifierNet& classifier, const Tensor& x, std::span<const std::int64_t> labels);

/// f_y(x * M) - f_y(x * (1 - M)), as [N].
Tensor dist(const ClassifierNet& classifier, const Tensor& x, const Tensor& mask, std::span<const std::int64_t> labels);
Tensor dist(const ClassifierNet& classifier, MaskerNet& masker, const Tensor& x, std::span<const std::int64_t> labels);

/// mean((dist - 1)^2)
Tensor loss_dist(const Tensor& dist_values);
/// Batch mean of ||M||_1 / (H*W).
Tensor loss_sparsity(const Tensor& mask);
/// Batch mean of (sum |vertical diffs| + sum |horizontal diffs|) / (H*W).
Tensor loss_smooth(const Tensor& mask);

struct MaskerLosses {
  Tensor total;
  Tensor dist;
  Tensor sparsity;
  Tensor smooth;
  Tensor mask;
};

/// L_dist + lambda1 * L_sparsity + lambda2 * L_smooth. The classifier is
/// frozen while the loss is built, so a backward reaches masker params only.
MaskerLosses loss_mask_total(const Tensor& x, std::span<const std::int64_t> labels, const ClassifierNet& classifier,
                             MaskerNet& masker, const LossConfig& config);

/// mean(-log clamp(probs[n, y_n], eps, 1))
Tensor loss_cls(const Tensor& probs, std::span<const std::int64_t> labels, double epsilon = 1e-6);
/// Pixel-mean BCE with `cam` as prediction (clamped to [eps, 1-eps]) and a
/// detached copy of `mask` as target.
Tensor loss_egl(const Tensor& cam, const Tensor& mask, double epsilon = 1e-6);
/// Pixel-mean |cam - mask| with the mask detached.
Tensor loss_egl_l1(const Tensor& cam, const Tensor& mask);

struct MixupSample {
  Tensor mixed;
  double beta;
};

double sample_beta(double alpha, Rng& rng);
/// beta * xi + (1 - beta) * xj.
Tensor mix(const Tensor& xi, const Tensor& xj, double beta);
/// Draws beta ~ Beta(alpha, alpha) and mixes two same-class inputs.
MixupSample mixup_sample(const Tensor& xi, const Tensor& xj, std::span<const std::int64_t> labels_i,
                         std::span<const std::int64_t> labels_j, double beta_alpha, Rng& rng);

struct RegLosses {
  Tensor total;
  Tensor consistency;  ///< mean |beta Phi(xi) + (1-beta) Phi(xj) - Phi(x~)|
  Tensor ce;           ///< CE(f(x~), y)
  Tensor sparsity;     ///< mean |Phi(x~)|
};

/// Mixup regularizer. `cam_i`, when defined, is a differentiable Grad-CAM of
/// `xi` reused instead of recomputing it.
RegLosses loss_reg(const ClassifierNet& classifier, const Tensor& xi, const Tensor& xj, const Tensor& mixed,
                   double beta, std::span<const std::int64_t> labels, const LossConfig& config,
                   const Tensor& cam_i = Tensor());

struct ClassifierBatch {
  Tensor x;
  std::vector<std::int64_t> labels;
  Tensor partner;  ///< same-class partners for mixup, same shape as x
  double beta = 0.5;
};

struct ClassifierLosses {
  Tensor total;
  Tensor cls;
  Tensor egl;
  RegLosses reg;
};

/// L_cls + lambda3 * L_egl + lambda4 * L_reg. The masker output is computed
/// without a graph, so a backward reaches classifier params only. With
/// `masker == nullptr` the alignment term is omitted (warm-up objective).
ClassifierLosses loss_clf_total(const ClassifierBatch& batch, const ClassifierNet& classifier, MaskerNet* masker,
                                const LossConfig& config);

}  // namespace align
