#include "align/losses.hpp"

#include <stdexcept>

#include "align/ops.hpp"

namespace align {

void LossConfig::validate() const {
  if (lambda_sparsity < 0 || lambda_smooth < 0 || lambda_egl < 0 || lambda_reg < 0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (!(beta_alpha > 0)) throw std::invalid_argument("beta_alpha must be positive");
  if (!(bce_epsilon > 0 && bce_epsilon < 0.1)) throw std::invalid_argument("bce_epsilon must lie in (0, 0.1)");
}

Tensor apply_mask(const Tensor& x, const Tensor& mask) {
  if (x.rank() != 4 || mask.rank() != 4 || mask.dim(1) != 1 || mask.dim(0) != x.dim(0) || mask.dim(2) != x.dim(2) ||
      mask.dim(3) != x.dim(3)) {
    throw std::invalid_argument("apply_mask: mask " + shape_str(mask.shape()) + " does not fit input " +
                                shape_str(x.shape()));
  }
  return mul(x, broadcast_to(mask, x.shape()));
}

Tensor class_probability(const ClassifierNet& classifier, const Tensor& x, std::span<const std::int64_t> labels) {
  return gather_rows(classifier.forward(x).probs, labels);
}

Tensor dist(const ClassifierNet& classifier, const Tensor& x, const Tensor& mask,
            std::span<const std::int64_t> labels) {
  if (static_cast<std::int64_t>(labels.size()) != x.dim(0) || mask.dim(0) != x.dim(0)) {
    throw std::invalid_argument("dist: batch sizes differ (input " + shape_str(x.shape()) + ", mask " +
                                shape_str(mask.shape()) + ", " + std::to_string(labels.size()) + " labels)");
  }
  Tensor kept = class_probability(classifier, apply_mask(x, mask), labels);
  Tensor removed = class_probability(classifier, apply_mask(x, 1.0 - mask), labels);
  return sub(kept, removed);
}

Tensor dist(const ClassifierNet& classifier, MaskerNet& masker, const Tensor& x, std::span<const std::int64_t> labels) {
  return dist(classifier, x, masker.forward(x), labels);
}

Tensor loss_dist(const Tensor& dist_values) { return mean(square(add_scalar(dist_values, -1.0))); }

Tensor loss_sparsity(const Tensor& mask) {
  if (mask.rank() != 4) throw std::invalid_argument("loss_sparsity: expected [N,1,H,W], got " + shape_str(mask.shape()));
  return mul_scalar(reduce(mask, ReduceKind::abs_sum), 1.0 / static_cast<double>(mask.numel()));
}

Tensor loss_smooth(const Tensor& mask) {
  if (mask.rank() != 4 || mask.dim(2) < 2 || mask.dim(3) < 2) {
    throw std::invalid_argument("loss_smooth: need [N,1,H,W] with H,W >= 2, got " + shape_str(mask.shape()));
  }
  const auto h = mask.dim(2);
  const auto w = mask.dim(3);
  Tensor vertical = reduce(sub(slice(mask, 2, 0, h - 1), slice(mask, 2, 1, h - 1)), ReduceKind::abs_sum);
  Tensor horizontal = reduce(sub(slice(mask, 3, 0, w - 1), slice(mask, 3, 1, w - 1)), ReduceKind::abs_sum);
  return mul_scalar(add(vertical, horizontal), 1.0 / static_cast<double>(mask.numel()));
}

MaskerLosses loss_mask_total(const Tensor& x, std::span<const std::int64_t> labels, const ClassifierNet& classifier,
                             MaskerNet& masker, const LossConfig& config) {
  FreezeGuard frozen(classifier.parameters());
  Tensor mask = masker.forward(x);
  Tensor d = dist(classifier, x, mask, labels);
  MaskerLosses out;
  out.mask = mask;
  out.dist = loss_dist(d);
  out.sparsity = loss_sparsity(mask);
  out.smooth = loss_smooth(mask);
  out.total = add(out.dist, add(mul_scalar(out.sparsity, config.lambda_sparsity),
                                mul_scalar(out.smooth, config.lambda_smooth)));
  return out;
}

Tensor loss_cls(const Tensor& probs, std::span<const std::int64_t> labels, double epsilon) {
  Tensor picked = clamp(gather_rows(probs, labels), epsilon, 1.0);
  return neg(mean(log(picked)));
}

Tensor loss_egl(const Tensor& cam, const Tensor& mask, double epsilon) {
  if (cam.shape() != mask.shape()) {
    throw std::invalid_argument("loss_egl: saliency " + shape_str(cam.shape()) + " and mask " +
                                shape_str(mask.shape()) + " differ");
  }
  Tensor target = mask.detach();
  Tensor c = clamp(cam, epsilon, 1.0 - epsilon);
  Tensor per_pixel = add(mul(target, log(c)), mul(1.0 - target, log(1.0 - c)));
  return neg(mean(per_pixel));
}

Tensor loss_egl_l1(const Tensor& cam, const Tensor& mask) {
  if (cam.shape() != mask.shape()) {
    throw std::invalid_argument("loss_egl_l1: saliency " + shape_str(cam.shape()) + " and mask " +
                                shape_str(mask.shape()) + " differ");
  }
  return mean(abs(sub(cam, mask.detach())));
}

double sample_beta(double alpha, Rng& rng) {
  if (!(alpha > 0)) throw std::invalid_argument("sample_beta: alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  return (a + b) > 0 ? a / (a + b) : 0.5;
}

Tensor mix(const Tensor& xi, const Tensor& xj, double beta) {
  return add(mul_scalar(xi, beta), mul_scalar(xj, 1.0 - beta));
}

MixupSample mixup_sample(const Tensor& xi, const Tensor& xj, std::span<const std::int64_t> labels_i,
                         std::span<const std::int64_t> labels_j, double beta_alpha, Rng& rng) {
  if (xi.shape() != xj.shape()) {
    throw std::invalid_argument("mixup_sample: shapes " + shape_str(xi.shape()) + " and " + shape_str(xj.shape()) +
                                " differ");
  }
  if (labels_i.size() != labels_j.size() || !std::equal(labels_i.begin(), labels_i.end(), labels_j.begin())) {
    throw std::invalid_argument("mixup_sample: pairs must share the same class");
  }
  const double beta = sample_beta(beta_alpha, rng);
  return {mix(xi, xj, beta), beta};
}

RegLosses loss_reg(const ClassifierNet& classifier, const Tensor& xi, const Tensor& xj, const Tensor& mixed,
                   double beta, std::span<const std::int64_t> labels, const LossConfig& config,
                   const Tensor& cam_i) {
  EnableGradGuard grad_on(true);
  const auto h = xi.dim(2);
  const auto w = xi.dim(3);
  auto cam_of = [&](const ClassifierOutput& out) {
    return explain_recorded(out, labels, h, w, config.cam_root).normalized;
  };
  Tensor phi_i = cam_i.defined() ? cam_i : cam_of(classifier.forward(xi));
  Tensor phi_j = cam_of(classifier.forward(xj));
  ClassifierOutput mixed_out = classifier.forward(mixed);
  Tensor phi_mixed = cam_of(mixed_out);

  RegLosses out;
  out.consistency = mean(abs(sub(mix(phi_i, phi_j, beta), phi_mixed)));
  out.ce = loss_cls(mixed_out.probs, labels, config.bce_epsilon);
  out.sparsity = mean(abs(phi_mixed));
  out.total = add(out.consistency, add(out.ce, out.sparsity));
  return out;
}

ClassifierLosses loss_clf_total(const ClassifierBatch& batch, const ClassifierNet& classifier, MaskerNet* masker,
                                const LossConfig& config) {
  if (batch.partner.defined() && batch.partner.shape() != batch.x.shape()) {
    throw std::invalid_argument("loss_clf_total: partner batch " + shape_str(batch.partner.shape()) +
                                " does not match " + shape_str(batch.x.shape()));
  }
  EnableGradGuard grad_on(true);
  const auto h = batch.x.dim(2);
  const auto w = batch.x.dim(3);
  ClassifierOutput out = classifier.forward(batch.x);

  ClassifierLosses losses;
  losses.cls = loss_cls(out.probs, batch.labels, config.bce_epsilon);
  Tensor total = losses.cls;

  const bool need_reg = config.lambda_reg > 0 && batch.partner.defined();
  Tensor cam;
  if (masker != nullptr || need_reg) cam = explain_recorded(out, batch.labels, h, w, config.cam_root).normalized;

  if (masker != nullptr) {
    Tensor mask;
    {
      NoGradGuard no_grad;
      mask = masker->forward(batch.x, /*update_running=*/false);
    }
    losses.egl = config.divergence == EglDivergence::bce ? loss_egl(cam, mask, config.bce_epsilon)
                                                          : loss_egl_l1(cam, mask);
    if (config.lambda_egl > 0) total = add(total, mul_scalar(losses.egl, config.lambda_egl));
  }
  if (need_reg) {
    Tensor mixed = mix(batch.x, batch.partner, batch.beta);
    losses.reg = loss_reg(classifier, batch.x, batch.partner, mixed, batch.beta, batch.labels, config, cam);
    total = add(total, mul_scalar(losses.reg.total, config.lambda_reg));
  }
  losses.total = total;
  return losses;
}

}  // namespace align
