#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "align/gradcam.hpp"
#include "align/models.hpp"
#include "align/synth.hpp"

namespace align {

/// Row-wise argmax of [N,C]; ties go to the lowest class index.
std::vector<std::int64_t> argmax_rows(const Tensor& probs);
double accuracy(const Tensor& probs, std::span<const std::int64_t> labels);

/// Rank-statistic ROC-AUC: (concordant pairs + ties / 2) / (pos * neg).
/// Returns nullopt when either class is absent.
std::optional<double> binary_auc(std::span<const double> scores, std::span<const bool> positive);

struct AucResult {
  double macro = 0.0;
  std::vector<std::optional<double>> per_class;
  std::vector<int> skipped_classes;
};

/// Macro one-vs-rest AUC over the classes that have both positives and
/// negatives. Throws when no class is scorable.
AucResult auc_macro_ovr_detail(const Tensor& probs, std::span<const std::int64_t> labels);
double auc_macro_ovr(const Tensor& probs, std::span<const std::int64_t> labels);

enum class FillPolicy { zero, mean };

/// Picks the ceil(keep_fraction * H * W) most salient pixels of a map, ties
/// broken by row-major index.
struct TopKSelector {
  double keep_fraction = 0.2;
  FillPolicy fill = FillPolicy::zero;

  void validate() const;
  std::int64_t count(std::int64_t pixels) const;
  /// Flat pixel indices, most salient first.
  std::vector<std::int64_t> select(std::span<const double> saliency) const;
};

/// Keeps (or, with keep=false, removes) the selected pixels of x[N,C,H,W]
/// according to saliency[N,1,H,W]; the other pixels are filled per policy.
Tensor apply_selection(const Tensor& x, const Tensor& saliency, const TopKSelector& selector, bool keep);

/// 100 * mean(f_y(x) - f_y(x restricted to the selected pixels)).
double sufficiency(const ClassifierNet& classifier, const Tensor& x, std::span<const std::int64_t> labels,
                   const Tensor& saliency, const TopKSelector& selector);
/// 100 * mean(f_y(x) - f_y(x with the selected pixels removed)).
double comprehensiveness(const ClassifierNet& classifier, const Tensor& x, std::span<const std::int64_t> labels,
                         const Tensor& saliency, const TopKSelector& selector);

/// |{m > t} & {gt = 1}| / |{m > t} | {gt = 1}|, 1.0 when both are empty.
double mask_iou(const Tensor& mask, const Tensor& gt_mask, double threshold = 0.5);

struct MetricsReport {
  std::string name;
  std::int64_t samples = 0;
  double accuracy = 0.0;
  double auc_macro = 0.0;
  std::vector<int> auc_skipped_classes;
  std::optional<double> sufficiency;
  std::optional<double> comprehensiveness;
  std::optional<double> mask_iou;
  std::vector<MetricsReport> breakdown;

  void check() const;
};

std::string report_to_json(const MetricsReport& report, int indent = 2);
/// One CSV row per report (the report itself, then its breakdown).
std::string report_to_csv(const MetricsReport& report);

struct EvalOptions {
  TopKSelector selector;
  CamRoot cam_root = CamRoot::prob;
  double iou_threshold = 0.5;
  std::int64_t chunk = 64;
  bool explanation_metrics = true;
};

/// Class probabilities of a whole set, computed in chunks without a graph.
Tensor predict(const ClassifierNet& classifier, const Tensor& images, std::int64_t chunk = 64);
/// Masker output for a whole set in eval mode, in chunks without a graph.
Tensor predict_masks(MaskerNet& masker, const Tensor& images, std::int64_t chunk = 64);

/// Accuracy and AUC; with explanation_metrics also Grad-CAM Suff/Comp and,
/// given a masker and ground-truth masks, the masker IoU.
MetricsReport evaluate(const ClassifierNet& classifier, MaskerNet* masker, const ImageSet& data,
                       const EvalOptions& options = {}, const std::string& name = "");

enum class MaskSource { learned_masker, gt_mask, degraded_mask, ones };

std::string mask_source_name(MaskSource source);

/// Ground-truth masks shifted by up to 25% of each side (zero fill) and
/// dilated by max(1, H/16) pixels.
Tensor degrade_masks(const Tensor& gt_masks, std::uint64_t seed);

struct PerturbationOptions {
  double sigma = 5.0;
  PerturbationKind kind = PerturbationKind::blur;
  std::uint64_t seed = 0;
  std::int64_t chunk = 64;
};

/// Blurs the background of every sample outside the chosen mask, then
/// reports accuracy and AUC. sigma <= 0 disables the perturbation.
MetricsReport perturbation_eval(const ClassifierNet& classifier, MaskerNet* masker, const ImageSet& data,
                                MaskSource source, const PerturbationOptions& options = {});

struct DomainSet {
  int domain = 0;
  ImageSet data;
};

/// Clean metrics on every target domain; the top-level report holds the
/// unweighted mean over domains and the breakdown one entry per domain.
MetricsReport ood_eval(const ClassifierNet& classifier, MaskerNet* masker, const std::vector<DomainSet>& targets,
                       int source_domain, const EvalOptions& options = {});

}  // namespace align
