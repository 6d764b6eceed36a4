#include "align/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "align/ops.hpp"
#include "json.hpp"

namespace align {

std::vector<std::int64_t> argmax_rows(const Tensor& probs) {
  if (probs.rank() != 2) throw std::invalid_argument("argmax_rows: expected [N,C], got " + shape_str(probs.shape()));
  const auto n = probs.dim(0);
  const auto c = probs.dim(1);
  auto p = probs.data();
  std::vector<std::int64_t> out(n);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t best = 0;
    for (std::int64_t k = 1; k < c; ++k) {
      if (p[i * c + k] > p[i * c + best]) best = k;
    }
    out[i] = best;
  }
  return out;
}

double accuracy(const Tensor& probs, std::span<const std::int64_t> labels) {
  const auto pred = argmax_rows(probs);
  if (pred.size() != labels.size()) {
    throw std::invalid_argument("accuracy: " + std::to_string(pred.size()) + " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  }
  if (pred.empty()) throw std::invalid_argument("accuracy: empty batch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::optional<double> binary_auc(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("binary_auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Mid-ranks over tied groups.
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos = 0;
  double rank_sum = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (positive[i]) {
      pos += 1;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(scores.size()) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

AucResult auc_macro_ovr_detail(const Tensor& probs, std::span<const std::int64_t> labels) {
  if (probs.rank() != 2 || probs.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw std::invalid_argument("auc_macro_ovr: scores " + shape_str(probs.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const auto n = probs.dim(0);
  const auto c = probs.dim(1);
  auto p = probs.data();
  AucResult out;
  double total = 0;
  int scored = 0;
  std::vector<double> column(n);
  std::unique_ptr<bool[]> positive(new bool[n]);
  for (std::int64_t k = 0; k < c; ++k) {
    for (std::int64_t i = 0; i < n; ++i) {
      column[i] = p[i * c + k];
      positive[i] = labels[i] == k;
    }
    auto auc = binary_auc(column, std::span<const bool>(positive.get(), n));
    out.per_class.push_back(auc);
    if (auc) {
      total += *auc;
      ++scored;
    } else {
      out.skipped_classes.push_back(static_cast<int>(k));
    }
  }
  if (scored == 0) throw std::invalid_argument("auc_macro_ovr: no class has both positives and negatives");
  out.macro = total / scored;
  return out;
}

double auc_macro_ovr(const Tensor& probs, std::span<const std::int64_t> labels) {
  return auc_macro_ovr_detail(probs, labels).macro;
}

void TopKSelector::validate() const {
  if (!(keep_fraction > 0 && keep_fraction <= 1)) throw std::invalid_argument("keep_fraction must lie in (0, 1]");
}

std::int64_t TopKSelector::count(std::int64_t pixels) const {
  validate();
  // Guard against 0.2 * 25 landing a hair above 5.
  const double raw = keep_fraction * static_cast<double>(pixels);
  auto k = static_cast<std::int64_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::int64_t>(k, 0, pixels);
}

std::vector<std::int64_t> TopKSelector::select(std::span<const double> saliency) const {
  const auto n = static_cast<std::int64_t>(saliency.size());
  std::vector<std::int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto k = count(n);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](auto a, auto b) {
    if (saliency[a] != saliency[b]) return saliency[a] > saliency[b];
    return a < b;
  });
  order.resize(k);
  return order;
}

Tensor apply_selection(const Tensor& x, const Tensor& saliency, const TopKSelector& selector, bool keep) {
  if (x.rank() != 4 || saliency.rank() != 4 || saliency.dim(1) != 1 || saliency.dim(0) != x.dim(0) ||
      saliency.dim(2) != x.dim(2) || saliency.dim(3) != x.dim(3)) {
    throw std::invalid_argument("apply_selection: saliency " + shape_str(saliency.shape()) + " does not fit input " +
                                shape_str(x.shape()));
  }
  const auto n = x.dim(0);
  const auto c = x.dim(1);
  const auto plane = x.dim(2) * x.dim(3);
  auto xs = x.data();
  auto ss = saliency.data();
  std::vector<double> out(xs.size());
  std::vector<char> chosen(plane);
  for (std::int64_t i = 0; i < n; ++i) {
    std::fill(chosen.begin(), chosen.end(), 0);
    for (auto p : selector.select(ss.subspan(i * plane, plane))) chosen[p] = 1;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto base = (i * c + ch) * plane;
      double fill = 0;
      if (selector.fill == FillPolicy::mean) {
        for (std::int64_t p = 0; p < plane; ++p) fill += xs[base + p];
        fill /= static_cast<double>(plane);
      }
      for (std::int64_t p = 0; p < plane; ++p) {
        const bool retained = keep ? chosen[p] != 0 : chosen[p] == 0;
        out[base + p] = retained ? xs[base + p] : fill;
      }
    }
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

namespace {

double mean_score_drop(const ClassifierNet& classifier, const Tensor& x, const Tensor& altered,
                       std::span<const std::int64_t> labels) {
  NoGradGuard no_grad;
  Tensor before = gather_rows(classifier.forward(x).probs, labels);
  Tensor after = gather_rows(classifier.forward(altered).probs, labels);
  return 100.0 * mean(sub(before, after)).item();
}

}  // namespace

double sufficiency(const ClassifierNet& classifier, const Tensor& x, std::span<const std::int64_t> labels,
                   const Tensor& saliency, const TopKSelector& selector) {
  return mean_score_drop(classifier, x, apply_selection(x, saliency, selector, true), labels);
}

double comprehensiveness(const ClassifierNet& classifier, const Tensor& x, std::span<const std::int64_t> labels,
                         const Tensor& saliency, const TopKSelector& selector) {
  return mean_score_drop(classifier, x, apply_selection(x, saliency, selector, false), labels);
}

double mask_iou(const Tensor& mask, const Tensor& gt_mask, double threshold) {
  if (mask.shape() != gt_mask.shape()) {
    throw std::invalid_argument("mask_iou: mask " + shape_str(mask.shape()) + " vs ground truth " +
                                shape_str(gt_mask.shape()));
  }
  auto m = mask.data();
  auto g = gt_mask.data();
  std::int64_t inter = 0;
  std::int64_t uni = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const bool a = m[i] > threshold;
    const bool b = g[i] == 1.0;
    inter += a && b;
    uni += a || b;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

void MetricsReport::check() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(accuracy) || accuracy < 0 || accuracy > 1) throw std::logic_error("report accuracy out of range");
  if (!finite(auc_macro) || auc_macro < 0 || auc_macro > 1) throw std::logic_error("report auc out of range");
  if (mask_iou && (!finite(*mask_iou) || *mask_iou < 0 || *mask_iou > 1)) {
    throw std::logic_error("report mask_iou out of range");
  }
  if ((sufficiency && !finite(*sufficiency)) || (comprehensiveness && !finite(*comprehensiveness))) {
    throw std::logic_error("report explanation metric is not finite");
  }
  for (const auto& r : breakdown) r.check();
}

namespace {

nlohmann::json report_json(const MetricsReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["samples"] = r.samples;
  j["accuracy"] = r.accuracy;
  j["auc_macro"] = r.auc_macro;
  j["auc_skipped_classes"] = r.auc_skipped_classes;
  j["sufficiency"] = r.sufficiency ? nlohmann::json(*r.sufficiency) : nlohmann::json(nullptr);
  j["comprehensiveness"] = r.comprehensiveness ? nlohmann::json(*r.comprehensiveness) : nlohmann::json(nullptr);
  j["mask_iou"] = r.mask_iou ? nlohmann::json(*r.mask_iou) : nlohmann::json(nullptr);
  if (!r.breakdown.empty()) {
    auto& b = j["breakdown"] = nlohmann::json::array();
    for (const auto& child : r.breakdown) b.push_back(report_json(child));
  }
  return j;
}

std::string optional_cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

void csv_row(std::ostringstream& os, const MetricsReport& r) {
  os << r.name << ',' << r.samples << ',' << r.accuracy << ',' << r.auc_macro << ',' << optional_cell(r.sufficiency)
     << ',' << optional_cell(r.comprehensiveness) << ',' << optional_cell(r.mask_iou) << '\n';
}

}  // namespace

std::string report_to_json(const MetricsReport& report, int indent) { return report_json(report).dump(indent); }

std::string report_to_csv(const MetricsReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "name,samples,accuracy,auc_macro,sufficiency,comprehensiveness,mask_iou\n";
  csv_row(os, report);
  for (const auto& child : report.breakdown) csv_row(os, child);
  return os.str();
}

namespace {

std::vector<std::int64_t> chunk_index(std::int64_t begin, std::int64_t end) {
  std::vector<std::int64_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  Shape shape = parts.front().shape();
  shape[0] = 0;
  std::vector<double> data;
  for (const auto& p : parts) {
    shape[0] += p.dim(0);
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

Tensor predict(const ClassifierNet& classifier, const Tensor& images, std::int64_t chunk) {
  if (chunk < 1) throw std::invalid_argument("predict: chunk must be positive");
  NoGradGuard no_grad;
  std::vector<Tensor> parts;
  for (std::int64_t b = 0; b < images.dim(0); b += chunk) {
    const auto idx = chunk_index(b, std::min(images.dim(0), b + chunk));
    parts.push_back(classifier.forward(take_rows(images, idx)).probs);
  }
  if (parts.empty()) throw std::invalid_argument("predict: empty input");
  return concat_rows(parts);
}

Tensor predict_masks(MaskerNet& masker, const Tensor& images, std::int64_t chunk) {
  if (chunk < 1) throw std::invalid_argument("predict_masks: chunk must be positive");
  NoGradGuard no_grad;
  const bool was_training = masker.training();
  masker.set_training(false);
  std::vector<Tensor> parts;
  for (std::int64_t b = 0; b < images.dim(0); b += chunk) {
    const auto idx = chunk_index(b, std::min(images.dim(0), b + chunk));
    parts.push_back(masker.forward(take_rows(images, idx), false));
  }
  masker.set_training(was_training);
  if (parts.empty()) throw std::invalid_argument("predict_masks: empty input");
  return concat_rows(parts);
}

MetricsReport evaluate(const ClassifierNet& classifier, MaskerNet* masker, const ImageSet& data,
                       const EvalOptions& options, const std::string& name) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty data set");
  MetricsReport r;
  r.name = name;
  r.samples = data.size();
  Tensor probs = predict(classifier, data.images, options.chunk);
  r.accuracy = accuracy(probs, data.labels);
  auto auc = auc_macro_ovr_detail(probs, data.labels);
  r.auc_macro = auc.macro;
  r.auc_skipped_classes = auc.skipped_classes;

  if (options.explanation_metrics) {
    double suff = 0;
    double comp = 0;
    for (std::int64_t b = 0; b < data.size(); b += options.chunk) {
      const auto idx = chunk_index(b, std::min(data.size(), b + options.chunk));
      Tensor x = take_rows(data.images, idx);
      std::vector<std::int64_t> y(data.labels.begin() + b, data.labels.begin() + b + idx.size());
      Tensor cam = explain(classifier, x, y, {.root = options.cam_root}).normalized;
      const double w = static_cast<double>(idx.size());
      suff += w * sufficiency(classifier, x, y, cam, options.selector);
      comp += w * comprehensiveness(classifier, x, y, cam, options.selector);
    }
    r.sufficiency = suff / static_cast<double>(data.size());
    r.comprehensiveness = comp / static_cast<double>(data.size());
  }
  if (masker != nullptr && data.masks.defined()) {
    r.mask_iou = mask_iou(predict_masks(*masker, data.images, options.chunk), data.masks, options.iou_threshold);
  }
  r.check();
  return r;
}

std::string mask_source_name(MaskSource source) {
  switch (source) {
    case MaskSource::learned_masker: return "learned_masker";
    case MaskSource::gt_mask: return "gt_mask";
    case MaskSource::degraded_mask: return "degraded_mask";
    case MaskSource::ones: return "ones";
  }
  return "?";
}

Tensor degrade_masks(const Tensor& gt_masks, std::uint64_t seed) {
  if (gt_masks.rank() != 4 || gt_masks.dim(1) != 1) {
    throw std::invalid_argument("degrade_masks: expected [N,1,H,W], got " + shape_str(gt_masks.shape()));
  }
  const auto n = gt_masks.dim(0);
  const auto h = gt_masks.dim(2);
  const auto w = gt_masks.dim(3);
  const auto radius = std::max<std::int64_t>(1, h / 16);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> shift_y(-h / 4, h / 4);
  std::uniform_int_distribution<std::int64_t> shift_x(-w / 4, w / 4);
  auto src = gt_masks.data();
  std::vector<double> out(src.size(), 0.0);
  std::vector<double> moved(h * w);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto dy = shift_y(rng);
    const auto dx = shift_x(rng);
    const double* m = src.data() + i * h * w;
    std::fill(moved.begin(), moved.end(), 0.0);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const auto sy = y - dy;
        const auto sx = x - dx;
        if (sy >= 0 && sy < h && sx >= 0 && sx < w) moved[y * w + x] = m[sy * w + sx];
      }
    }
    double* dst = out.data() + i * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        double v = 0;
        for (auto yy = std::max<std::int64_t>(0, y - radius); yy <= std::min(h - 1, y + radius) && v == 0; ++yy) {
          for (auto xx = std::max<std::int64_t>(0, x - radius); xx <= std::min(w - 1, x + radius); ++xx) {
            if (moved[yy * w + xx] > 0.5) {
              v = 1;
              break;
            }
          }
        }
        dst[y * w + x] = v;
      }
    }
  }
  return Tensor::from_data(gt_masks.shape(), std::move(out));
}

MetricsReport perturbation_eval(const ClassifierNet& classifier, MaskerNet* masker, const ImageSet& data,
                                MaskSource source, const PerturbationOptions& options) {
  if (data.empty()) throw std::invalid_argument("perturbation_eval: empty data set");
  Tensor masks;
  switch (source) {
    case MaskSource::learned_masker:
      if (masker == nullptr) throw std::invalid_argument("perturbation_eval: learned_masker needs a masker");
      masks = predict_masks(*masker, data.images, options.chunk);
      break;
    case MaskSource::gt_mask:
      masks = data.masks;
      break;
    case MaskSource::degraded_mask:
      masks = degrade_masks(data.masks, options.seed);
      break;
    case MaskSource::ones:
      masks = Tensor::ones({data.size(), 1, data.images.dim(2), data.images.dim(3)});
      break;
  }
  if (!masks.defined()) throw std::invalid_argument("perturbation_eval: data set has no masks");
  Tensor perturbed = options.sigma > 0
                         ? apply_background_perturbation(data.images, masks, options.sigma, options.kind, options.seed)
                         : data.images;
  ImageSet altered{perturbed, data.masks, data.labels, data.palettes};
  EvalOptions plain;
  plain.chunk = options.chunk;
  plain.explanation_metrics = false;
  return evaluate(classifier, nullptr, altered, plain, mask_source_name(source));
}

MetricsReport ood_eval(const ClassifierNet& classifier, MaskerNet* masker, const std::vector<DomainSet>& targets,
                       int source_domain, const EvalOptions& options) {
  if (targets.empty()) throw std::invalid_argument("ood_eval: no target domains");
  MetricsReport top;
  top.name = "ood_mean";
  double suff = 0;
  double comp = 0;
  double iou = 0;
  for (const auto& t : targets) {
    if (t.domain == source_domain) {
      throw std::invalid_argument("ood_eval: domain " + std::to_string(t.domain) +
                                  " is the source domain and cannot be a target");
    }
    auto r = evaluate(classifier, masker, t.data, options, "domain_" + std::to_string(t.domain));
    top.samples += r.samples;
    top.accuracy += r.accuracy;
    top.auc_macro += r.auc_macro;
    suff += r.sufficiency.value_or(0);
    comp += r.comprehensiveness.value_or(0);
    iou += r.mask_iou.value_or(0);
    top.breakdown.push_back(std::move(r));
  }
  const double k = static_cast<double>(targets.size());
  top.accuracy /= k;
  top.auc_macro /= k;
  if (top.breakdown.front().sufficiency) top.sufficiency = suff / k;
  if (top.breakdown.front().comprehensiveness) top.comprehensiveness = comp / k;
  if (top.breakdown.front().mask_iou) top.mask_iou = iou / k;
  top.check();
  return top;
}

}  // namespace align
