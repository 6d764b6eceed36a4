#include "align/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace align {
namespace {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t state = seed;
  std::uint64_t h = splitmix64(state);
  state ^= a * 0xD6E8FEB86659FD93ull;
  h ^= splitmix64(state);
  state ^= b * 0xA0761D6478BD642Full;
  h ^= splitmix64(state);
  return h;
}

constexpr std::array<std::array<double, 3>, kMaxClasses> kPalettes = {{
    {0.62, 0.16, 0.14},
    {0.14, 0.52, 0.20},
    {0.16, 0.24, 0.64},
    {0.58, 0.48, 0.10},
}};

double half_extent(ShapeKind kind, double area, bool vertical) {
  switch (kind) {
    case ShapeKind::disk:
      return std::sqrt(area / std::numbers::pi);
    case ShapeKind::square:
      return std::sqrt(area) / 2;
    case ShapeKind::triangle: {
      const double h = std::sqrt(area * std::sqrt(3.0));
      return vertical ? h / 2 : h / std::sqrt(3.0);
    }
    case ShapeKind::cross:
      return std::sqrt(9.0 * area / 5.0) / 2;
  }
  return 0;
}

bool inside(ShapeKind kind, double area, double dx, double dy) {
  switch (kind) {
    case ShapeKind::disk: {
      const double r = std::sqrt(area / std::numbers::pi);
      return dx * dx + dy * dy <= r * r;
    }
    case ShapeKind::square: {
      const double half = std::sqrt(area) / 2;
      return std::abs(dx) <= half && std::abs(dy) <= half;
    }
    case ShapeKind::triangle: {
      // apex up, box centred on (0,0)
      const double h = std::sqrt(area * std::sqrt(3.0));
      const double depth = dy + h / 2;
      if (depth < 0 || depth > h) return false;
      return std::abs(dx) <= depth / std::sqrt(3.0);
    }
    case ShapeKind::cross: {
      const double arm = std::sqrt(9.0 * area / 5.0);
      const double t = arm / 6;
      const double l = arm / 2;
      return (std::abs(dx) <= t && std::abs(dy) <= l) || (std::abs(dy) <= t && std::abs(dx) <= l);
    }
  }
  return false;
}

void paint_background(std::vector<double>& img, std::int64_t h, std::int64_t w, int style,
                      const std::array<double, 3>& base, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const std::int64_t plane = h * w;
  const double theta = u01(rng) * std::numbers::pi;
  const double period = 4.0 + 4.0 * u01(rng);
  const int cell = 3 + static_cast<int>(u01(rng) * 4);
  const double phase = u01(rng) * 2 * std::numbers::pi;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double scale = 1.0;
      switch (style % 4) {
        case 0:
          scale = 1.0 + 0.18 * n01(rng);
          break;
        case 1: {
          const double t = (x * std::cos(theta) + y * std::sin(theta)) * 2 * std::numbers::pi / period + phase;
          scale = std::sin(t) >= 0 ? 1.15 : 0.7;
          break;
        }
        case 2:
          scale = ((x / cell + y / cell) % 2 == 0) ? 1.12 : 0.68;
          break;
        case 3: {
          const double proj = ((x + 0.5) * std::cos(theta) + (y + 0.5) * std::sin(theta)) / std::max(h, w);
          scale = 0.75 + 0.35 * (proj * 0.5 + 0.5) + 0.05 * n01(rng);
          break;
        }
      }
      for (int c = 0; c < 3; ++c) img[c * plane + y * w + x] = base[c] * scale;
    }
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes < 2 || num_classes > kMaxClasses) {
    throw std::invalid_argument("num_classes must lie in [2, " + std::to_string(kMaxClasses) + "], got " +
                                std::to_string(num_classes));
  }
  if (image_height < 8 || image_width < 8) throw std::invalid_argument("images must be at least 8x8");
  if (!(spurious_rho >= 0 && spurious_rho <= 1)) throw std::invalid_argument("spurious_rho must lie in [0, 1]");
  if (num_domains < 1) throw std::invalid_argument("num_domains must be positive");
  if (source_domain < 0 || source_domain >= num_domains) {
    throw std::invalid_argument("source_domain " + std::to_string(source_domain) + " out of range");
  }
  if (samples_per_domain < 10) throw std::invalid_argument("samples_per_domain must be at least 10");
  if (!(min_object_fraction > 0 && min_object_fraction <= max_object_fraction && max_object_fraction < 0.6)) {
    throw std::invalid_argument("object fraction range must satisfy 0 < min <= max < 0.6");
  }
  if (!(pixel_noise >= 0)) throw std::invalid_argument("pixel_noise must be non-negative");
  if (!(palette_strength >= 0 && palette_strength <= 1)) throw std::invalid_argument("palette_strength must lie in [0, 1]");
}

ShapeKind shape_for_class(std::int64_t label) {
  if (label < 0 || label >= kMaxClasses) throw std::out_of_range("no shape for class " + std::to_string(label));
  return static_cast<ShapeKind>(label);
}

std::string shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::cross: return "cross";
  }
  return "?";
}

std::array<double, 3> palette_color(int index) {
  if (index < 0 || index >= kMaxClasses) throw std::out_of_range("no palette " + std::to_string(index));
  return kPalettes[index];
}

int anti_correlated_palette(std::int64_t label, int domain, const SyntheticSpec& spec) {
  const int k = spec.num_classes;
  int rank = domain < spec.source_domain ? domain : domain - 1;
  const int shift = 1 + rank % (k - 1);
  return static_cast<int>((label + shift) % k);
}

Sample generate_sample(const SyntheticSpec& spec, int domain, int index) {
  if (domain < 0 || domain >= spec.num_domains) throw std::out_of_range("domain " + std::to_string(domain));
  Rng rng(stream_seed(spec.seed, static_cast<std::uint64_t>(domain) + 1, static_cast<std::uint64_t>(index) + 1));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> any_palette(0, spec.num_classes - 1);

  Sample s;
  s.domain = domain;
  s.label = index % spec.num_classes;
  if (domain == spec.source_domain) {
    s.palette = u01(rng) < spec.spurious_rho ? static_cast<int>(s.label) : any_palette(rng);
  } else if (spec.target_assignment == TargetAssignment::anti_correlated) {
    s.palette = anti_correlated_palette(s.label, domain, spec);
  } else {
    s.palette = any_palette(rng);
  }

  const std::int64_t h = spec.image_height;
  const std::int64_t w = spec.image_width;
  const std::int64_t plane = h * w;
  std::vector<double> img(3 * plane);
  auto base = palette_color(s.palette);
  for (int c = 0; c < 3; ++c) {
    double grey = 0;
    for (const auto& p : kPalettes) grey += p[c] / kMaxClasses;
    base[c] = grey + spec.palette_strength * (base[c] - grey);
  }
  for (auto& c : base) c = std::clamp(c + 0.06 * (u01(rng) - 0.5), 0.02, 0.7);
  paint_background(img, h, w, domain, base, rng);

  const ShapeKind kind = shape_for_class(s.label);
  std::vector<double> mask(plane, 0.0);
  for (int attempt = 0;; ++attempt) {
    if (attempt > 200) throw std::runtime_error("could not place an object of the requested size");
    const double frac = spec.min_object_fraction + (spec.max_object_fraction - spec.min_object_fraction) * u01(rng);
    const double area = frac * static_cast<double>(plane);
    const double hx = half_extent(kind, area, false);
    const double hy = half_extent(kind, area, true);
    if (2 * hx + 2 > w || 2 * hy + 2 > h) continue;
    const double cx = 1 + hx + (w - 2 - 2 * hx) * u01(rng);
    const double cy = 1 + hy + (h - 2 - 2 * hy) * u01(rng);
    std::int64_t count = 0;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const bool in = inside(kind, area, x + 0.5 - cx, y + 0.5 - cy);
        mask[y * w + x] = in ? 1.0 : 0.0;
        count += in;
      }
    }
    const double got = static_cast<double>(count) / static_cast<double>(plane);
    if (got >= spec.min_object_fraction && got <= spec.max_object_fraction) break;
  }

  const double level = 0.78 + 0.17 * u01(rng);
  std::array<double, 3> tint{};
  for (auto& t : tint) t = 0.06 * (u01(rng) - 0.5);
  std::normal_distribution<double> noise(0.0, spec.pixel_noise > 0 ? spec.pixel_noise : 1.0);
  for (std::int64_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      double& v = img[c * plane + p];
      if (mask[p] > 0) v = level + tint[c];
      if (spec.pixel_noise > 0) v += noise(rng);
      v = std::clamp(v, 0.0, 1.0);
    }
  }
  s.image = Tensor::from_data({3, h, w}, std::move(img));
  s.gt_mask = Tensor::from_data({1, h, w}, std::move(mask));
  return s;
}

std::vector<DomainSamples> generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<DomainSamples> out;
  for (int d = 0; d < spec.num_domains; ++d) {
    DomainSamples ds;
    ds.domain = d;
    ds.samples.reserve(spec.samples_per_domain);
    for (int i = 0; i < spec.samples_per_domain; ++i) ds.samples.push_back(generate_sample(spec, d, i));
    out.push_back(std::move(ds));
  }
  return out;
}

Split split_6_2_2(std::vector<Sample> samples, std::uint64_t seed) {
  const std::size_t n = samples.size();
  if (n < 10) throw std::invalid_argument("split_6_2_2 needs at least 10 samples, got " + std::to_string(n));
  Rng rng(seed);

  std::vector<std::int64_t> labels;
  for (const auto& s : samples) {
    if (std::find(labels.begin(), labels.end(), s.label) == labels.end()) labels.push_back(s.label);
  }
  std::sort(labels.begin(), labels.end());
  std::vector<std::vector<std::size_t>> groups(labels.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = std::lower_bound(labels.begin(), labels.end(), samples[i].label) - labels.begin();
    groups[g].push_back(i);
  }
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);

  // Interleave classes by fractional position (r + 1/2) / n_c so every prefix
  // holds each class in proportion.
  struct Key {
    std::size_t group;
    std::size_t rank;
  };
  std::vector<Key> order;
  order.reserve(n);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t r = 0; r < groups[g].size(); ++r) order.push_back({g, r});
  }
  std::sort(order.begin(), order.end(), [&](const Key& a, const Key& b) {
    const auto lhs = (2 * a.rank + 1) * groups[b.group].size();
    const auto rhs = (2 * b.rank + 1) * groups[a.group].size();
    if (lhs != rhs) return lhs < rhs;
    return a.group < b.group;
  });

  const std::size_t n_train = (6 * n) / 10;
  const std::size_t n_val = (2 * n) / 10;
  Split split;
  for (std::size_t i = 0; i < n; ++i) {
    Sample& s = samples[groups[order[i].group][order[i].rank]];
    if (i < n_train) {
      split.train.push_back(std::move(s));
    } else if (i < n_train + n_val) {
      split.val.push_back(std::move(s));
    } else {
      split.test.push_back(std::move(s));
    }
  }
  std::shuffle(split.train.begin(), split.train.end(), rng);
  std::shuffle(split.val.begin(), split.val.end(), rng);
  std::shuffle(split.test.begin(), split.test.end(), rng);
  return split;
}

std::vector<DomainSplit> split_dataset(const std::vector<DomainSamples>& dataset, std::uint64_t seed) {
  std::vector<DomainSplit> out;
  for (const auto& d : dataset) {
    out.push_back({d.domain, split_6_2_2(d.samples, stream_seed(seed, 0x5117, static_cast<std::uint64_t>(d.domain)))});
  }
  return out;
}

namespace {

Tensor stack_field(std::span<const Sample> samples, Tensor Sample::*field) {
  if (samples.empty()) throw std::invalid_argument("cannot stack an empty batch");
  const Shape& inner = (samples.front().*field).shape();
  Shape shape{static_cast<std::int64_t>(samples.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> data;
  data.reserve(numel_of(shape));
  for (const auto& s : samples) {
    const Tensor& t = s.*field;
    if (t.shape() != inner) {
      throw std::invalid_argument("cannot stack " + shape_str(t.shape()) + " with " + shape_str(inner));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

Tensor stack_images(std::span<const Sample> samples) { return stack_field(samples, &Sample::image); }
Tensor stack_masks(std::span<const Sample> samples) { return stack_field(samples, &Sample::gt_mask); }

std::vector<std::int64_t> stack_labels(std::span<const Sample> samples) {
  std::vector<std::int64_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

ImageSet make_image_set(std::span<const Sample> samples) {
  ImageSet set;
  set.images = stack_images(samples);
  set.masks = stack_masks(samples);
  set.labels = stack_labels(samples);
  for (const auto& s : samples) set.palettes.push_back(s.palette);
  return set;
}

Tensor take_rows(const Tensor& x, std::span<const std::int64_t> index) {
  if (x.rank() < 1) throw std::invalid_argument("take_rows: rank-0 tensor");
  const std::int64_t rows = x.dim(0);
  const std::int64_t stride = rows == 0 ? 0 : x.numel() / rows;
  Shape shape = x.shape();
  shape[0] = static_cast<std::int64_t>(index.size());
  std::vector<double> data;
  data.reserve(index.size() * stride);
  auto src = x.data();
  for (auto i : index) {
    if (i < 0 || i >= rows) throw std::out_of_range("take_rows: row " + std::to_string(i) + " of " + std::to_string(rows));
    data.insert(data.end(), src.begin() + i * stride, src.begin() + (i + 1) * stride);
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

ImageSet subset(const ImageSet& set, std::span<const std::int64_t> index) {
  ImageSet out;
  out.images = take_rows(set.images, index);
  if (set.masks.defined()) out.masks = take_rows(set.masks, index);
  for (auto i : index) {
    out.labels.push_back(set.labels.at(i));
    if (!set.palettes.empty()) out.palettes.push_back(set.palettes.at(i));
  }
  return out;
}

Tensor gaussian_blur(const Tensor& x, double sigma) {
  if (x.rank() != 4) throw std::invalid_argument("gaussian_blur: expected [N,C,H,W], got " + shape_str(x.shape()));
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-(k * k) / (2 * sigma * sigma));
    total += taps[k + radius];
  }
  for (auto& t : taps) t /= total;

  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t h = x.dim(2);
  const std::int64_t w = x.dim(3);
  auto src = x.data();
  std::vector<double> tmp(src.size());
  std::vector<double> out(src.size());
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* in = src.data() + p * h * w;
    double* mid = tmp.data() + p * h * w;
    double* dst = out.data() + p * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xx = 0; xx < w; ++xx) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          acc += taps[k + radius] * in[y * w + std::clamp<std::int64_t>(xx + k, 0, w - 1)];
        }
        mid[y * w + xx] = acc;
      }
    }
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xx = 0; xx < w; ++xx) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          acc += taps[k + radius] * mid[std::clamp<std::int64_t>(y + k, 0, h - 1) * w + xx];
        }
        dst[y * w + xx] = acc;
      }
    }
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

Tensor apply_background_perturbation(const Tensor& x, const Tensor& mask, double sigma, PerturbationKind kind,
                                     std::uint64_t noise_seed) {
  if (x.rank() != 4 || mask.rank() != 4 || mask.dim(1) != 1 || mask.dim(0) != x.dim(0) ||
      mask.dim(2) != x.dim(2) || mask.dim(3) != x.dim(3)) {
    throw std::invalid_argument("apply_background_perturbation: mask " + shape_str(mask.shape()) +
                                " does not fit input " + shape_str(x.shape()));
  }
  Tensor corrupt;
  if (kind == PerturbationKind::blur) {
    corrupt = gaussian_blur(x, sigma);
  } else {
    if (!(sigma >= 0)) throw std::invalid_argument("noise sigma must be non-negative");
    Rng rng(noise_seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> v(x.data().begin(), x.data().end());
    for (auto& e : v) e = std::clamp(e + sigma * n01(rng), 0.0, 1.0);
    corrupt = Tensor::from_data(x.shape(), std::move(v));
  }
  const std::int64_t n = x.dim(0);
  const std::int64_t c = x.dim(1);
  const std::int64_t plane = x.dim(2) * x.dim(3);
  auto xs = x.data();
  auto cs = corrupt.data();
  auto ms = mask.data();
  std::vector<double> out(xs.size());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t p = 0; p < plane; ++p) {
        const std::int64_t k = (i * c + ch) * plane + p;
        const double m = ms[i * plane + p];
        out[k] = m * xs[k] + (1 - m) * cs[k];
      }
    }
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

}  // namespace align
