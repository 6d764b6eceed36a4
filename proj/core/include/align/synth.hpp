#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "align/tensor.hpp"

namespace align {

enum class ShapeKind { disk, square, triangle, cross };
enum class TargetAssignment { anti_correlated, shuffled };
enum class PerturbationKind { blur, noise };

inline constexpr int kMaxClasses = 4;

/// Synthetic spurious-background benchmark. Class c is always drawn as shape
/// c; the background palette is tied to the label only through
/// `spurious_rho` in the source domain, and anti-correlated (or shuffled) in
/// every other domain. Each domain draws its own background texture.
struct SyntheticSpec {
  int num_classes = 4;
  int image_height = 32;
  int image_width = 32;
  /// Source domain: with probability rho the background uses the label's
  /// palette, otherwise a palette drawn uniformly from all of them.
  double spurious_rho = 0.95;
  int num_domains = 4;
  int source_domain = 0;
  int samples_per_domain = 500;
  TargetAssignment target_assignment = TargetAssignment::anti_correlated;
  double min_object_fraction = 0.10;
  double max_object_fraction = 0.30;
  double pixel_noise = 0.02;
  /// Blend of each palette with the mean palette colour; 1 keeps the raw
  /// palettes, 0 makes every background the same hue.
  double palette_strength = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Sample {
  Tensor image;    ///< [3,H,W] in [0,1]
  std::int64_t label = 0;
  int domain = 0;
  Tensor gt_mask;  ///< [1,H,W], 1 on object pixels
  int palette = 0;
};

struct DomainSamples {
  int domain = 0;
  std::vector<Sample> samples;
};

struct Split {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

struct DomainSplit {
  int domain = 0;
  Split split;
};

ShapeKind shape_for_class(std::int64_t label);
std::string shape_name(ShapeKind kind);
/// Base RGB color of background palette `index`.
std::array<double, 3> palette_color(int index);
/// Palette used by a target domain under the anti-correlated assignment.
int anti_correlated_palette(std::int64_t label, int domain, const SyntheticSpec& spec);

/// One sample; its random stream depends only on (seed, domain, index).
Sample generate_sample(const SyntheticSpec& spec, int domain, int index);
std::vector<DomainSamples> generate_dataset(const SyntheticSpec& spec);

/// Label-stratified shuffled split with sizes floor(0.6n) / floor(0.2n) / rest.
Split split_6_2_2(std::vector<Sample> samples, std::uint64_t seed);
std::vector<DomainSplit> split_dataset(const std::vector<DomainSamples>& dataset, std::uint64_t seed);

Tensor stack_images(std::span<const Sample> samples);
Tensor stack_masks(std::span<const Sample> samples);
std::vector<std::int64_t> stack_labels(std::span<const Sample> samples);

/// Stacked images, masks and labels of one split.
struct ImageSet {
  Tensor images;  ///< [N,3,H,W]
  Tensor masks;   ///< [N,1,H,W]
  std::vector<std::int64_t> labels;
  std::vector<int> palettes;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  bool empty() const { return labels.empty(); }
};

ImageSet make_image_set(std::span<const Sample> samples);
/// Rows `index` of a stacked [N,...] tensor.
Tensor take_rows(const Tensor& x, std::span<const std::int64_t> index);
ImageSet subset(const ImageSet& set, std::span<const std::int64_t> index);

/// Separable Gaussian blur of [N,C,H,W] with radius ceil(3 sigma) and edge
/// replication.
Tensor gaussian_blur(const Tensor& x, double sigma);
/// mask * x + (1 - mask) * corrupt(x), where corrupt is a Gaussian blur or
/// additive Gaussian noise (clamped to [0,1]) of standard deviation sigma.
Tensor apply_background_perturbation(const Tensor& x, const Tensor& mask, double sigma,
                                     PerturbationKind kind = PerturbationKind::blur, std::uint64_t noise_seed = 0);

}  // namespace align
