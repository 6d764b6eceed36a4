#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "align/dataset_io.hpp"
#include "align/synth.hpp"
#include "test_support.hpp"

using namespace align;
using namespace align::testing;

namespace {

SyntheticSpec small_spec(double rho = 0.95) {
  SyntheticSpec s;
  s.image_height = 16;
  s.image_width = 16;
  s.samples_per_domain = 40;
  s.num_domains = 3;
  s.spurious_rho = rho;
  return s;
}

// counts[label][palette] over the source domain
std::vector<std::vector<double>> palette_counts(const SyntheticSpec& spec, int n) {
  std::vector<std::vector<double>> c(spec.num_classes, std::vector<double>(spec.num_classes, 0.0));
  for (int i = 0; i < n; ++i) {
    Sample s = generate_sample(spec, spec.source_domain, i);
    c[s.label][s.palette] += 1;
  }
  return c;
}

double mutual_information(const std::vector<std::vector<double>>& c) {
  double total = 0;
  for (const auto& r : c)
    for (double v : r) total += v;
  const std::size_t k = c.size();
  std::vector<double> row(k, 0), col(k, 0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      row[i] += c[i][j] / total;
      col[j] += c[i][j] / total;
    }
  double mi = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double p = c[i][j] / total;
      if (p > 0) mi += p * std::log(p / (row[i] * col[j]));
    }
  return mi;
}

}  // namespace

TEST(Synth, SamplesAreDeterministicPerIndex) {
  const SyntheticSpec spec = small_spec();
  Sample a = generate_sample(spec, 1, 7);
  Sample b = generate_sample(spec, 1, 7);
  EXPECT_EQ(max_abs_diff(a.image, b.image), 0.0);
  EXPECT_EQ(a.palette, b.palette);
  SyntheticSpec other = spec;
  other.seed = 1;
  EXPECT_GT(max_abs_diff(a.image, generate_sample(other, 1, 7).image), 0.0);
}

TEST(Synth, ImagesAndMasksAreWellFormed) {
  const SyntheticSpec spec = small_spec();
  for (int i = 0; i < 16; ++i) {
    Sample s = generate_sample(spec, 0, i);
    EXPECT_EQ(s.image.shape(), (Shape{3, 16, 16}));
    EXPECT_EQ(s.gt_mask.shape(), (Shape{1, 16, 16}));
    double area = 0;
    for (double v : s.gt_mask.data()) {
      EXPECT_TRUE(v == 0.0 || v == 1.0);
      area += v;
    }
    EXPECT_GE(area / 256, spec.min_object_fraction);
    EXPECT_LE(area / 256, spec.max_object_fraction);
    for (double v : s.image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(s.label, i % spec.num_classes);
  }
}

TEST(Synth, TargetDomainsUseAntiCorrelatedPalettes) {
  const SyntheticSpec spec = small_spec();
  for (int d = 1; d < spec.num_domains; ++d) {
    for (int i = 0; i < 8; ++i) {
      Sample s = generate_sample(spec, d, i);
      EXPECT_NE(s.palette, s.label);
      EXPECT_EQ(s.palette, anti_correlated_palette(s.label, d, spec));
    }
  }
}

TEST(Synth, RhoZeroMakesPaletteIndependentOfLabel) {
  SyntheticSpec spec = small_spec(0.0);
  const int n = 4000;
  auto c = palette_counts(spec, n);
  const double expected = static_cast<double>(n) / 16;
  double chi2 = 0;
  for (const auto& r : c)
    for (double v : r) chi2 += (v - expected) * (v - expected) / expected;
  // 9 degrees of freedom, 0.999 quantile
  EXPECT_LT(chi2, 27.88);
}

TEST(Synth, MutualInformationGrowsWithRho) {
  double previous = -1;
  for (double rho : {0.0, 0.3, 0.6, 0.95, 1.0}) {
    const double mi = mutual_information(palette_counts(small_spec(rho), 2000));
    EXPECT_GT(mi, previous) << "rho " << rho;
    previous = mi;
  }
  EXPECT_NEAR(previous, std::log(4.0), 1e-12);
}

TEST(Synth, SpecValidation) {
  SyntheticSpec s = small_spec();
  s.spurious_rho = 1.5;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.source_domain = 3;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.num_classes = 5;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.palette_strength = -0.1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Split, SizesAndStratification) {
  const SyntheticSpec spec = small_spec();
  auto data = generate_dataset(spec);
  Split sp = split_6_2_2(data[0].samples, 3);
  EXPECT_EQ(sp.train.size(), 24u);
  EXPECT_EQ(sp.val.size(), 8u);
  EXPECT_EQ(sp.test.size(), 8u);
  std::map<std::int64_t, int> val_counts;
  for (const auto& s : sp.val) ++val_counts[s.label];
  for (const auto& [label, count] : val_counts) EXPECT_EQ(count, 2) << label;

  std::vector<Sample> odd(data[0].samples.begin(), data[0].samples.begin() + 13);
  Split so = split_6_2_2(odd, 1);
  EXPECT_EQ(so.train.size(), 7u);
  EXPECT_EQ(so.val.size(), 2u);
  EXPECT_EQ(so.test.size(), 4u);
}

TEST(Blur, ImpulseSpreadsIntoNormalizedGaussian) {
  std::vector<double> v(15 * 15, 0.0);
  v[7 * 15 + 7] = 1.0;
  Tensor x = Tensor::from_data({1, 1, 15, 15}, std::move(v));
  Tensor b = gaussian_blur(x, 1.0);
  double total = 0;
  for (double e : b.data()) total += e;
  EXPECT_NEAR(total, 1.0, 1e-12);
  const double g0 = 1.0, g1 = std::exp(-0.5), g2 = std::exp(-2.0), g3 = std::exp(-4.5);
  const double z = g0 + 2 * (g1 + g2 + g3);
  EXPECT_NEAR(b.data()[7 * 15 + 7], (g0 / z) * (g0 / z), 1e-12);
  EXPECT_NEAR(b.data()[7 * 15 + 8], (g0 / z) * (g1 / z), 1e-12);
  EXPECT_NEAR(b.data()[9 * 15 + 6], (g2 / z) * (g1 / z), 1e-12);
  EXPECT_EQ(b.data()[7 * 15 + 11], 0.0);
}

TEST(Blur, ConstantImageIsUnchanged) {
  Tensor x = Tensor::full({1, 3, 6, 6}, 0.4);
  EXPECT_LT(max_abs_diff(gaussian_blur(x, 5.0), x), 1e-14);
}

TEST(Perturbation, FullMaskIsBitwiseClean) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  Tensor ones = Tensor::full({2, 1, 8, 8}, 1.0);
  EXPECT_EQ(max_abs_diff(apply_background_perturbation(x, ones, 5.0), x), 0.0);
  EXPECT_EQ(max_abs_diff(apply_background_perturbation(x, ones, 0.3, PerturbationKind::noise, 1), x), 0.0);
}

TEST(Perturbation, ZeroMaskGivesTheBlur) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({1, 3, 8, 8}, rng, 0, 1);
  Tensor zeros = Tensor::zeros({1, 1, 8, 8});
  EXPECT_LT(max_abs_diff(apply_background_perturbation(x, zeros, 2.0), gaussian_blur(x, 2.0)), 1e-15);
}

TEST(DatasetIo, ManifestIsDeterministicAndRoundTrips) {
  const SyntheticSpec spec = small_spec();
  auto splits = split_dataset(generate_dataset(spec), spec.seed);
  const std::string m1 = dataset_manifest(spec, splits);
  const std::string m2 = dataset_manifest(spec, split_dataset(generate_dataset(spec), spec.seed));
  EXPECT_EQ(m1, m2);
  const auto root = std::filesystem::temp_directory_path() / "align_unit" / "dataset";
  std::filesystem::remove_all(root);
  write_dataset(root, spec, splits);
  LoadedDataset back = read_dataset(root);
  EXPECT_EQ(spec_to_json(back.spec), spec_to_json(spec));
  ASSERT_EQ(back.splits.size(), 3u);
  const auto& a = splits[1].split.test[2];
  const auto& b = back.domain(1).split.test[2];
  EXPECT_EQ(a.label, b.label);
  EXPECT_LE(max_abs_diff(a.image, b.image), 0.5 / 255 + 1e-12);
  EXPECT_EQ(max_abs_diff(a.gt_mask, b.gt_mask), 0.0);
  EXPECT_EQ(b.palette, -1);
}

TEST(DatasetIo, SpecJsonRejectsUnknownKeys) {
  std::string text = spec_to_json(small_spec());
  text.insert(text.find('{') + 1, "\"bogus\": 1,");
  EXPECT_THROW(spec_from_json(text), std::invalid_argument);
}
