#include <gtest/gtest.h>

#include "align/gradcam.hpp"
#include "gradcheck_cases.hpp"
#include "oracles.hpp"

using namespace align;
using namespace align::testing;

TEST(GradCam, MatchesManualCompositionOnTwentyConfigs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_LT(gradcam_oracle_error(seed), 1e-12) << "config seed " << seed;
  }
}

TEST(GradCam, NormalizedMapPeaksAtOneAndStaysInUnitRange) {
  ClassifierNet net = small_classifier(3);
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({4, 3, 8, 8}, rng, 0, 1);
  const std::vector<std::int64_t> y{0, 1, 2, 0};
  SaliencyMap m = explain(net, x, y);
  EXPECT_EQ(m.normalized.shape(), (Shape{4, 1, 8, 8}));
  for (int n = 0; n < 4; ++n) {
    double peak = 0;
    for (int i = 0; i < 64; ++i) {
      const double v = m.normalized.data()[n * 64 + i];
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      peak = std::max(peak, v);
    }
    EXPECT_GT(peak, 0.0);
  }
  // At the activation's own resolution the per-sample maximum is exactly 1.
  Tensor own = normalize_and_upsample(m.raw, m.raw.dim(2), m.raw.dim(3));
  const auto plane = m.raw.dim(2) * m.raw.dim(3);
  for (int n = 0; n < 4; ++n) {
    double peak = 0;
    for (std::int64_t i = 0; i < plane; ++i) peak = std::max(peak, own.data()[n * plane + i]);
    if (peak > 0) {
      EXPECT_DOUBLE_EQ(peak, 1.0);
    }
  }
}

TEST(GradCam, ZeroHeadGivesAllZeroMap) {
  ClassifierNet net = small_classifier(5);
  for (double& v : net.head_weight().mutable_data()) v = 0;
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  SaliencyMap m = explain(net, x, std::vector<std::int64_t>{0, 1});
  for (double v : m.normalized.data()) EXPECT_EQ(v, 0.0);
}

TEST(GradCam, ConstantModeLeavesParameterGradsAlone) {
  ClassifierNet net = small_classifier(6);
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  explain(net, x, std::vector<std::int64_t>{1, 2});
  for (const auto& p : net.parameters()) EXPECT_FALSE(p.value.has_grad()) << p.name;
}

TEST(GradCam, RejectsBadLabels) {
  ClassifierNet net = small_classifier(7);
  Tensor x = Tensor::zeros({2, 3, 8, 8});
  EXPECT_THROW(explain(net, x, std::vector<std::int64_t>{0}), std::invalid_argument);
  EXPECT_THROW(explain(net, x, std::vector<std::int64_t>{0, 3}), std::out_of_range);
}

TEST(GradCam, ChannelWeightsAreSpatialMeans) {
  Tensor act = Tensor::zeros({1, 2, 2, 2});
  Tensor g = Tensor::from_data({1, 2, 2, 2}, {1, 2, 3, 6, -1, -1, -1, -5});
  Tensor a = channel_weights(act, g);
  EXPECT_DOUBLE_EQ(a.data()[0], 3.0);
  EXPECT_DOUBLE_EQ(a.data()[1], -2.0);
}

TEST(GradCam, MapAppliesReluToTheWeightedSum) {
  Tensor act = Tensor::from_data({1, 2, 1, 2}, {1, 2, 3, 1});
  Tensor w = Tensor::from_data({1, 2}, {1, -1});
  Tensor m = gradcam_map(act, w);
  EXPECT_DOUBLE_EQ(m.data()[0], 0.0);  // 1 - 3 < 0
  EXPECT_DOUBLE_EQ(m.data()[1], 1.0);  // 2 - 1
}

TEST(GradCam, AllZeroRawMapSurvivesNormalization) {
  Tensor raw = Tensor::zeros({1, 1, 2, 2});
  Tensor n = normalize_and_upsample(raw, 4, 4);
  for (double v : n.data()) EXPECT_EQ(v, 0.0);
}
