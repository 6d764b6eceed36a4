#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "align/checkpoint.hpp"
#include "align/models.hpp"
#include "align/ops.hpp"
#include "test_support.hpp"

using namespace align;
using namespace align::testing;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "align_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Classifier, ShapesThroughTheStack) {
  ClassifierConfig cc;
  cc.channels = {4, 6};
  cc.num_classes = 3;
  ClassifierNet net(cc);
  net.init_params(1);
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({2, 3, 16, 16}, rng, 0, 1);
  ClassifierOutput out = net.forward(x);
  EXPECT_EQ(out.logits.shape(), (Shape{2, 3}));
  EXPECT_EQ(out.activation.shape(), (Shape{2, 6, 8, 8}));
  for (int n = 0; n < 2; ++n) {
    double s = 0;
    for (int k = 0; k < 3; ++k) s += out.probs.data()[n * 3 + k];
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
}

TEST(Classifier, RejectsInputsThatDoNotPoolEvenly) {
  ClassifierNet net;
  EXPECT_THROW(net.check_input({1, 3, 6, 6}), std::invalid_argument);
  EXPECT_THROW(net.check_input({1, 1, 32, 32}), std::invalid_argument);
  EXPECT_NO_THROW(net.check_input({1, 3, 32, 32}));
}

TEST(Classifier, SamplesDoNotInteract) {
  ClassifierConfig cc;
  cc.channels = {3};
  ClassifierNet net(cc);
  net.init_params(2);
  std::mt19937_64 rng(2);
  Tensor a = random_tensor({1, 3, 8, 8}, rng, 0, 1);
  Tensor b = random_tensor({1, 3, 8, 8}, rng, 0, 1);
  std::vector<double> v(a.data().begin(), a.data().end());
  v.insert(v.end(), b.data().begin(), b.data().end());
  Tensor both = Tensor::from_data({2, 3, 8, 8}, std::move(v));
  Tensor pa = net.forward(a).probs;
  Tensor pab = net.forward(both).probs;
  for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(pa.data()[k], pab.data()[k]);
}

TEST(Init, FanInBoundAndDeterminism) {
  Tensor w = Tensor::zeros({8, 3, 3, 3});
  init_uniform_fan_in(w, 27, 5);
  const double bound = std::sqrt(6.0 / 27);
  for (double v : w.data()) EXPECT_LE(std::abs(v), bound);
  Tensor w2 = Tensor::zeros({8, 3, 3, 3});
  init_uniform_fan_in(w2, 27, 5);
  EXPECT_EQ(hash_tensors({{"w", w}}), hash_tensors({{"w", w2}}));
  init_uniform_fan_in(w2, 27, 6);
  EXPECT_NE(hash_tensors({{"w", w}}), hash_tensors({{"w", w2}}));
}

TEST(BatchNorm, TrainModeNormalizesAndEvalUsesRunningStats) {
  BatchNorm2d bn(2, 0.5);
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({4, 2, 3, 3}, rng, -2, 5);
  Tensor y = bn.forward(x);
  for (int c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) {
        const double v = y.data()[(n * 2 + c) * 9 + i];
        s += v;
        s2 += v * v;
      }
    EXPECT_NEAR(s / 36, 0.0, 1e-12);
    EXPECT_NEAR(s2 / 36, 1.0, 1e-3);
  }
  bn.set_training(false);
  Tensor before = bn.running_mean().clone();
  Tensor e1 = bn.forward(x);
  EXPECT_EQ(max_abs_diff(before, bn.running_mean()), 0.0);
  Tensor single = slice(x, 0, 0, 1);
  Tensor e2 = bn.forward(single);
  for (int i = 0; i < 18; ++i) EXPECT_DOUBLE_EQ(e1.data()[i], e2.data()[i]);
}

TEST(Masker, OutputIsOneChannelInUnitInterval) {
  MaskerNet m({3, 4});
  m.init_params(4);
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  Tensor out = m.forward(x);
  EXPECT_EQ(out.shape(), (Shape{2, 1, 8, 8}));
  for (double v : out.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(FreezeGuard, RestoresPreviousFlags) {
  ClassifierNet net;
  net.init_params(0);
  {
    FreezeGuard g(net.parameters());
    for (const auto& p : net.parameters()) EXPECT_FALSE(p.value.requires_grad());
  }
  for (const auto& p : net.parameters()) EXPECT_TRUE(p.value.requires_grad());
}

TEST(Checkpoint, RoundTripIsBitwise) {
  ClassifierNet net;
  net.init_params(9);
  MaskerNet m;
  m.init_params(10);
  Checkpoint ck;
  ck.tensors = prefixed(net.state_dict(), "classifier");
  for (auto& t : prefixed(m.state_dict(), "masker")) ck.tensors.push_back(t);
  ck.meta_json = R"({"note":"x"})";
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(hash_tensors(back.tensors), hash_tensors(ck.tensors));
  EXPECT_EQ(layout_diff(ck.tensors, back.tensors), "");
  EXPECT_NE(back.meta_json.find("note"), std::string::npos);

  ClassifierNet other;
  other.load_state(strip_prefix(back.tensors, "classifier"));
  EXPECT_EQ(hash_tensors(other.state_dict()), hash_tensors(net.state_dict()));

  save_checkpoint(temp_path("again.ckpt"), back);
  std::ifstream a(path, std::ios::binary), b(temp_path("again.ckpt"), std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto path = temp_path("corrupt.ckpt");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTACKPT";
  }
  EXPECT_ANY_THROW(load_checkpoint(path));
  ClassifierNet net;
  Checkpoint ck;
  ck.tensors = net.state_dict();
  save_checkpoint(path, ck);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_ANY_THROW(load_checkpoint(path));
}

TEST(Checkpoint, LayoutDiffNamesMismatches) {
  ClassifierConfig a, b;
  b.channels = {16, 32};
  const std::string d = layout_diff(ClassifierNet(a).state_dict(), ClassifierNet(b).state_dict());
  EXPECT_FALSE(d.empty());
  ClassifierNet net(a);
  EXPECT_ANY_THROW(net.load_state(ClassifierNet(b).state_dict()));
}
