#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "align/tensor.hpp"

namespace align {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Deep copy of a model's parameters and buffers, keyed by name.
using StateDict = std::vector<NamedTensor>;

/// Fan-in scaled uniform init: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
void init_uniform_fan_in(Tensor& weight, std::int64_t fan_in, std::uint64_t seed);

/// Combined hash of the raw bytes of every tensor in `tensors`.
std::uint64_t hash_tensors(const std::vector<NamedTensor>& tensors);

struct ClassifierConfig {
  int in_channels = 3;
  int num_classes = 4;
  std::vector<int> channels{16, 32, 64};
  /// Stage whose post-ReLU activation serves as the Grad-CAM layer; -1 = last.
  int cam_layer_index = -1;
};

struct ClassifierOutput {
  Tensor logits;
  Tensor probs;
  Tensor activation;
};

/// Stack of (3x3 conv, ReLU, 2x2 average pool) stages followed by global
/// average pooling and a dense layer.
///
/// Samples never interact inside the network, so the gradient of a batch sum
/// of per-sample scores is the per-sample gradient. Grad-CAM relies on this.
class ClassifierNet {
 public:
  explicit ClassifierNet(ClassifierConfig config = {});
  ClassifierNet(ClassifierNet&&) = default;
  ClassifierNet& operator=(ClassifierNet&&) = default;
  ClassifierNet(const ClassifierNet&) = delete;
  ClassifierNet& operator=(const ClassifierNet&) = delete;

  ClassifierOutput forward(const Tensor& x) const;
  /// Input through the ReLU of the Grad-CAM stage.
  Tensor features(const Tensor& x) const;
  /// From the Grad-CAM activation to logits.
  Tensor logits_from_features(const Tensor& activation) const;

  void init_params(std::uint64_t seed);
  std::vector<NamedTensor> parameters() const;
  StateDict state_dict() const;
  void load_state(const StateDict& state);

  const ClassifierConfig& config() const { return config_; }
  int cam_layer() const { return cam_layer_; }
  Tensor& head_weight() { return head_weight_; }
  Tensor& head_bias() { return head_bias_; }
  /// Checks that an input of `shape` fits the stage stack.
  void check_input(const Shape& shape) const;

 private:
  struct Stage {
    Tensor weight;
    Tensor bias;
  };
  Tensor run_stage(std::size_t index, const Tensor& x, bool pool) const;

  ClassifierConfig config_;
  int cam_layer_;
  std::vector<Stage> stages_;
  Tensor head_weight_;
  Tensor head_bias_;
};

/// Per-channel batch normalization over (N, H, W).
class BatchNorm2d {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double epsilon = 1e-5);

  /// Train mode normalizes with batch statistics and, if `update_running`,
  /// folds them into the running estimates. Eval mode uses running
  /// statistics only.
  Tensor forward(const Tensor& x, bool update_running = true);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  Tensor& scale() { return scale_; }
  Tensor& shift() { return shift_; }
  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }
  std::vector<NamedTensor> parameters(const std::string& prefix) const;
  std::vector<NamedTensor> buffers(const std::string& prefix) const;

 private:
  int channels_;
  double momentum_;
  double epsilon_;
  bool training_ = true;
  Tensor scale_;
  Tensor shift_;
  Tensor running_mean_;
  Tensor running_var_;
};

struct MaskerConfig {
  int in_channels = 3;
  int hidden_channels = 16;
};

/// Two (3x3 conv, ReLU, batch norm) blocks and a 1x1 conv with sigmoid,
/// producing one soft mask channel at input resolution.
class MaskerNet {
 public:
  explicit MaskerNet(MaskerConfig config = {});
  MaskerNet(MaskerNet&&) = default;
  MaskerNet& operator=(MaskerNet&&) = default;
  MaskerNet(const MaskerNet&) = delete;
  MaskerNet& operator=(const MaskerNet&) = delete;

  Tensor forward(const Tensor& x, bool update_running = true);

  void set_training(bool training);
  bool training() const { return bn1_.training(); }
  void init_params(std::uint64_t seed);
  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
  StateDict state_dict() const;
  void load_state(const StateDict& state);

  const MaskerConfig& config() const { return config_; }
  Tensor& final_weight() { return w3_; }
  Tensor& final_bias() { return b3_; }

 private:
  MaskerConfig config_;
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
  BatchNorm2d bn1_;
  BatchNorm2d bn2_;
};

/// Toggles requires_grad off for a parameter set for the guard's lifetime.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<NamedTensor> params);
  ~FreezeGuard();
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<NamedTensor> params_;
  std::vector<bool> previous_;
};

}  // namespace align
