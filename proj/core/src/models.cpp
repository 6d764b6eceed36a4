#include "align/models.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

#include "align/ops.hpp"

namespace align {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Tensor parameter(Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

void load_into(const StateDict& state, const std::vector<NamedTensor>& targets, const char* model) {
  for (const auto& target : targets) {
    const NamedTensor* found = nullptr;
    for (const auto& entry : state)
      if (entry.name == target.name) found = &entry;
    if (!found) throw std::invalid_argument(std::string(model) + ": state is missing '" + target.name + "'");
    if (found->value.shape() != target.value.shape()) {
      throw std::invalid_argument(std::string(model) + ": '" + target.name + "' has shape " +
                                  shape_str(found->value.shape()) + ", expected " + shape_str(target.value.shape()));
    }
    Tensor dst = target.value;
    auto src = found->value.data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

StateDict deep_copy(const std::vector<NamedTensor>& tensors) {
  StateDict out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back({t.name, t.value.detach()});
  return out;
}

}  // namespace

void init_uniform_fan_in(Tensor& weight, std::int64_t fan_in, std::uint64_t seed) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : weight.mutable_data()) v = dist(rng);
}

std::uint64_t hash_tensors(const std::vector<NamedTensor>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& t : tensors) {
    mix(t.name.data(), t.name.size());
    auto d = t.value.data();
    mix(d.data(), d.size() * sizeof(double));
  }
  return h;
}

// ---------------------------------------------------------------------------

ClassifierNet::ClassifierNet(ClassifierConfig config) : config_(std::move(config)) {
  if (config_.channels.empty()) throw std::invalid_argument("classifier needs at least one stage");
  if (config_.num_classes < 2) throw std::invalid_argument("classifier needs at least two classes");
  const int n = static_cast<int>(config_.channels.size());
  cam_layer_ = config_.cam_layer_index < 0 ? n - 1 : config_.cam_layer_index;
  if (cam_layer_ >= n) {
    throw std::invalid_argument("cam_layer_index " + std::to_string(config_.cam_layer_index) + " is not a stage of a " +
                                std::to_string(n) + "-stage classifier");
  }
  int in = config_.in_channels;
  for (int out : config_.channels) {
    stages_.push_back({parameter({out, in, 3, 3}), parameter({out})});
    in = out;
  }
  head_weight_ = parameter({config_.num_classes, in});
  head_bias_ = parameter({config_.num_classes});
}

void ClassifierNet::check_input(const Shape& s) const {
  const auto divisor = std::int64_t{1} << stages_.size();
  if (s.size() != 4 || s[1] != config_.in_channels || s[2] % divisor != 0 || s[3] % divisor != 0) {
    throw std::invalid_argument("classifier: input " + shape_str(s) + " incompatible with " +
                                std::to_string(config_.in_channels) + " channels and " +
                                std::to_string(stages_.size()) + " pooling stages");
  }
}

Tensor ClassifierNet::run_stage(std::size_t index, const Tensor& x, bool pool) const {
  const auto& stage = stages_[index];
  Tensor h = relu(conv2d(x, stage.weight, stage.bias, {1, 1}));
  return pool ? avg_pool2x2(h) : h;
}

Tensor ClassifierNet::features(const Tensor& x) const {
  check_input(x.shape());
  Tensor h = x;
  for (int i = 0; i < cam_layer_; ++i) h = run_stage(static_cast<std::size_t>(i), h, true);
  return run_stage(static_cast<std::size_t>(cam_layer_), h, false);
}

Tensor ClassifierNet::logits_from_features(const Tensor& activation) const {
  Tensor h = avg_pool2x2(activation);
  for (std::size_t i = static_cast<std::size_t>(cam_layer_) + 1; i < stages_.size(); ++i) h = run_stage(i, h, true);
  Tensor pooled = mean(h, {2, 3});
  return linear(pooled, head_weight_, head_bias_);
}

ClassifierOutput ClassifierNet::forward(const Tensor& x) const {
  Tensor activation = features(x);
  Tensor logits = logits_from_features(activation);
  Tensor probs = softmax_rows(logits);
  return {logits, probs, activation};
}

void ClassifierNet::init_params(std::uint64_t seed) {
  std::uint64_t stream = splitmix64(seed);
  for (auto& stage : stages_) {
    const auto& s = stage.weight.shape();
    init_uniform_fan_in(stage.weight, s[1] * s[2] * s[3], stream = splitmix64(stream));
    std::fill(stage.bias.mutable_data().begin(), stage.bias.mutable_data().end(), 0.0);
  }
  init_uniform_fan_in(head_weight_, head_weight_.dim(1), splitmix64(stream));
  std::fill(head_bias_.mutable_data().begin(), head_bias_.mutable_data().end(), 0.0);
}

std::vector<NamedTensor> ClassifierNet::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    out.push_back({"stage" + std::to_string(i) + ".weight", stages_[i].weight});
    out.push_back({"stage" + std::to_string(i) + ".bias", stages_[i].bias});
  }
  out.push_back({"head.weight", head_weight_});
  out.push_back({"head.bias", head_bias_});
  return out;
}

StateDict ClassifierNet::state_dict() const { return deep_copy(parameters()); }

void ClassifierNet::load_state(const StateDict& state) { load_into(state, parameters(), "classifier"); }

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels, double momentum, double epsilon)
    : channels_(channels),
      momentum_(momentum),
      epsilon_(epsilon),
      scale_(Tensor::ones({channels})),
      shift_(Tensor::zeros({channels})),
      running_mean_(Tensor::zeros({channels})),
      running_var_(Tensor::ones({channels})) {
  scale_.set_requires_grad(true);
  shift_.set_requires_grad(true);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool update_running) {
  if (x.rank() != 4 || x.dim(1) != channels_) {
    throw std::invalid_argument("batch norm over " + std::to_string(channels_) + " channels got " +
                                shape_str(x.shape()));
  }
  const Shape channel_shape{1, channels_, 1, 1};
  auto expand = [&](const Tensor& t) { return broadcast_to(reshape(t, channel_shape), x.shape()); };

  Tensor normalized;
  if (training_) {
    Tensor mu = mean(x, {0, 2, 3}, true);
    Tensor centered = sub(x, broadcast_to(mu, x.shape()));
    Tensor var = mean(square(centered), {0, 2, 3}, true);
    normalized = div(centered, broadcast_to(sqrt(add_scalar(var, epsilon_)), x.shape()));
    if (update_running) {
      const double count = static_cast<double>(x.dim(0) * x.dim(2) * x.dim(3));
      const double unbias = count > 1 ? count / (count - 1) : 1.0;
      auto rm = running_mean_.mutable_data();
      auto rv = running_var_.mutable_data();
      for (int c = 0; c < channels_; ++c) {
        rm[c] = (1 - momentum_) * rm[c] + momentum_ * mu.data()[c];
        rv[c] = (1 - momentum_) * rv[c] + momentum_ * var.data()[c] * unbias;
      }
    }
  } else {
    std::vector<double> inv_std(static_cast<std::size_t>(channels_));
    for (int c = 0; c < channels_; ++c) inv_std[c] = 1.0 / std::sqrt(running_var_.data()[c] + epsilon_);
    Tensor centered = sub(x, expand(running_mean_.detach()));
    normalized = mul(centered, expand(make_tensor({channels_}, std::move(inv_std))));
  }
  return add(mul(normalized, expand(scale_)), expand(shift_));
}

std::vector<NamedTensor> BatchNorm2d::parameters(const std::string& prefix) const {
  return {{prefix + ".scale", scale_}, {prefix + ".shift", shift_}};
}

std::vector<NamedTensor> BatchNorm2d::buffers(const std::string& prefix) const {
  return {{prefix + ".running_mean", running_mean_}, {prefix + ".running_var", running_var_}};
}

// ---------------------------------------------------------------------------

MaskerNet::MaskerNet(MaskerConfig config)
    : config_(config),
      w1_(parameter({config.hidden_channels, config.in_channels, 3, 3})),
      b1_(parameter({config.hidden_channels})),
      w2_(parameter({config.hidden_channels, config.hidden_channels, 3, 3})),
      b2_(parameter({config.hidden_channels})),
      w3_(parameter({1, config.hidden_channels, 1, 1})),
      b3_(parameter({1})),
      bn1_(config.hidden_channels),
      bn2_(config.hidden_channels) {}

Tensor MaskerNet::forward(const Tensor& x, bool update_running) {
  if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
    throw std::invalid_argument("masker: input " + shape_str(x.shape()) + " does not have " +
                                std::to_string(config_.in_channels) + " channels");
  }
  Tensor h = bn1_.forward(relu(conv2d(x, w1_, b1_, {1, 1})), update_running);
  h = bn2_.forward(relu(conv2d(h, w2_, b2_, {1, 1})), update_running);
  return sigmoid(conv2d(h, w3_, b3_, {1, 0}));
}

void MaskerNet::set_training(bool training) {
  bn1_.set_training(training);
  bn2_.set_training(training);
}

void MaskerNet::init_params(std::uint64_t seed) {
  std::uint64_t stream = splitmix64(seed ^ 0x6d61736b6572ULL);
  for (Tensor* w : {&w1_, &w2_, &w3_}) {
    const auto& s = w->shape();
    init_uniform_fan_in(*w, s[1] * s[2] * s[3], stream = splitmix64(stream));
  }
  for (Tensor* b : {&b1_, &b2_, &b3_}) std::fill(b->mutable_data().begin(), b->mutable_data().end(), 0.0);
}

std::vector<NamedTensor> MaskerNet::parameters() const {
  std::vector<NamedTensor> out{{"conv1.weight", w1_}, {"conv1.bias", b1_}};
  for (auto& p : bn1_.parameters("bn1")) out.push_back(p);
  out.push_back({"conv2.weight", w2_});
  out.push_back({"conv2.bias", b2_});
  for (auto& p : bn2_.parameters("bn2")) out.push_back(p);
  out.push_back({"conv3.weight", w3_});
  out.push_back({"conv3.bias", b3_});
  return out;
}

std::vector<NamedTensor> MaskerNet::buffers() const {
  auto out = bn1_.buffers("bn1");
  for (auto& b : bn2_.buffers("bn2")) out.push_back(b);
  return out;
}

StateDict MaskerNet::state_dict() const {
  auto all = parameters();
  for (auto& b : buffers()) all.push_back(b);
  return deep_copy(all);
}

void MaskerNet::load_state(const StateDict& state) {
  auto all = parameters();
  for (auto& b : buffers()) all.push_back(b);
  load_into(state, all, "masker");
}

// ---------------------------------------------------------------------------

FreezeGuard::FreezeGuard(std::vector<NamedTensor> params) : params_(std::move(params)) {
  for (auto& p : params_) {
    previous_.push_back(p.value.requires_grad());
    p.value.set_requires_grad(false);
  }
}

FreezeGuard::~FreezeGuard() {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value.set_requires_grad(previous_[i]);
}

}  // namespace align
