#include "align/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace align {

void optimizer_update(std::span<double> params, std::span<const double> grads, double lr, AdamMoments& moments,
                      const AdamConfig& config) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("optimizer_update: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  }
  if (moments.first.empty() && moments.second.empty()) {
    moments.first.assign(params.size(), 0.0);
    moments.second.assign(params.size(), 0.0);
  }
  if (moments.first.size() != params.size() || moments.second.size() != params.size()) {
    throw std::invalid_argument("optimizer_update: moment buffers do not match parameter count");
  }
  ++moments.step;
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(moments.step));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(moments.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = moments.first[i];
    double& v = moments.second[i];
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

Adam::Adam(std::vector<NamedTensor> params, double lr, AdamConfig config)
    : params_(std::move(params)), moments_(params_.size()), lr_(lr), config_(config) {}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].value;
    if (!p.has_grad()) continue;
    optimizer_update(p.mutable_data(), p.grad_data(), lr_, moments_[i], config_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.value.clear_grad();
}

}  // namespace align
