#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "align/models.hpp"

namespace align {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of `params` in place.
void optimizer_update(std::span<double> params, std::span<const double> grads, double lr, AdamMoments& moments,
                      const AdamConfig& config = {});

/// Adam over a fixed parameter list. Parameters without a gradient are
/// skipped, leaving their moments untouched.
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, double lr, AdamConfig config = {});

  void step();
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<AdamMoments>& moments() const { return moments_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<AdamMoments> moments_;
  double lr_;
  AdamConfig config_;
};

}  // namespace align
