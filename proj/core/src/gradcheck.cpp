#include "align/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "align/autograd.hpp"

namespace align {

namespace {

double eval_at(const ScalarFn& fn, const Tensor& x) {
  NoGradGuard no_grad;
  Tensor y = fn(x);
  if (y.numel() != 1) throw std::invalid_argument("finite_difference_check: function is not scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) throw std::domain_error("finite_difference_check: non-finite function value");
  return v;
}

}  // namespace

double finite_difference_check(const ScalarFn& fn, const Tensor& x, double step) {
  if (!(step > 0.0 && step <= 1e-2)) throw std::invalid_argument("finite_difference_check: step must be in (0, 1e-2]");

  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  Tensor y = fn(probe);
  if (y.numel() != 1) throw std::invalid_argument("finite_difference_check: function is not scalar-valued");
  if (!std::isfinite(y.item())) throw std::domain_error("finite_difference_check: non-finite function value");

  std::vector<double> analytic(static_cast<std::size_t>(probe.numel()), 0.0);
  if (y.requires_grad()) {
    backward(y);
    if (probe.has_grad()) {
      auto g = probe.grad_data();
      analytic.assign(g.begin(), g.end());
    }
  }
  for (double a : analytic)
    if (!std::isfinite(a)) throw std::domain_error("finite_difference_check: non-finite analytic gradient");

  double worst = 0.0;
  Tensor point = x.detach();
  auto values = point.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + step;
    const double up = eval_at(fn, point);
    values[i] = original - step;
    const double down = eval_at(fn, point);
    values[i] = original;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace align
