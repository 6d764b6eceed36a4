#include "align/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace align::theory {

void LemmaReport::add_slack(double slack) {
  if (slack_count_ == 0) {
    min_slack = max_slack = slack;
  } else {
    min_slack = std::min(min_slack, slack);
    max_slack = std::max(max_slack, slack);
  }
  slack_sum_ += slack;
  ++slack_count_;
}

void LemmaReport::finish() { mean_slack = slack_count_ > 0 ? slack_sum_ / slack_count_ : 0.0; }

namespace {

nlohmann::json report_value(const LemmaReport& r) {
  return {{"lemma", r.lemma},         {"trials", r.trials},         {"violations", r.violations},
          {"vacuous", r.vacuous},     {"min_slack", r.min_slack},   {"mean_slack", r.mean_slack},
          {"max_slack", r.max_slack}, {"passed", r.passed()},       {"notes", r.notes}};
}

std::vector<double> dirichlet(int n, Rng& rng) {
  std::gamma_distribution<double> gamma(1.0, 1.0);
  std::vector<double> v(n);
  double total = 0;
  for (auto& e : v) {
    e = gamma(rng) + 1e-6;
    total += e;
  }
  for (auto& e : v) e /= total;
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

void check_normalized(std::span<const double> p, const std::string& what) {
  double total = 0;
  for (double v : p) {
    if (!(v >= 0)) throw std::invalid_argument(what + " has a negative or non-finite entry");
    total += v;
  }
  if (std::abs(total - 1.0) > kExactTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << what << " sums to " << total << ", not 1";
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

std::string LemmaReport::to_json(int indent) const { return report_value(*this).dump(indent); }

// ---------------------------------------------------------------- sensitivity

void LinearPairModels::validate() const {
  if (dim < 2) throw std::invalid_argument("LinearPairModels: dim must be at least 2");
  const auto n = static_cast<std::size_t>(dim);
  if (w1.size() != n || w2.size() != n || w3.size() != n) throw std::invalid_argument("LinearPairModels: weight size");
  std::vector<int> role(n, -1);
  for (int i : obj) role.at(i) = 0;
  for (int i : bg) {
    if (role.at(i) == 0) throw std::invalid_argument("LinearPairModels: OBJ and BG overlap");
    role.at(i) = 1;
  }
  if (obj.size() + bg.size() != n) throw std::invalid_argument("LinearPairModels: OBJ and BG must cover all coordinates");
  for (int i : sub) {
    if (role.at(i) != 0) throw std::invalid_argument("LinearPairModels: SUB must lie inside OBJ");
  }
  if (sub.size() >= obj.size()) throw std::invalid_argument("LinearPairModels: SUB must be a strict subset of OBJ");
  for (int i : bg) {
    if (w2[i] != 0 || w3[i] != 0) throw std::invalid_argument("LinearPairModels: w2/w3 touch BG");
  }
  for (int i : obj) {
    if (w3[i] != 0 && std::find(sub.begin(), sub.end(), i) == sub.end()) {
      throw std::invalid_argument("LinearPairModels: w3 leaves SUB");
    }
  }
}

double LinearPairModels::evaluate(std::span<const double> w, std::span<const double> x) const {
  return std::tanh(scale * dot(w, x));
}

bool LinearPairModels::w1_touches_bg() const {
  return std::any_of(bg.begin(), bg.end(), [&](int i) { return w1[i] != 0; });
}

LinearPairModels random_linear_models(int dim, Rng& rng) {
  if (dim < 4) throw std::invalid_argument("random_linear_models: dim must be at least 4");
  std::normal_distribution<double> n01(0.0, 1.0);
  LinearPairModels m;
  m.dim = dim;
  const int n_obj = dim / 2;
  const int n_sub = std::max(1, n_obj / 2);
  for (int i = 0; i < dim; ++i) (i < n_obj ? m.obj : m.bg).push_back(i);
  for (int i = 0; i < n_sub; ++i) m.sub.push_back(i);
  m.w1.resize(dim);
  m.w2.assign(dim, 0.0);
  m.w3.assign(dim, 0.0);
  for (int i = 0; i < dim; ++i) m.w1[i] = n01(rng);
  for (int i : m.obj) m.w2[i] = n01(rng);
  for (int i : m.sub) m.w3[i] = n01(rng);
  m.scale = 1.0 / std::sqrt(static_cast<double>(dim));
  m.validate();
  return m;
}

SensitivityPair sensitivity_pair(const LinearPairModels& m, std::span<const double> xs, std::span<const double> xt) {
  double dist2 = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) dist2 += (xt[i] - xs[i]) * (xt[i] - xs[i]);
  const double dist = std::sqrt(dist2);
  if (dist == 0) throw std::invalid_argument("sensitivity_pair: identical inputs");
  SensitivityPair p;
  p.df1 = std::abs(m.evaluate(m.w1, xt) - m.evaluate(m.w1, xs));
  p.df2 = std::abs(m.evaluate(m.w2, xt) - m.evaluate(m.w2, xs));
  p.df3 = std::abs(m.evaluate(m.w3, xt) - m.evaluate(m.w3, xs));
  p.kappa1 = p.df1 / dist;
  p.kappa2 = p.df2 / dist;
  p.kappa3 = p.df3 / dist;
  return p;
}

LemmaReport check_lemma1(const LinearPairModels& models, int trials, Rng& rng) {
  models.validate();
  if (trials < 1) throw std::invalid_argument("check_lemma1: trials must be at least 1");
  LemmaReport r;
  r.lemma = "sensitivity";
  r.trials = trials;
  const bool sensitive = models.w1_touches_bg();
  if (!sensitive) r.notes.push_back("w1 has no background weight: strict inequality not asserted");
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> xs(models.dim);
  std::vector<double> xt(models.dim);
  for (int t = 0; t < trials; ++t) {
    for (auto& v : xs) v = n01(rng);
    xt = xs;
    bool moved = false;
    while (!moved) {
      for (int i : models.bg) {
        xt[i] = n01(rng);
        moved = moved || xt[i] != xs[i];
      }
    }
    const auto p = sensitivity_pair(models, xs, xt);
    if (!sensitive || p.df1 == 0) {
      ++r.vacuous;
      if (p.df2 > p.df1 || p.kappa2 > p.kappa1) ++r.violations;
      continue;
    }
    const double slack = std::min({p.df1 - p.df2, p.df1 - p.df3, p.kappa1 - p.kappa2, p.kappa1 - p.kappa3});
    r.add_slack(slack);
    if (!(p.df2 < p.df1 && p.kappa2 < p.kappa1 && p.df3 < p.df1 && p.kappa3 < p.kappa1)) ++r.violations;
  }
  r.finish();
  return r;
}

// ---------------------------------------------------------------- toy tables

void ToyDistribution::validate() const {
  if (n_sub < 1 || n_extra < 1 || n_bg < 1 || y_values.empty()) throw std::invalid_argument("ToyDistribution: empty support");
  for (double y : y_values) {
    if (!(std::abs(y) <= 1)) throw std::invalid_argument("ToyDistribution: |y| must be at most 1");
  }
  const auto joint = static_cast<std::size_t>(n_obj() * n_bg);
  if (source.size() != joint || target.size() != joint ||
      cond.size() != static_cast<std::size_t>(n_obj() * n_y())) {
    throw std::invalid_argument("ToyDistribution: table sizes do not match the supports");
  }
  check_normalized(source, "source table");
  check_normalized(target, "target table");
  for (int o = 0; o < n_obj(); ++o) {
    check_normalized(std::span<const double>(cond).subspan(o * n_y(), n_y()),
                     "P(y | x_obj = " + std::to_string(o) + ")");
  }
}

ToyDistribution random_toy_distribution(const ToyShape& shape, Rng& rng, bool y_from_sub_only) {
  ToyDistribution d;
  d.n_sub = shape.n_sub;
  d.n_extra = shape.n_extra;
  d.n_bg = shape.n_bg;
  if (shape.n_y == 2) {
    d.y_values = {-1.0, 1.0};
  } else {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < shape.n_y; ++k) d.y_values.push_back(u(rng));
  }
  std::vector<std::vector<double>> per_sub;
  for (int s = 0; s < d.n_sub; ++s) per_sub.push_back(dirichlet(shape.n_y, rng));
  for (int o = 0; o < d.n_obj(); ++o) {
    const auto row = y_from_sub_only ? per_sub[o / d.n_extra] : dirichlet(shape.n_y, rng);
    d.cond.insert(d.cond.end(), row.begin(), row.end());
  }
  d.source = dirichlet(d.n_obj() * d.n_bg, rng);
  d.target = dirichlet(d.n_obj() * d.n_bg, rng);
  d.validate();
  return d;
}

// --------------------------------------------------------- MSE discrepancy

MseDiscrepancy mse_discrepancy(const ToyDistribution& d, const PredictorTable& f) {
  d.validate();
  if (f.size() != d.source.size()) throw std::invalid_argument("mse_discrepancy: predictor table size");
  for (double v : f) {
    if (!(std::abs(v) <= 1)) throw std::invalid_argument("mse_discrepancy: |f| must be at most 1");
  }
  struct Moments {
    double mse = 0, mean_f = 0, y2 = 0;
  };
  auto moments = [&](const std::vector<double>& joint) {
    Moments m;
    for (int o = 0; o < d.n_obj(); ++o) {
      for (int b = 0; b < d.n_bg; ++b) {
        const double p = joint[o * d.n_bg + b];
        const double fx = f[o * d.n_bg + b];
        m.mean_f += p * fx;
        for (int k = 0; k < d.n_y(); ++k) {
          const double py = p * d.cond[o * d.n_y() + k];
          const double y = d.y_values[k];
          m.mse += py * (fx - y) * (fx - y);
          m.y2 += py * y * y;
        }
      }
    }
    return m;
  };
  const Moments s = moments(d.source);
  const Moments t = moments(d.target);
  MseDiscrepancy out;
  out.delta_mse = std::abs(t.mse - s.mse);
  out.mean_shift = std::abs(t.mean_f - s.mean_f);
  out.second_moment_shift = std::abs(t.y2 - s.y2);
  out.bound = 4 * out.mean_shift + out.second_moment_shift;
  return out;
}

namespace {

void lemma2_trial(LemmaReport& r, const ToyDistribution& d, const PredictorTable& f) {
  const auto q = mse_discrepancy(d, f);
  r.add_slack(q.bound - q.delta_mse);
  bool violated = q.delta_mse > q.bound + kExactTolerance;
  if (q.second_moment_shift == 0 && q.delta_mse > 4 * q.mean_shift + kExactTolerance) violated = true;
  if (violated) {
    ++r.violations;
    if (r.violations <= 3) {
      std::ostringstream os;
      os.precision(6);
      os << "trial " << r.trials << ": delta_mse " << q.delta_mse << " exceeds bound " << q.bound
         << " (mean shift " << q.mean_shift << ")";
      r.notes.push_back(os.str());
    }
  }
  ++r.trials;
}

}  // namespace

LemmaReport check_lemma2(const ToyDistribution& dist, const PredictorTable& f) {
  LemmaReport r;
  r.lemma = "mse_discrepancy";
  lemma2_trial(r, dist, f);
  r.finish();
  return r;
}

LemmaReport check_lemma2_random(int trials, Rng& rng, const ToyShape& shape) {
  if (trials < 1) throw std::invalid_argument("check_lemma2_random: trials must be at least 1");
  LemmaReport r;
  r.lemma = "mse_discrepancy";
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < trials; ++t) {
    const auto d = random_toy_distribution(shape, rng);
    PredictorTable f(d.source.size());
    for (auto& v : f) v = u(rng);
    lemma2_trial(r, d, f);
  }
  r.finish();
  return r;
}

// ---------------------------------------------------------- CE stability

CeDiscrepancy ce_discrepancy(const PairedPredictions& p) {
  const auto n = p.weights.size();
  if (n == 0 || p.labels.size() != n || p.source_probs.size() != n || p.target_probs.size() != n) {
    throw std::invalid_argument("ce_discrepancy: inconsistent pair counts");
  }
  check_normalized(p.weights, "pair weights");
  if (!(p.epsilon >= 0)) throw std::invalid_argument("ce_discrepancy: epsilon must be non-negative");
  CeDiscrepancy out;
  out.p_min = std::numeric_limits<double>::infinity();
  double ce_s = 0;
  double ce_t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& fs = p.source_probs[i];
    const auto& ft = p.target_probs[i];
    if (fs.size() != ft.size() || p.labels[i] < 0 || static_cast<std::size_t>(p.labels[i]) >= fs.size()) {
      throw std::invalid_argument("ce_discrepancy: pair " + std::to_string(i) + " is malformed");
    }
    for (std::size_t k = 0; k < fs.size(); ++k) out.p_min = std::min({out.p_min, fs[k], ft[k]});
    const double a = fs[p.labels[i]];
    const double b = ft[p.labels[i]];
    if (std::abs(a - b) > p.epsilon + kExactTolerance) {
      throw std::invalid_argument("ce_discrepancy: pair " + std::to_string(i) + " moves by more than epsilon");
    }
    ce_s -= p.weights[i] * std::log(a);
    ce_t -= p.weights[i] * std::log(b);
  }
  if (!(out.p_min > 0)) throw std::invalid_argument("ce_discrepancy: minimum probability must be positive");
  out.delta_ce = std::abs(ce_t - ce_s);
  out.constant = 1.0 / out.p_min;
  out.bound = out.constant * p.epsilon;
  return out;
}

namespace {

void lemma3_trial(LemmaReport& r, const PairedPredictions& pairs) {
  const auto q = ce_discrepancy(pairs);
  r.add_slack(q.bound - q.delta_ce);
  if (q.delta_ce > q.bound + kExactTolerance) ++r.violations;
  ++r.trials;
}

}  // namespace

LemmaReport check_lemma3(const PairedPredictions& pairs) {
  LemmaReport r;
  r.lemma = "ce_stability";
  lemma3_trial(r, pairs);
  r.finish();
  return r;
}

LemmaReport check_lemma3_random(int trials, Rng& rng) {
  if (trials < 1) throw std::invalid_argument("check_lemma3_random: trials must be at least 1");
  LemmaReport r;
  r.lemma = "ce_stability";
  std::uniform_int_distribution<int> n_points(1, 6);
  std::uniform_int_distribution<int> n_classes(2, 5);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int t = 0; t < trials; ++t) {
    PairedPredictions p;
    const int n = n_points(rng);
    const int k = n_classes(rng);
    const double floor = 0.02 + 0.1 * u01(rng) / k;
    const double shift = 0.5 * u01(rng);
    p.weights = dirichlet(n, rng);
    std::uniform_int_distribution<int> label(0, k - 1);
    double eps = 0;
    for (int i = 0; i < n; ++i) {
      // Probabilities floor + (1 - k floor) * Dirichlet stay above the floor;
      // the target mixes the source with another such vector.
      auto make = [&] {
        auto v = dirichlet(k, rng);
        for (auto& e : v) e = floor + (1 - k * floor) * e;
        return v;
      };
      auto fs = make();
      auto other = make();
      std::vector<double> ft(k);
      for (int c = 0; c < k; ++c) ft[c] = (1 - shift) * fs[c] + shift * other[c];
      p.labels.push_back(label(rng));
      eps = std::max(eps, std::abs(ft[p.labels.back()] - fs[p.labels.back()]));
      p.source_probs.push_back(std::move(fs));
      p.target_probs.push_back(std::move(ft));
    }
    p.epsilon = eps;
    lemma3_trial(r, p);
  }
  r.finish();
  return r;
}

// ---------------------------------------------------- feature inclusion

FeatureInclusion feature_inclusion(const ToyDistribution& d) {
  d.validate();
  const int n_y = d.n_y();
  std::vector<double> p_obj(d.n_obj(), 0.0);
  for (int o = 0; o < d.n_obj(); ++o) {
    for (int b = 0; b < d.n_bg; ++b) p_obj[o] += d.source[o * d.n_bg + b];
  }
  std::vector<double> p_sub(d.n_sub, 0.0);
  for (int o = 0; o < d.n_obj(); ++o) p_sub[o / d.n_extra] += p_obj[o];
  for (int s = 0; s < d.n_sub; ++s) {
    if (!(p_sub[s] > 0)) throw std::invalid_argument("feature_inclusion: x_sub = " + std::to_string(s) + " has no mass");
  }

  // P(y | sub) = sum_extra P(obj) P(y | obj) / P(sub)
  std::vector<double> cond_sub(d.n_sub * n_y, 0.0);
  for (int o = 0; o < d.n_obj(); ++o) {
    for (int k = 0; k < n_y; ++k) cond_sub[(o / d.n_extra) * n_y + k] += p_obj[o] * d.cond[o * n_y + k];
  }
  for (int s = 0; s < d.n_sub; ++s) {
    for (int k = 0; k < n_y; ++k) cond_sub[s * n_y + k] /= p_sub[s];
  }

  auto mean_var = [&](std::span<const double> row) {
    double m = 0, m2 = 0;
    for (int k = 0; k < n_y; ++k) {
      m += row[k] * d.y_values[k];
      m2 += row[k] * d.y_values[k] * d.y_values[k];
    }
    return std::pair{m, std::max(0.0, m2 - m * m)};
  };
  auto entropy = [&](std::span<const double> row) {
    double h = 0;
    for (int k = 0; k < n_y; ++k) {
      if (row[k] > 0) h -= row[k] * std::log(row[k]);
    }
    return h;
  };

  FeatureInclusion out;
  std::vector<double> mean_obj(d.n_obj());
  for (int o = 0; o < d.n_obj(); ++o) {
    auto row = std::span<const double>(d.cond).subspan(o * n_y, n_y);
    auto [m, v] = mean_var(row);
    mean_obj[o] = m;
    out.mse_obj += p_obj[o] * v;
    out.ce_obj += p_obj[o] * entropy(row);
  }
  double between = 0;
  for (int s = 0; s < d.n_sub; ++s) {
    auto row = std::span<const double>(cond_sub).subspan(s * n_y, n_y);
    auto [m, v] = mean_var(row);
    out.mse_sub += p_sub[s] * v;
    out.ce_sub += p_sub[s] * entropy(row);
    // Var(E[y|obj] | sub)
    double var = 0;
    for (int e = 0; e < d.n_extra; ++e) {
      const int o = s * d.n_extra + e;
      var += p_obj[o] / p_sub[s] * (mean_obj[o] - m) * (mean_obj[o] - m);
    }
    between += p_sub[s] * var;
  }
  out.total_variance_residual = out.mse_sub - out.mse_obj - between;

  // I(y ; extra | sub) = sum P(obj, y) log(P(y | obj) / P(y | sub))
  bool dependent = false;
  for (int o = 0; o < d.n_obj(); ++o) {
    const int s = o / d.n_extra;
    for (int k = 0; k < n_y; ++k) {
      const double a = d.cond[o * n_y + k];
      const double b = cond_sub[s * n_y + k];
      if (p_obj[o] > 0 && std::abs(a - b) > kExactTolerance) dependent = true;
      if (a > 0) out.cmi += p_obj[o] * a * std::log(a / b);
    }
  }
  out.dependent = dependent;
  return out;
}

namespace {

void lemma4_trial(LemmaReport& r, const ToyDistribution& d) {
  const auto q = feature_inclusion(d);
  const double mse_gap = q.mse_sub - q.mse_obj;
  const double ce_gap = q.ce_sub - q.ce_obj;
  r.add_slack(std::min(mse_gap, ce_gap));
  bool violated = mse_gap < -kExactTolerance || ce_gap < -kExactTolerance;
  if (std::abs(q.total_variance_residual) > kExactTolerance) {
    violated = true;
    r.notes.push_back("total variance identity off by " + std::to_string(q.total_variance_residual) + " in trial " +
                      std::to_string(r.trials));
  }
  const bool strict = mse_gap > kStrictMargin && ce_gap > kStrictMargin;
  if (q.dependent && !strict) violated = true;
  if (!q.dependent) {
    ++r.vacuous;
    if (std::abs(mse_gap) > kExactTolerance || std::abs(ce_gap) > kExactTolerance) violated = true;
  }
  if (violated) ++r.violations;
  ++r.trials;
}

}  // namespace

LemmaReport check_lemma4(const ToyDistribution& dist) {
  LemmaReport r;
  r.lemma = "feature_inclusion";
  lemma4_trial(r, dist);
  r.finish();
  return r;
}

LemmaReport check_lemma4_random(int trials, Rng& rng, const ToyShape& shape) {
  if (trials < 1) throw std::invalid_argument("check_lemma4_random: trials must be at least 1");
  LemmaReport r;
  r.lemma = "feature_inclusion";
  for (int t = 0; t < trials; ++t) lemma4_trial(r, random_toy_distribution(shape, rng, t % 2 == 1));
  r.finish();
  return r;
}

bool TheoryReport::passed() const {
  return lemma1.passed() && lemma2.passed() && lemma3.passed() && lemma4.passed();
}

std::string TheoryReport::to_json(int indent) const {
  nlohmann::json j;
  j["passed"] = passed();
  j["lemmas"] = nlohmann::json::array(
      {report_value(lemma1), report_value(lemma2), report_value(lemma3), report_value(lemma4)});
  return j.dump(indent);
}

TheoryReport run_all_checks(int trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("run_all_checks: trials must be at least 1");
  TheoryReport out;
  {
    Rng rng(seed);
    // A fresh model per trial, one input pair each.
    LemmaReport agg;
    agg.lemma = "sensitivity";
    for (int t = 0; t < trials; ++t) {
      const auto models = random_linear_models(10, rng);
      const auto r = check_lemma1(models, 1, rng);
      agg.trials += r.trials;
      agg.violations += r.violations;
      agg.vacuous += r.vacuous;
      if (r.vacuous == 0) agg.add_slack(r.min_slack);
    }
    agg.finish();
    out.lemma1 = agg;
  }
  {
    Rng rng(seed + 1);
    out.lemma2 = check_lemma2_random(trials, rng);
  }
  {
    Rng rng(seed + 2);
    out.lemma3 = check_lemma3_random(trials, rng);
  }
  {
    Rng rng(seed + 3);
    out.lemma4 = check_lemma4_random(trials, rng);
  }
  return out;
}

}  // namespace align::theory
