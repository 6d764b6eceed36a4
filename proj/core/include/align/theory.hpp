#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

// Exact numerical checks of the generalization lemmas on small enumerable
// constructions. Every expectation is a finite sum; nothing is sampled
// except the constructions themselves.
namespace align::theory {

using Rng = std::mt19937_64;

constexpr double kExactTolerance = 1e-12;
constexpr double kStrictMargin = 1e-9;

struct LemmaReport {
  std::string lemma;
  int trials = 0;
  int violations = 0;
  int vacuous = 0;  ///< trials where the claim has nothing to assert
  double min_slack = 0.0;
  double mean_slack = 0.0;
  double max_slack = 0.0;
  std::vector<std::string> notes;

  bool passed() const { return violations == 0; }
  void add_slack(double slack);
  void finish();
  std::string to_json(int indent = 2) const;

 private:
  double slack_sum_ = 0.0;
  int slack_count_ = 0;
};

// ---------------------------------------------------------------- sensitivity

/// f_k(x) = tanh(scale * w_k . x) for three weight vectors: w1 anywhere,
/// w2 supported on the object coordinates, w3 on a strict subset of them.
struct LinearPairModels {
  int dim = 0;
  std::vector<int> obj;
  std::vector<int> bg;
  std::vector<int> sub;
  std::vector<double> w1;
  std::vector<double> w2;
  std::vector<double> w3;
  double scale = 1.0;

  void validate() const;
  double evaluate(std::span<const double> w, std::span<const double> x) const;
  bool w1_touches_bg() const;
};

/// Random models of dimension `dim`: the first half of the coordinates are
/// object features, the first quarter the object subset.
LinearPairModels random_linear_models(int dim, Rng& rng);

struct SensitivityPair {
  double df1 = 0, df2 = 0, df3 = 0;
  double kappa1 = 0, kappa2 = 0, kappa3 = 0;
};

/// |f_k(x_t) - f_k(x_s)| and the local Lipschitz ratios for one input pair.
SensitivityPair sensitivity_pair(const LinearPairModels& models, std::span<const double> xs,
                                 std::span<const double> xt);

/// Draws `trials` input pairs sharing their object coordinates and checks
/// that the object-only models move strictly less than f1. Trials where f1
/// has no background weight, or does not move, are counted as vacuous.
LemmaReport check_lemma1(const LinearPairModels& models, int trials, Rng& rng);

// ---------------------------------------------------------------- toy tables

/// Finite joint distribution over (x_obj, x_bg, y) in a source and a target
/// domain, where x_obj = (x_sub, x_extra) and P(y | x_obj) is shared.
/// Tables are row-major: joint[obj * n_bg + bg], cond[obj * n_y + k] with
/// obj = sub * n_extra + extra.
struct ToyDistribution {
  int n_sub = 1;
  int n_extra = 1;
  int n_bg = 1;
  std::vector<double> y_values;
  std::vector<double> cond;
  std::vector<double> source;
  std::vector<double> target;

  int n_obj() const { return n_sub * n_extra; }
  int n_y() const { return static_cast<int>(y_values.size()); }
  /// Checks shapes, normalization (1e-12) and |y| <= 1.
  void validate() const;
};

struct ToyShape {
  int n_sub = 2;
  int n_extra = 2;
  int n_bg = 3;
  int n_y = 2;
};

/// Dirichlet(1) tables. With `y_from_sub_only`, P(y | x_obj) depends on
/// x_sub alone.
ToyDistribution random_toy_distribution(const ToyShape& shape, Rng& rng, bool y_from_sub_only = false);

// --------------------------------------------------------- MSE discrepancy

/// Predictor values f[obj * n_bg + bg].
using PredictorTable = std::vector<double>;

struct MseDiscrepancy {
  double delta_mse = 0;
  double bound = 0;  ///< 4 |E_T f - E_S f| + |E_T y^2 - E_S y^2|
  double mean_shift = 0;
  double second_moment_shift = 0;
};

MseDiscrepancy mse_discrepancy(const ToyDistribution& dist, const PredictorTable& f);
/// One construction. Rejects |f| > 1 or |y| > 1.
LemmaReport check_lemma2(const ToyDistribution& dist, const PredictorTable& f);
/// `trials` random constructions with random predictors in [-1,1].
LemmaReport check_lemma2_random(int trials, Rng& rng, const ToyShape& shape = {2, 2, 3, 3});

// ---------------------------------------------------------- CE stability

/// Weighted paired points: the i-th source and target inputs share label
/// y_i and weight w_i; probs are per-class predicted distributions.
struct PairedPredictions {
  std::vector<double> weights;
  std::vector<int> labels;
  std::vector<std::vector<double>> source_probs;
  std::vector<std::vector<double>> target_probs;
  double epsilon = 0;
};

struct CeDiscrepancy {
  double delta_ce = 0;
  double p_min = 0;
  double constant = 0;  ///< 1 / p_min
  double bound = 0;     ///< constant * epsilon
};

/// Rejects p_min = 0 and pairs whose label probabilities differ by more
/// than epsilon.
CeDiscrepancy ce_discrepancy(const PairedPredictions& pairs);
LemmaReport check_lemma3(const PairedPredictions& pairs);
LemmaReport check_lemma3_random(int trials, Rng& rng);

// ---------------------------------------------------- feature inclusion

struct FeatureInclusion {
  double mse_obj = 0;  ///< E[(y - E[y|x_obj])^2]
  double mse_sub = 0;  ///< E[(y - E[y|x_sub])^2]
  double ce_obj = 0;   ///< H(y | x_obj), nats
  double ce_sub = 0;   ///< H(y | x_sub), nats
  double cmi = 0;      ///< I(y ; x_extra | x_sub), nats
  bool dependent = false;
  /// E[Var(y|sub)] - E[Var(y|obj)] - E[Var(E[y|obj] | sub)]
  double total_variance_residual = 0;
};

/// Uses the source table only. Rejects a sub value with no mass.
FeatureInclusion feature_inclusion(const ToyDistribution& dist);
LemmaReport check_lemma4(const ToyDistribution& dist);
/// Half of the tables draw y from x_sub alone. Also checks the total
/// variance identity on every table.
LemmaReport check_lemma4_random(int trials, Rng& rng, const ToyShape& shape = {2, 3, 1, 2});

struct TheoryReport {
  LemmaReport lemma1;
  LemmaReport lemma2;
  LemmaReport lemma3;
  LemmaReport lemma4;

  bool passed() const;
  std::string to_json(int indent = 2) const;
};

/// Every check with `trials` random constructions from one seed.
TheoryReport run_all_checks(int trials, std::uint64_t seed);

}  // namespace align::theory
