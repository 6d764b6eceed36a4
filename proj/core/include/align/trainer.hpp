#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "align/losses.hpp"
#include "align/metrics.hpp"
#include "align/models.hpp"
#include "align/optimizer.hpp"
#include "align/synth.hpp"

namespace align {

struct TrainSchedule {
  int warmup_iters = 200;
  int joint_iters = 100;
  int batch_size = 16;
  double lr_classifier = 5e-3;
  double lr_masker = 1e-3;
  int early_stop_patience = 10;  ///< in evaluations
  int eval_interval = 10;        ///< in iterations
  int masker_steps_per_iter = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Phase { warmup, joint };
std::string phase_name(Phase phase);

/// Loss components of one iteration. Components that do not apply to the
/// phase are empty.
struct LossRecord {
  int iteration = 0;
  Phase phase = Phase::warmup;
  double cls = 0.0;
  std::optional<double> egl;
  std::optional<double> reg;
  std::optional<double> dist;
  std::optional<double> sparsity;
  std::optional<double> smooth;
  std::optional<double> val_acc;
};

struct TrainState {
  int iteration = 0;
  Phase phase = Phase::warmup;
  double best_val_acc = -1.0;
  int best_iteration = -1;
  int stale_evals = 0;
  bool stopped_early = false;
  std::int64_t isolation_checks = 0;
  std::vector<LossRecord> history;
};

/// Moves to iteration + 1 and switches to the joint phase once
/// `warmup_iters` iterations have run.
void advance(TrainState& state, const TrainSchedule& schedule);

/// Thrown when a step runs in the wrong phase or a frozen network changed.
class TrainContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct StepLosses {
  double total = 0.0;
  double cls = 0.0;
  std::optional<double> egl;
  std::optional<double> reg;
  std::optional<double> dist;
  std::optional<double> sparsity;
  std::optional<double> smooth;
};

/// One Adam step on L_cls + lambda4 * L_reg.
StepLosses warmup_step(const TrainState& state, const ClassifierBatch& batch, ClassifierNet& classifier,
                       Adam& optimizer, const LossConfig& config);
/// One Adam step of the masker on the masker objective; the classifier is
/// hashed before and after and must not change.
StepLosses masker_step(TrainState& state, const Tensor& x, std::span<const std::int64_t> labels,
                       const ClassifierNet& classifier, MaskerNet& masker, Adam& optimizer, const LossConfig& config);
/// One Adam step of the classifier on L_cls + lambda3 * L_egl + lambda4 *
/// L_reg; the masker (parameters and buffers) must not change.
StepLosses classifier_step(TrainState& state, const ClassifierBatch& batch, ClassifierNet& classifier,
                           MaskerNet& masker, Adam& optimizer, const LossConfig& config);

/// Seeded mini-batch sampler: reshuffles the index set every epoch and draws
/// a same-class mixup partner for every sample.
class BatchSampler {
 public:
  BatchSampler(const ImageSet& data, int batch_size, std::uint64_t seed);

  ClassifierBatch next(double beta_alpha);
  const std::vector<std::int64_t>& last_index() const { return last_index_; }

 private:
  const ImageSet& data_;
  int batch_size_;
  Rng rng_;
  std::vector<std::int64_t> order_;
  std::size_t cursor_ = 0;
  std::vector<std::vector<std::int64_t>> by_class_;
  std::vector<std::int64_t> last_index_;
};

struct TrainResult {
  TrainState state;
  MetricsReport validation;
};

using RecordCallback = std::function<void(const LossRecord&)>;

/// Warm-up, then alternating masker / classifier updates. Validation
/// accuracy is measured every eval_interval iterations and at the last
/// iteration. During the final phase the best validation checkpoint is kept,
/// training stops after early_stop_patience evaluations without
/// improvement, and the best checkpoint is restored at the end.
TrainResult train_align(const ImageSet& train, const ImageSet& val, ClassifierNet& classifier, MaskerNet& masker,
                        const TrainSchedule& schedule, const LossConfig& config,
                        const RecordCallback& on_record = nullptr);

std::string trace_csv(const std::vector<LossRecord>& history);
void write_trace_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history);

/// Classifier and masker state under "classifier." and "masker." prefixes.
StateDict combined_state(const ClassifierNet& classifier, const MaskerNet& masker);
void load_combined_state(const StateDict& state, ClassifierNet& classifier, MaskerNet& masker);

}  // namespace align
