#include "align/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "align/autograd.hpp"
#include "align/checkpoint.hpp"

namespace align {

void TrainSchedule::validate() const {
  if (warmup_iters < 0 || joint_iters < 0) throw std::invalid_argument("iteration counts must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (!(lr_classifier >= 0) || !(lr_masker >= 0)) throw std::invalid_argument("learning rates must be non-negative");
  if (early_stop_patience < 1) throw std::invalid_argument("early_stop_patience must be at least 1");
  if (eval_interval < 1) throw std::invalid_argument("eval_interval must be at least 1");
  if (masker_steps_per_iter < 1) throw std::invalid_argument("masker_steps_per_iter must be at least 1");
}

std::string phase_name(Phase phase) { return phase == Phase::warmup ? "warmup" : "joint"; }

void advance(TrainState& state, const TrainSchedule& schedule) {
  ++state.iteration;
  if (state.phase == Phase::warmup && state.iteration >= schedule.warmup_iters) state.phase = Phase::joint;
}

namespace {

void require_phase(const TrainState& state, Phase wanted, const char* step) {
  if (state.phase != wanted) {
    throw TrainContractError(std::string(step) + " called in the " + phase_name(state.phase) + " phase");
  }
}

double checked(const Tensor& t, const char* what) {
  const double v = t.item();
  if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite ") + what + " loss");
  return v;
}

std::vector<NamedTensor> masker_tensors(const MaskerNet& masker) {
  auto all = masker.parameters();
  for (auto& b : masker.buffers()) all.push_back(b);
  return all;
}

}  // namespace

StepLosses warmup_step(const TrainState& state, const ClassifierBatch& batch, ClassifierNet& classifier,
                       Adam& optimizer, const LossConfig& config) {
  require_phase(state, Phase::warmup, "warmup_step");
  optimizer.zero_grad();
  ClassifierLosses l = loss_clf_total(batch, classifier, nullptr, config);
  StepLosses out;
  out.total = checked(l.total, "warmup");
  out.cls = checked(l.cls, "classification");
  if (l.reg.total.defined()) out.reg = checked(l.reg.total, "mixup");
  backward(l.total);
  optimizer.step();
  optimizer.zero_grad();
  return out;
}

StepLosses masker_step(TrainState& state, const Tensor& x, std::span<const std::int64_t> labels,
                       const ClassifierNet& classifier, MaskerNet& masker, Adam& optimizer, const LossConfig& config) {
  require_phase(state, Phase::joint, "masker_step");
  const auto before = hash_tensors(classifier.parameters());
  optimizer.zero_grad();
  masker.set_training(true);
  MaskerLosses l = loss_mask_total(x, labels, classifier, masker, config);
  StepLosses out;
  out.total = checked(l.total, "masker");
  out.dist = checked(l.dist, "dist");
  out.sparsity = checked(l.sparsity, "sparsity");
  out.smooth = checked(l.smooth, "smoothness");
  backward(l.total);
  optimizer.step();
  optimizer.zero_grad();
  for (const auto& p : classifier.parameters()) {
    if (p.value.has_grad()) throw TrainContractError("masker_step left a gradient on " + p.name);
  }
  if (hash_tensors(classifier.parameters()) != before) {
    throw TrainContractError("masker_step changed classifier parameters");
  }
  ++state.isolation_checks;
  return out;
}

StepLosses classifier_step(TrainState& state, const ClassifierBatch& batch, ClassifierNet& classifier,
                           MaskerNet& masker, Adam& optimizer, const LossConfig& config) {
  require_phase(state, Phase::joint, "classifier_step");
  const auto before = hash_tensors(masker_tensors(masker));
  optimizer.zero_grad();
  masker.set_training(true);
  ClassifierLosses l = loss_clf_total(batch, classifier, &masker, config);
  StepLosses out;
  out.total = checked(l.total, "classifier");
  out.cls = checked(l.cls, "classification");
  out.egl = checked(l.egl, "alignment");
  if (l.reg.total.defined()) out.reg = checked(l.reg.total, "mixup");
  backward(l.total);
  optimizer.step();
  optimizer.zero_grad();
  for (const auto& p : masker.parameters()) {
    if (p.value.has_grad()) throw TrainContractError("classifier_step left a gradient on " + p.name);
  }
  if (hash_tensors(masker_tensors(masker)) != before) {
    throw TrainContractError("classifier_step changed masker parameters or buffers");
  }
  ++state.isolation_checks;
  return out;
}

BatchSampler::BatchSampler(const ImageSet& data, int batch_size, std::uint64_t seed)
    : data_(data), batch_size_(batch_size), rng_(seed) {
  if (data.empty()) throw std::invalid_argument("BatchSampler: empty data set");
  if (batch_size < 1) throw std::invalid_argument("BatchSampler: batch_size must be positive");
  order_.resize(data.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
  for (std::int64_t i = 0; i < data.size(); ++i) {
    const auto y = data.labels[i];
    if (y < 0) throw std::out_of_range("BatchSampler: negative label");
    if (static_cast<std::size_t>(y) >= by_class_.size()) by_class_.resize(y + 1);
    by_class_[y].push_back(i);
  }
}

ClassifierBatch BatchSampler::next(double beta_alpha) {
  const auto n = std::min<std::int64_t>(batch_size_, data_.size());
  last_index_.clear();
  while (static_cast<std::int64_t>(last_index_.size()) < n) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    last_index_.push_back(order_[cursor_++]);
  }
  std::vector<std::int64_t> partners;
  partners.reserve(last_index_.size());
  for (auto i : last_index_) {
    const auto& pool = by_class_[data_.labels[i]];
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    partners.push_back(pool[pick(rng_)]);
  }
  ClassifierBatch batch;
  batch.x = take_rows(data_.images, last_index_);
  batch.partner = take_rows(data_.images, partners);
  for (auto i : last_index_) batch.labels.push_back(data_.labels[i]);
  batch.beta = sample_beta(beta_alpha, rng_);
  return batch;
}

StateDict combined_state(const ClassifierNet& classifier, const MaskerNet& masker) {
  StateDict out = prefixed(classifier.state_dict(), "classifier");
  for (auto& t : prefixed(masker.state_dict(), "masker")) out.push_back(std::move(t));
  return out;
}

void load_combined_state(const StateDict& state, ClassifierNet& classifier, MaskerNet& masker) {
  classifier.load_state(strip_prefix(state, "classifier"));
  masker.load_state(strip_prefix(state, "masker"));
}

TrainResult train_align(const ImageSet& train, const ImageSet& val, ClassifierNet& classifier, MaskerNet& masker,
                        const TrainSchedule& schedule, const LossConfig& config, const RecordCallback& on_record) {
  schedule.validate();
  config.validate();
  if (train.empty() || val.empty()) throw std::invalid_argument("train_align: training and validation data must be non-empty");

  TrainResult result;
  TrainState& state = result.state;
  state.phase = schedule.warmup_iters > 0 ? Phase::warmup : Phase::joint;
  const int total = schedule.warmup_iters + schedule.joint_iters;
  const Phase final_phase = schedule.joint_iters > 0 ? Phase::joint : Phase::warmup;

  Adam classifier_opt(classifier.parameters(), schedule.lr_classifier);
  Adam masker_opt(masker.parameters(), schedule.lr_masker);
  BatchSampler sampler(train, schedule.batch_size, schedule.seed);
  StateDict best;

  for (int it = 0; it < total; ++it) {
    ClassifierBatch batch = sampler.next(config.beta_alpha);
    LossRecord rec;
    rec.iteration = state.iteration;
    rec.phase = state.phase;
    if (state.phase == Phase::warmup) {
      StepLosses s = warmup_step(state, batch, classifier, classifier_opt, config);
      rec.cls = s.cls;
      rec.reg = s.reg;
    } else {
      StepLosses m;
      for (int k = 0; k < schedule.masker_steps_per_iter; ++k) {
        m = masker_step(state, batch.x, batch.labels, classifier, masker, masker_opt, config);
      }
      StepLosses c = classifier_step(state, batch, classifier, masker, classifier_opt, config);
      rec.cls = c.cls;
      rec.egl = c.egl;
      rec.reg = c.reg;
      rec.dist = m.dist;
      rec.sparsity = m.sparsity;
      rec.smooth = m.smooth;
    }

    const bool last = it + 1 == total;
    const bool phase_ends = state.phase == Phase::warmup && it + 1 == schedule.warmup_iters;
    if ((it + 1) % schedule.eval_interval == 0 || last || phase_ends) {
      rec.val_acc = accuracy(predict(classifier, val.images), val.labels);
      if (state.phase == final_phase) {
        if (*rec.val_acc >= state.best_val_acc) {
          state.best_val_acc = *rec.val_acc;
          state.best_iteration = state.iteration;
          state.stale_evals = 0;
          best = combined_state(classifier, masker);
        } else {
          ++state.stale_evals;
        }
      }
    }
    state.history.push_back(rec);
    if (on_record) on_record(rec);
    advance(state, schedule);
    if (state.stale_evals >= schedule.early_stop_patience) {
      state.stopped_early = true;
      break;
    }
  }

  if (!best.empty()) load_combined_state(best, classifier, masker);
  EvalOptions plain;
  plain.explanation_metrics = false;
  result.validation = evaluate(classifier, nullptr, val, plain, "validation");
  return result;
}

std::string trace_csv(const std::vector<LossRecord>& history) {
  std::ostringstream os;
  os.precision(17);
  auto cell = [&os](const std::optional<double>& v) {
    if (v) os << *v;
  };
  os << "iteration,phase,L_cls,L_egl,L_reg,L_dist,L_sparsity,L_smooth,val_acc\n";
  for (const auto& r : history) {
    os << r.iteration << ',' << phase_name(r.phase) << ',' << r.cls << ',';
    cell(r.egl);
    os << ',';
    cell(r.reg);
    os << ',';
    cell(r.dist);
    os << ',';
    cell(r.sparsity);
    os << ',';
    cell(r.smooth);
    os << ',';
    cell(r.val_acc);
    os << '\n';
  }
  return os.str();
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << trace_csv(history);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace align
