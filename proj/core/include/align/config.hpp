#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "align/losses.hpp"
#include "align/metrics.hpp"
#include "align/models.hpp"
#include "align/synth.hpp"
#include "align/trainer.hpp"

namespace align {

struct EvalSettings {
  TopKSelector selector;
  double sigma = 5.0;
  PerturbationKind perturbation = PerturbationKind::blur;
  double iou_threshold = 0.5;
  CamRoot cam_root = CamRoot::prob;
};

struct ModelSettings {
  ClassifierConfig classifier;
  MaskerConfig masker;
};

struct PathSettings {
  std::string data_dir = "data";
  std::string out_dir = "out";
};

/// Everything a run depends on. Loaded from JSON; absent fields keep the
/// defaults below and unknown keys are rejected.
struct RunConfig {
  SyntheticSpec data;
  LossConfig losses;
  TrainSchedule schedule;
  ModelSettings model;
  EvalSettings eval;
  PathSettings paths;

  void validate() const;
  /// Sets the data and training seeds together.
  void set_seed(std::uint64_t seed);
};

/// Fully resolved config, every field spelled out.
std::string config_to_json(const RunConfig& config);
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Classifier and masker built from the config and initialized from the
/// training seed.
struct AlignModels {
  ClassifierNet classifier;
  MaskerNet masker;
};

AlignModels make_models(const RunConfig& config);

}  // namespace align
