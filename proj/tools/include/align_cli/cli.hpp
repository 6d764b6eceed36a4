#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "align/config.hpp"

namespace align::cli {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitViolation = 2;

/// Error carrying the process exit status it maps to.
class CliError : public std::runtime_error {
 public:
  CliError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

struct GlobalOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool force = false;
  bool dry_run = false;
};

struct SynthOptions {
  std::optional<double> rho;
  std::optional<int> samples_per_domain;
};

struct TrainOptions {
  std::optional<std::filesystem::path> data;
  std::optional<double> lambda_egl;
  std::optional<double> lambda_reg;
  std::optional<int> warmup_iters;
  std::optional<int> joint_iters;
};

struct EvalCommandOptions {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> data;
  std::string mode = "id";         ///< id | ood | perturb
  std::string mask_source = "all"; ///< perturb only: learned | gt | degraded | ones | all
  std::string split = "test";
};

struct ExplainCommandOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::optional<std::int64_t> class_index;
};

struct TheoryOptions {
  int trials = 200;
};

/// Defaults, then --config, then --seed. Validated.
RunConfig resolve_config(const GlobalOptions& global);

/// Config stored in a checkpoint's meta block.
RunConfig checkpoint_config(const std::filesystem::path& checkpoint);

int cmd_synth(const GlobalOptions& global, const SynthOptions& options, std::ostream& log);
int cmd_train(const GlobalOptions& global, const TrainOptions& options, std::ostream& log);
int cmd_eval(const GlobalOptions& global, const EvalCommandOptions& options, std::ostream& log);
int cmd_explain(const GlobalOptions& global, const ExplainCommandOptions& options, std::ostream& log);
int cmd_theory(const GlobalOptions& global, const TheoryOptions& options, std::ostream& log);

/// Parses `args` (without the program name) and dispatches. Errors are
/// printed to `err` and mapped to exit statuses.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace align::cli
