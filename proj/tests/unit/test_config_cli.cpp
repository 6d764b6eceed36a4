#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "align/config.hpp"
#include "align/image_io.hpp"
#include "align_cli/cli.hpp"

using namespace align;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "align_cli_unit" / name;
  fs::remove_all(d);
  fs::create_directories(d.parent_path());
  return d;
}

RunConfig tiny_config() {
  RunConfig c;
  c.data.image_height = 8;
  c.data.image_width = 8;
  c.data.num_classes = 3;
  c.data.num_domains = 2;
  c.data.samples_per_domain = 15;
  c.model.classifier.num_classes = 3;
  c.model.classifier.channels = {3, 4};
  c.model.masker.hidden_channels = 3;
  c.schedule.warmup_iters = 2;
  c.schedule.joint_iters = 2;
  c.schedule.batch_size = 4;
  c.schedule.eval_interval = 1;
  return c;
}

fs::path write_config(const fs::path& dir, const RunConfig& c) {
  fs::create_directories(dir);
  const fs::path p = dir / "config.json";
  std::ofstream(p) << config_to_json(c);
  return p;
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

bool empty_or_missing(const fs::path& p) { return !fs::exists(p) || fs::is_empty(p); }

}  // namespace

TEST(Config, RoundTripsThroughJson) {
  RunConfig c = tiny_config();
  c.losses.lambda_egl = 0.25;
  const std::string text = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(text)), text);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(R"({"losses": {"lambda_egl": 1, "lambda_typo": 2}})"), std::invalid_argument);
  EXPECT_THROW(config_from_json(R"({"surprise": 1})"), std::invalid_argument);
  EXPECT_THROW(config_from_json(R"({"losses": {"lambda_egl": -1}})"), std::invalid_argument);
  EXPECT_THROW(config_from_json("not json"), std::invalid_argument);
}

TEST(Config, PartialFilesKeepDefaults) {
  RunConfig c = config_from_json(R"({"schedule": {"joint_iters": 7}})");
  EXPECT_EQ(c.schedule.joint_iters, 7);
  EXPECT_EQ(c.schedule.warmup_iters, RunConfig{}.schedule.warmup_iters);
}

TEST(Config, SetSeedMovesDataAndTraining) {
  RunConfig c;
  c.set_seed(42);
  EXPECT_EQ(c.data.seed, 42u);
  EXPECT_EQ(c.schedule.seed, 42u);
}

TEST(Cli, HelpAndBadArguments) {
  EXPECT_EQ(invoke({"--help"}).code, cli::kExitOk);
  EXPECT_EQ(invoke({"frobnicate"}).code, cli::kExitValidation);
  EXPECT_EQ(invoke({"theory-check", "--trials", "0"}).code, cli::kExitValidation);
  EXPECT_EQ(invoke({"--config", "/nonexistent.json", "theory-check"}).code, cli::kExitValidation);
}

TEST(Cli, DryRunWritesNothing) {
  const fs::path dir = fresh_dir("dry");
  const fs::path cfg = write_config(fresh_dir("dry_cfg"), tiny_config());
  const auto r = invoke({"--config", cfg.string(), "--out", dir.string(), "--dry-run", "synth"});
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_TRUE(empty_or_missing(dir));
}

TEST(Cli, SynthIsDeterministicAndRefusesToOverwrite) {
  const fs::path cfg = write_config(fresh_dir("synth_cfg"), tiny_config());
  const fs::path a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
  ASSERT_EQ(invoke({"--config", cfg.string(), "--out", a.string(), "synth"}).code, cli::kExitOk);
  ASSERT_EQ(invoke({"--config", cfg.string(), "--out", b.string(), "synth"}).code, cli::kExitOk);
  std::ifstream ma(a / "manifest.json"), mb(b / "manifest.json");
  std::stringstream sa, sb;
  sa << ma.rdbuf();
  sb << mb.rdbuf();
  EXPECT_FALSE(sa.str().empty());
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(invoke({"--config", cfg.string(), "--out", a.string(), "synth"}).code, cli::kExitValidation);
  EXPECT_EQ(invoke({"--config", cfg.string(), "--out", a.string(), "--force", "synth"}).code, cli::kExitOk);
}

TEST(Cli, RhoSweepChangesOnlyTheSourcePalettes) {
  const fs::path cfg = write_config(fresh_dir("rho_cfg"), tiny_config());
  for (const char* rho : {"0", "0.5", "1"}) {
    const fs::path d = fresh_dir(std::string("rho_") + rho);
    const auto r = invoke({"--config", cfg.string(), "--out", d.string(), "synth", "--rho", rho});
    EXPECT_EQ(r.code, cli::kExitOk) << r.err;
    std::ifstream m(d / "manifest.json");
    std::stringstream s;
    s << m.rdbuf();
    EXPECT_NE(s.str().find("\"spurious_rho\""), std::string::npos);
  }
  EXPECT_EQ(invoke({"--out", fresh_dir("rho_bad").string(), "synth", "--rho", "1.5"}).code, cli::kExitValidation);
}

TEST(Cli, TrainEvalExplainPipeline) {
  const fs::path cfg = write_config(fresh_dir("pipe_cfg"), tiny_config());
  const fs::path data = fresh_dir("pipe_data"), run = fresh_dir("pipe_run"), ev = fresh_dir("pipe_eval");
  ASSERT_EQ(invoke({"--config", cfg.string(), "--out", data.string(), "synth"}).code, cli::kExitOk);
  auto r = invoke({"--config", cfg.string(), "--out", run.string(), "train", "--data", data.string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  for (const char* f : {"checkpoint.ckpt", "trace.csv", "config.resolved.json", "validation.json"}) {
    EXPECT_TRUE(fs::exists(run / f)) << f;
  }
  const std::string ckpt = (run / "checkpoint.ckpt").string();
  r = invoke({"--out", ev.string(), "eval", "--checkpoint", ckpt, "--data", data.string(), "--mode", "ood"});
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(ev / "eval_ood.json"));
  r = invoke({"--out", ev.string(), "eval", "--checkpoint", ckpt, "--data", data.string(), "--mode", "ood"});
  EXPECT_EQ(r.code, cli::kExitValidation);

  const fs::path img = fresh_dir("pipe_img");
  fs::create_directories(img);
  write_pnm(img / "probe.ppm", Tensor::full({3, 8, 8}, 0.5));
  r = invoke({"--out", ev.string(), "explain", "--checkpoint", ckpt, "--image", (img / "probe.ppm").string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  Tensor heat = read_pnm(ev / "probe_heatmap.pgm");
  Tensor mask = read_pnm(ev / "probe_mask.pgm");
  EXPECT_EQ(heat.shape(), (Shape{1, 8, 8}));
  EXPECT_EQ(mask.shape(), (Shape{1, 8, 8}));

  write_pnm(img / "odd.ppm", Tensor::full({3, 6, 6}, 0.5));
  r = invoke({"--out", ev.string(), "--force", "explain", "--checkpoint", ckpt, "--image", (img / "odd.ppm").string()});
  EXPECT_EQ(r.code, cli::kExitValidation);
}

TEST(Cli, TheoryCheckWithOneTrialWritesAReport) {
  const fs::path dir = fresh_dir("theory");
  const auto r = invoke({"--out", dir.string(), "theory-check", "--trials", "1"});
  EXPECT_TRUE(r.code == cli::kExitOk || r.code == cli::kExitViolation) << r.err;
  EXPECT_TRUE(fs::exists(dir / "theory_report.json"));
}
