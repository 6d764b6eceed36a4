#include "align_cli/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

#include "align/checkpoint.hpp"
#include "align/dataset_io.hpp"
#include "align/gradcam.hpp"
#include "align/image_io.hpp"
#include "align/theory.hpp"

namespace align::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kResolvedConfig = "config.resolved.json";
constexpr const char* kCheckpointFile = "checkpoint.ckpt";

bool non_empty_dir(const fs::path& dir) {
  return fs::is_directory(dir) && fs::directory_iterator(dir) != fs::directory_iterator();
}

void prepare_fresh_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) {
    throw CliError(kExitValidation, dir.string() + " exists and is not a directory");
  }
  if (non_empty_dir(dir) && !force) {
    throw CliError(kExitValidation, "output directory " + dir.string() + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir);
}

// Report files may accumulate in one directory; only clobbering needs --force.
void claim_file(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) {
    throw CliError(kExitValidation, path.string() + " already exists (use --force to overwrite)");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw CliError(kExitValidation, "cannot write " + path.string());
  os << text;
  if (!os) throw CliError(kExitValidation, "failed writing " + path.string());
}

void require_manifest(const fs::path& data_dir) {
  if (!fs::exists(data_dir / "manifest.json")) {
    throw CliError(kExitValidation, "no dataset manifest under " + data_dir.string() + " (run `align synth` first)");
  }
}

LoadedDataset load_data(const fs::path& data_dir) {
  require_manifest(data_dir);
  try {
    return read_dataset(data_dir);
  } catch (const std::exception& e) {
    throw CliError(kExitValidation, "cannot read dataset under " + data_dir.string() + ": " + e.what());
  }
}

const std::vector<Sample>& split_of(const DomainSplit& d, const std::string& name) {
  if (name == "train") return d.split.train;
  if (name == "val") return d.split.val;
  if (name == "test") return d.split.test;
  throw CliError(kExitValidation, "unknown split '" + name + "' (train|val|test)");
}

Checkpoint read_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw CliError(kExitValidation, "checkpoint " + path.string() + " does not exist");
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    throw CliError(kExitValidation, "corrupt checkpoint " + path.string() + ": " + e.what());
  }
}

RunConfig config_from_meta(const Checkpoint& ck, const fs::path& path) {
  try {
    const json meta = json::parse(ck.meta_json);
    return config_from_json(meta.at("config").dump());
  } catch (const std::exception& e) {
    throw CliError(kExitValidation, "checkpoint " + path.string() + " carries no usable config: " + e.what());
  }
}

AlignModels load_models(const fs::path& path, RunConfig& config) {
  Checkpoint ck = read_checkpoint(path);
  config = config_from_meta(ck, path);
  AlignModels models = make_models(config);
  const std::string diff = layout_diff(combined_state(models.classifier, models.masker), ck.tensors);
  if (!diff.empty()) {
    throw CliError(kExitValidation, "checkpoint " + path.string() + " does not match its config:\n" + diff);
  }
  load_combined_state(ck.tensors, models.classifier, models.masker);
  return models;
}

EvalOptions eval_options(const RunConfig& config) {
  EvalOptions opts;
  opts.selector = config.eval.selector;
  opts.cam_root = config.eval.cam_root;
  opts.iou_threshold = config.eval.iou_threshold;
  return opts;
}

void write_report(const fs::path& dir, const std::string& stem, const MetricsReport& report, bool force) {
  const fs::path json_path = dir / (stem + ".json");
  const fs::path csv_path = dir / (stem + ".csv");
  claim_file(json_path, force);
  claim_file(csv_path, force);
  write_text(json_path, report_to_json(report));
  write_text(csv_path, report_to_csv(report));
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void print_report(std::ostream& log, const MetricsReport& r) {
  log << r.name << ": n=" << r.samples << " acc=" << fixed(r.accuracy) << " auc=" << fixed(r.auc_macro);
  if (r.sufficiency) log << " suff=" << fixed(*r.sufficiency, 2);
  if (r.comprehensiveness) log << " comp=" << fixed(*r.comprehensiveness, 2);
  if (r.mask_iou) log << " iou=" << fixed(*r.mask_iou);
  log << '\n';
}

MaskSource parse_source(const std::string& s) {
  if (s == "learned") return MaskSource::learned_masker;
  if (s == "gt") return MaskSource::gt_mask;
  if (s == "degraded") return MaskSource::degraded_mask;
  if (s == "ones") return MaskSource::ones;
  throw CliError(kExitValidation, "unknown mask source '" + s + "' (learned|gt|degraded|ones|all)");
}

}  // namespace

RunConfig resolve_config(const GlobalOptions& global) {
  RunConfig config = global.config ? load_config(*global.config) : RunConfig{};
  if (global.seed) config.set_seed(*global.seed);
  config.validate();
  return config;
}

RunConfig checkpoint_config(const fs::path& checkpoint) {
  return config_from_meta(read_checkpoint(checkpoint), checkpoint);
}

int cmd_synth(const GlobalOptions& global, const SynthOptions& options, std::ostream& log) {
  RunConfig config = resolve_config(global);
  if (options.rho) config.data.spurious_rho = *options.rho;
  if (options.samples_per_domain) config.data.samples_per_domain = *options.samples_per_domain;
  config.validate();
  const fs::path out = global.out ? *global.out : fs::path(config.paths.data_dir);
  config.paths.data_dir = out.string();

  const auto total = static_cast<long long>(config.data.samples_per_domain) * config.data.num_domains;
  if (global.dry_run) {
    log << "dry run: config valid; would write " << total << " samples to " << out.string() << '\n';
    return kExitOk;
  }
  prepare_fresh_dir(out, global.force);
  const auto splits = split_dataset(generate_dataset(config.data), config.data.seed);
  write_dataset(out, config.data, splits);
  write_text(out / kResolvedConfig, config_to_json(config));
  log << "wrote " << total << " samples over " << config.data.num_domains << " domains to " << out.string() << '\n';
  return kExitOk;
}

int cmd_train(const GlobalOptions& global, const TrainOptions& options, std::ostream& log) {
  RunConfig config = resolve_config(global);
  if (options.lambda_egl) config.losses.lambda_egl = *options.lambda_egl;
  if (options.lambda_reg) config.losses.lambda_reg = *options.lambda_reg;
  if (options.warmup_iters) config.schedule.warmup_iters = *options.warmup_iters;
  if (options.joint_iters) config.schedule.joint_iters = *options.joint_iters;
  const fs::path data_dir = options.data ? *options.data : fs::path(config.paths.data_dir);
  const fs::path out = global.out ? *global.out : fs::path(config.paths.out_dir);
  config.paths.data_dir = data_dir.string();
  config.paths.out_dir = out.string();
  config.validate();
  require_manifest(data_dir);
  if (global.dry_run) {
    log << "dry run: config valid; dataset manifest found under " << data_dir.string() << '\n';
    return kExitOk;
  }

  LoadedDataset data = load_data(data_dir);
  // The dataset on disk defines the data section; a stale one in the config
  // would misdescribe the run.
  config.data = data.spec;
  if (global.seed) config.schedule.seed = *global.seed;
  config.validate();
  const DomainSplit& source = data.domain(config.data.source_domain);
  const ImageSet train = make_image_set(source.split.train);
  const ImageSet val = make_image_set(source.split.val);

  prepare_fresh_dir(out, global.force);
  write_text(out / kResolvedConfig, config_to_json(config));
  AlignModels models = make_models(config);
  log << "training on " << train.size() << " samples, validating on " << val.size() << '\n';
  TrainResult result = train_align(train, val, models.classifier, models.masker, config.schedule, config.losses,
                                   [&log](const LossRecord& r) {
                                     if (!r.val_acc) return;
                                     log << "iter " << r.iteration << " [" << phase_name(r.phase)
                                         << "] cls=" << fixed(r.cls) << " val_acc=" << fixed(*r.val_acc) << '\n';
                                   });

  json meta;
  meta["config"] = json::parse(config_to_json(config));
  meta["best_iteration"] = result.state.best_iteration;
  meta["best_val_acc"] = result.state.best_val_acc;
  meta["iterations_run"] = result.state.history.size();
  meta["stopped_early"] = result.state.stopped_early;
  meta["isolation_checks"] = result.state.isolation_checks;
  Checkpoint ck;
  ck.tensors = combined_state(models.classifier, models.masker);
  ck.meta_json = meta.dump();
  save_checkpoint(out / kCheckpointFile, ck);
  write_trace_csv(out / "trace.csv", result.state.history);
  write_text(out / "validation.json", report_to_json(result.validation));
  print_report(log, result.validation);
  log << "checkpoint: " << (out / kCheckpointFile).string() << '\n';
  return kExitOk;
}

int cmd_eval(const GlobalOptions& global, const EvalCommandOptions& options, std::ostream& log) {
  if (options.mode != "id" && options.mode != "ood" && options.mode != "perturb") {
    throw CliError(kExitValidation, "unknown eval mode '" + options.mode + "' (id|ood|perturb)");
  }
  std::vector<MaskSource> sources;
  if (options.mode == "perturb") {
    if (options.mask_source == "all") {
      sources = {MaskSource::learned_masker, MaskSource::degraded_mask, MaskSource::gt_mask, MaskSource::ones};
    } else {
      sources = {parse_source(options.mask_source)};
    }
  }
  RunConfig trained;
  AlignModels models = load_models(options.checkpoint, trained);
  // Evaluation settings may be overridden; the model always comes from the checkpoint.
  RunConfig settings = global.config ? resolve_config(global) : trained;
  const fs::path data_dir = options.data ? *options.data : fs::path(settings.paths.data_dir);
  const fs::path out = global.out ? *global.out : fs::path(settings.paths.out_dir);
  require_manifest(data_dir);
  if (global.dry_run) {
    log << "dry run: checkpoint and dataset found; mode " << options.mode << '\n';
    return kExitOk;
  }

  LoadedDataset data = load_data(data_dir);
  if (data.spec.image_height != trained.data.image_height || data.spec.image_width != trained.data.image_width ||
      data.spec.num_classes != trained.data.num_classes) {
    throw CliError(kExitValidation, "dataset under " + data_dir.string() + " does not match the checkpoint's image "
                                    "size or class count");
  }
  fs::create_directories(out);
  const EvalOptions opts = eval_options(settings);
  const int source_domain = data.spec.source_domain;

  if (options.mode == "id") {
    const ImageSet set = make_image_set(split_of(data.domain(source_domain), options.split));
    MetricsReport r = evaluate(models.classifier, &models.masker, set, opts, "id_" + options.split);
    write_report(out, "eval_id_" + options.split, r, global.force);
    print_report(log, r);
  } else if (options.mode == "ood") {
    std::vector<DomainSet> targets;
    for (const auto& d : data.splits) {
      if (d.domain == source_domain) continue;
      targets.push_back({d.domain, make_image_set(split_of(d, options.split))});
    }
    if (targets.empty()) throw CliError(kExitValidation, "dataset has no target domains");
    MetricsReport r = ood_eval(models.classifier, &models.masker, targets, source_domain, opts);
    write_report(out, "eval_ood", r, global.force);
    for (const auto& b : r.breakdown) {
      write_report(out, "eval_ood_" + b.name, b, global.force);
      print_report(log, b);
    }
    print_report(log, r);
  } else {
    const ImageSet set = make_image_set(split_of(data.domain(source_domain), options.split));
    PerturbationOptions popts;
    popts.sigma = settings.eval.sigma;
    popts.kind = settings.eval.perturbation;
    popts.seed = trained.schedule.seed;
    for (MaskSource s : sources) {
      MetricsReport r = perturbation_eval(models.classifier, &models.masker, set, s, popts);
      write_report(out, "perturb_" + mask_source_name(s), r, global.force);
      print_report(log, r);
    }
  }
  return kExitOk;
}

int cmd_explain(const GlobalOptions& global, const ExplainCommandOptions& options, std::ostream& log) {
  RunConfig config;
  AlignModels models = load_models(options.checkpoint, config);
  const fs::path out = global.out ? *global.out : fs::path(config.paths.out_dir);

  Tensor image;
  try {
    image = read_pnm(options.image);
  } catch (const std::exception& e) {
    throw CliError(kExitValidation, "cannot read image " + options.image.string() + ": " + e.what());
  }
  if (image.dim(0) != 3) {
    throw CliError(kExitValidation, "expected a colour (P6) image, got " + std::to_string(image.dim(0)) + " channel(s)");
  }
  const auto h = image.dim(1);
  const auto w = image.dim(2);
  Tensor x = Tensor::from_data({1, 3, h, w}, {image.data().begin(), image.data().end()});
  try {
    models.classifier.check_input(x.shape());
  } catch (const std::exception& e) {
    throw CliError(kExitValidation, e.what());
  }

  const Tensor probs = predict(models.classifier, x);
  std::int64_t cls = argmax_rows(probs)[0];
  if (options.class_index) {
    cls = *options.class_index;
    if (cls < 0 || cls >= config.data.num_classes) {
      throw CliError(kExitValidation, "class " + std::to_string(cls) + " outside [0," +
                                          std::to_string(config.data.num_classes) + ")");
    }
  }
  const fs::path heat_path = out / (options.image.stem().string() + "_heatmap.pgm");
  const fs::path mask_path = out / (options.image.stem().string() + "_mask.pgm");
  if (global.dry_run) {
    log << "dry run: would write " << heat_path.string() << " and " << mask_path.string() << '\n';
    return kExitOk;
  }
  claim_file(heat_path, global.force);
  claim_file(mask_path, global.force);
  fs::create_directories(out);

  const std::vector<std::int64_t> labels{cls};
  ExplainOptions eo;
  eo.root = config.eval.cam_root;
  const SaliencyMap cam = explain(models.classifier, x, labels, eo);
  const Tensor mask = predict_masks(models.masker, x);
  write_pnm(heat_path, Tensor::from_data({1, h, w}, {cam.normalized.data().begin(), cam.normalized.data().end()}));
  write_pnm(mask_path, Tensor::from_data({1, h, w}, {mask.data().begin(), mask.data().end()}));
  log << "class " << cls << " p=" << fixed(probs.data()[cls]) << '\n';
  log << "heatmap: " << heat_path.string() << "\nmask: " << mask_path.string() << '\n';
  return kExitOk;
}

int cmd_theory(const GlobalOptions& global, const TheoryOptions& options, std::ostream& log) {
  if (options.trials < 1) throw CliError(kExitValidation, "--trials must be at least 1");
  const RunConfig config = resolve_config(global);
  const std::uint64_t seed = global.seed.value_or(0);
  const fs::path out = global.out ? *global.out : fs::path(config.paths.out_dir);
  if (global.dry_run) {
    log << "dry run: would run " << options.trials << " trials per lemma with seed " << seed << '\n';
    return kExitOk;
  }
  const theory::TheoryReport report = theory::run_all_checks(options.trials, seed);
  const fs::path path = out / "theory_report.json";
  claim_file(path, global.force);
  fs::create_directories(out);
  write_text(path, report.to_json());
  for (const auto* l : {&report.lemma1, &report.lemma2, &report.lemma3, &report.lemma4}) {
    log << l->lemma << ": trials=" << l->trials << " violations=" << l->violations << " vacuous=" << l->vacuous
        << " min_slack=" << l->min_slack << (l->passed() ? "  ok" : "  VIOLATED") << '\n';
  }
  log << "report: " << path.string() << '\n';
  return report.passed() ? kExitOk : kExitViolation;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Explanation-guided training with a learned masker on a synthetic benchmark", "align"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions global;
  std::string config_path, out_path;
  std::uint64_t seed = 0;
  auto* config_opt = app.add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Seed for data generation and training");
  auto* out_opt = app.add_option("--out", out_path, "Output directory");
  app.add_flag("--force", global.force, "Overwrite existing outputs");
  app.add_flag("--dry-run", global.dry_run, "Validate inputs and write nothing");

  SynthOptions synth;
  double rho = 0;
  int samples = 0;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic dataset");
  auto* rho_opt = synth_cmd->add_option("--rho", rho, "Source-domain spurious correlation");
  auto* samples_opt = synth_cmd->add_option("--samples", samples, "Samples per domain");

  TrainOptions train;
  std::string train_data;
  double lambda_egl = 0, lambda_reg = 0;
  int warmup = 0, joint = 0;
  auto* train_cmd = app.add_subcommand("train", "Train classifier and masker");
  auto* train_data_opt = train_cmd->add_option("--data", train_data, "Dataset directory");
  auto* egl_opt = train_cmd->add_option("--lambda-egl", lambda_egl, "Alignment loss weight (0 disables it)");
  auto* reg_opt = train_cmd->add_option("--lambda-reg", lambda_reg, "Mixup regularizer weight");
  auto* warmup_opt = train_cmd->add_option("--warmup", warmup, "Warm-up iterations");
  auto* joint_opt = train_cmd->add_option("--joint", joint, "Joint iterations");

  EvalCommandOptions eval;
  std::string eval_ckpt, eval_data;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  auto* eval_data_opt = eval_cmd->add_option("--data", eval_data, "Dataset directory");
  eval_cmd->add_option("--mode", eval.mode, "id | ood | perturb")->check(CLI::IsMember({"id", "ood", "perturb"}));
  eval_cmd->add_option("--mask-source", eval.mask_source, "Perturbation mask: learned | gt | degraded | ones | all");
  eval_cmd->add_option("--split", eval.split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));

  ExplainCommandOptions explain;
  std::string explain_ckpt, image;
  std::int64_t cls = 0;
  auto* explain_cmd = app.add_subcommand("explain", "Grad-CAM heatmap and masker output for one image");
  explain_cmd->add_option("--checkpoint", explain_ckpt, "Checkpoint file")->required();
  explain_cmd->add_option("--image", image, "Input PPM image")->required();
  auto* class_opt = explain_cmd->add_option("--class", cls, "Class to explain (default: predicted)");

  TheoryOptions theory_opts;
  auto* theory_cmd = app.add_subcommand("theory-check", "Exact numerical checks of the generalization lemmas");
  theory_cmd->add_option("--trials", theory_opts.trials, "Random constructions per lemma");

  std::vector<std::string> argv_store{"align"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (config_opt->count()) global.config = config_path;
  if (seed_opt->count()) global.seed = seed;
  if (out_opt->count()) global.out = out_path;

  try {
    if (synth_cmd->parsed()) {
      if (rho_opt->count()) synth.rho = rho;
      if (samples_opt->count()) synth.samples_per_domain = samples;
      return cmd_synth(global, synth, out);
    }
    if (train_cmd->parsed()) {
      if (train_data_opt->count()) train.data = train_data;
      if (egl_opt->count()) train.lambda_egl = lambda_egl;
      if (reg_opt->count()) train.lambda_reg = lambda_reg;
      if (warmup_opt->count()) train.warmup_iters = warmup;
      if (joint_opt->count()) train.joint_iters = joint;
      return cmd_train(global, train, out);
    }
    if (eval_cmd->parsed()) {
      eval.checkpoint = eval_ckpt;
      if (eval_data_opt->count()) eval.data = eval_data;
      return cmd_eval(global, eval, out);
    }
    if (explain_cmd->parsed()) {
      explain.checkpoint = explain_ckpt;
      explain.image = image;
      if (class_opt->count()) explain.class_index = cls;
      return cmd_explain(global, explain, out);
    }
    return cmd_theory(global, theory_opts, out);
  } catch (const CliError& e) {
    err << "error: " << e.what() << '\n';
    return e.code();
  } catch (const TrainContractError& e) {
    err << "contract violation: " << e.what() << '\n';
    return kExitViolation;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::out_of_range& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << '\n';
    return kExitViolation;
  }
}

}  // namespace align::cli
