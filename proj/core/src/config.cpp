#include "align/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json_fields.hpp"

namespace align {

namespace {

using nlohmann::json;
using detail::FieldReader;

std::string fill_name(FillPolicy p) { return p == FillPolicy::zero ? "zero" : "mean"; }
FillPolicy parse_fill(const std::string& s) {
  if (s == "zero") return FillPolicy::zero;
  if (s == "mean") return FillPolicy::mean;
  throw std::invalid_argument("unknown fill policy '" + s + "' (zero|mean)");
}

std::string perturbation_name(PerturbationKind k) { return k == PerturbationKind::blur ? "blur" : "noise"; }
PerturbationKind parse_perturbation(const std::string& s) {
  if (s == "blur") return PerturbationKind::blur;
  if (s == "noise") return PerturbationKind::noise;
  throw std::invalid_argument("unknown perturbation '" + s + "' (blur|noise)");
}

std::string root_name(CamRoot r) { return r == CamRoot::prob ? "prob" : "logit"; }
CamRoot parse_root(const std::string& s) {
  if (s == "prob") return CamRoot::prob;
  if (s == "logit") return CamRoot::logit;
  throw std::invalid_argument("unknown cam_root '" + s + "' (prob|logit)");
}

std::string divergence_name(EglDivergence d) { return d == EglDivergence::bce ? "bce" : "l1"; }
EglDivergence parse_divergence(const std::string& s) {
  if (s == "bce") return EglDivergence::bce;
  if (s == "l1") return EglDivergence::l1;
  throw std::invalid_argument("unknown divergence '" + s + "' (bce|l1)");
}

json losses_json(const LossConfig& l) {
  return {{"lambda_sparsity", l.lambda_sparsity}, {"lambda_smooth", l.lambda_smooth},
          {"lambda_egl", l.lambda_egl},           {"lambda_reg", l.lambda_reg},
          {"beta_alpha", l.beta_alpha},           {"bce_epsilon", l.bce_epsilon},
          {"cam_root", root_name(l.cam_root)},    {"divergence", divergence_name(l.divergence)}};
}

void read_losses(const json& j, const std::string& where, LossConfig& l) {
  FieldReader r(j, where);
  r.read("lambda_sparsity", l.lambda_sparsity);
  r.read("lambda_smooth", l.lambda_smooth);
  r.read("lambda_egl", l.lambda_egl);
  r.read("lambda_reg", l.lambda_reg);
  r.read("beta_alpha", l.beta_alpha);
  r.read("bce_epsilon", l.bce_epsilon);
  std::string root = root_name(l.cam_root);
  r.read("cam_root", root);
  l.cam_root = parse_root(root);
  std::string div = divergence_name(l.divergence);
  r.read("divergence", div);
  l.divergence = parse_divergence(div);
  r.finish();
}

json schedule_json(const TrainSchedule& s) {
  return {{"warmup_iters", s.warmup_iters},
          {"joint_iters", s.joint_iters},
          {"batch_size", s.batch_size},
          {"lr_classifier", s.lr_classifier},
          {"lr_masker", s.lr_masker},
          {"early_stop_patience", s.early_stop_patience},
          {"eval_interval", s.eval_interval},
          {"masker_steps_per_iter", s.masker_steps_per_iter},
          {"seed", s.seed}};
}

void read_schedule(const json& j, const std::string& where, TrainSchedule& s) {
  FieldReader r(j, where);
  r.read("warmup_iters", s.warmup_iters);
  r.read("joint_iters", s.joint_iters);
  r.read("batch_size", s.batch_size);
  r.read("lr_classifier", s.lr_classifier);
  r.read("lr_masker", s.lr_masker);
  r.read("early_stop_patience", s.early_stop_patience);
  r.read("eval_interval", s.eval_interval);
  r.read("masker_steps_per_iter", s.masker_steps_per_iter);
  r.read("seed", s.seed);
  r.finish();
}

json model_json(const ModelSettings& m) {
  return {{"classifier",
           {{"channels", m.classifier.channels}, {"cam_layer_index", m.classifier.cam_layer_index}}},
          {"masker", {{"hidden_channels", m.masker.hidden_channels}}}};
}

void read_model(const json& j, const std::string& where, ModelSettings& m) {
  FieldReader r(j, where);
  r.nested("classifier", [&](const json& c, const std::string& path) {
    FieldReader rc(c, path);
    rc.read("channels", m.classifier.channels);
    rc.read("cam_layer_index", m.classifier.cam_layer_index);
    rc.finish();
  });
  r.nested("masker", [&](const json& c, const std::string& path) {
    FieldReader rm(c, path);
    rm.read("hidden_channels", m.masker.hidden_channels);
    rm.finish();
  });
  r.finish();
}

json eval_json(const EvalSettings& e) {
  return {{"keep_fraction", e.selector.keep_fraction},
          {"fill_policy", fill_name(e.selector.fill)},
          {"sigma", e.sigma},
          {"perturbation", perturbation_name(e.perturbation)},
          {"iou_threshold", e.iou_threshold},
          {"cam_root", root_name(e.cam_root)}};
}

void read_eval(const json& j, const std::string& where, EvalSettings& e) {
  FieldReader r(j, where);
  r.read("keep_fraction", e.selector.keep_fraction);
  std::string fill = fill_name(e.selector.fill);
  r.read("fill_policy", fill);
  e.selector.fill = parse_fill(fill);
  r.read("sigma", e.sigma);
  std::string kind = perturbation_name(e.perturbation);
  r.read("perturbation", kind);
  e.perturbation = parse_perturbation(kind);
  r.read("iou_threshold", e.iou_threshold);
  std::string root = root_name(e.cam_root);
  r.read("cam_root", root);
  e.cam_root = parse_root(root);
  r.finish();
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  losses.validate();
  schedule.validate();
  eval.selector.validate();
  if (model.classifier.channels.empty()) throw std::invalid_argument("model.classifier.channels must not be empty");
  for (int c : model.classifier.channels) {
    if (c < 1) throw std::invalid_argument("model.classifier.channels entries must be positive");
  }
  if (model.masker.hidden_channels < 1) throw std::invalid_argument("model.masker.hidden_channels must be positive");
  if (!(eval.sigma >= 0)) throw std::invalid_argument("eval.sigma must be non-negative");
  if (!(eval.iou_threshold >= 0 && eval.iou_threshold < 1)) throw std::invalid_argument("eval.iou_threshold must lie in [0,1)");
  const int blocks = 1 << model.classifier.channels.size();
  if (data.image_height % blocks != 0 || data.image_width % blocks != 0) {
    throw std::invalid_argument("image size must be divisible by " + std::to_string(blocks) + " for " +
                                std::to_string(model.classifier.channels.size()) + " classifier stages");
  }
}

void RunConfig::set_seed(std::uint64_t seed) {
  data.seed = seed;
  schedule.seed = seed;
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["data"] = detail::spec_to_json_value(c.data);
  j["losses"] = losses_json(c.losses);
  j["schedule"] = schedule_json(c.schedule);
  j["model"] = model_json(c.model);
  j["eval"] = eval_json(c.eval);
  j["paths"] = {{"data_dir", c.paths.data_dir}, {"out_dir", c.paths.out_dir}};
  return j.dump(2) + "\n";
}

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config is not valid JSON: " + std::string(e.what()));
  }
  RunConfig c;
  FieldReader r(j, "config");
  r.nested("data", [&](const json& v, const std::string& p) { detail::spec_from_json_value(v, p, c.data); });
  r.nested("losses", [&](const json& v, const std::string& p) { read_losses(v, p, c.losses); });
  r.nested("schedule", [&](const json& v, const std::string& p) { read_schedule(v, p, c.schedule); });
  r.nested("model", [&](const json& v, const std::string& p) { read_model(v, p, c.model); });
  r.nested("eval", [&](const json& v, const std::string& p) { read_eval(v, p, c.eval); });
  r.nested("paths", [&](const json& v, const std::string& p) {
    FieldReader rp(v, p);
    rp.read("data_dir", c.paths.data_dir);
    rp.read("out_dir", c.paths.out_dir);
    rp.finish();
  });
  r.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json(ss.str());
}

AlignModels make_models(const RunConfig& config) {
  ClassifierConfig cc = config.model.classifier;
  cc.num_classes = config.data.num_classes;
  MaskerConfig mc = config.model.masker;
  AlignModels models{ClassifierNet(cc), MaskerNet(mc)};
  models.classifier.init_params(config.schedule.seed);
  models.masker.init_params(config.schedule.seed ^ 0x6D61736B6572ull);
  return models;
}

}  // namespace align
