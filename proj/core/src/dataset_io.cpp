#include "align/dataset_io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "align/image_io.hpp"
#include "json_fields.hpp"

namespace align {

namespace detail {

std::string assignment_name(TargetAssignment assignment) {
  return assignment == TargetAssignment::anti_correlated ? "anti_correlated" : "shuffled";
}

TargetAssignment parse_assignment(const std::string& name) {
  if (name == "anti_correlated") return TargetAssignment::anti_correlated;
  if (name == "shuffled") return TargetAssignment::shuffled;
  throw std::invalid_argument("unknown target_assignment '" + name + "' (anti_correlated|shuffled)");
}

nlohmann::json spec_to_json_value(const SyntheticSpec& spec) {
  return {
      {"num_classes", spec.num_classes},
      {"image_height", spec.image_height},
      {"image_width", spec.image_width},
      {"spurious_rho", spec.spurious_rho},
      {"num_domains", spec.num_domains},
      {"source_domain", spec.source_domain},
      {"samples_per_domain", spec.samples_per_domain},
      {"target_assignment", assignment_name(spec.target_assignment)},
      {"min_object_fraction", spec.min_object_fraction},
      {"max_object_fraction", spec.max_object_fraction},
      {"pixel_noise", spec.pixel_noise},
      {"palette_strength", spec.palette_strength},
      {"seed", spec.seed},
  };
}

void spec_from_json_value(const nlohmann::json& value, const std::string& where, SyntheticSpec& spec) {
  FieldReader r(value, where);
  r.read("num_classes", spec.num_classes);
  r.read("image_height", spec.image_height);
  r.read("image_width", spec.image_width);
  r.read("spurious_rho", spec.spurious_rho);
  r.read("num_domains", spec.num_domains);
  r.read("source_domain", spec.source_domain);
  r.read("samples_per_domain", spec.samples_per_domain);
  std::string assignment = assignment_name(spec.target_assignment);
  r.read("target_assignment", assignment);
  spec.target_assignment = parse_assignment(assignment);
  r.read("min_object_fraction", spec.min_object_fraction);
  r.read("max_object_fraction", spec.max_object_fraction);
  r.read("pixel_noise", spec.pixel_noise);
  r.read("palette_strength", spec.palette_strength);
  r.read("seed", spec.seed);
  r.finish();
  spec.validate();
}

}  // namespace detail

namespace {

std::string sample_stem(const Sample& s, std::size_t index) {
  return std::to_string(s.label) + "_" + std::to_string(index);
}

const std::vector<Sample>& split_part(const Split& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  return split.test;
}

std::vector<Sample>& split_part(Split& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  return split.test;
}

}  // namespace

std::string dataset_manifest(const SyntheticSpec& spec, const std::vector<DomainSplit>& splits) {
  nlohmann::json m;
  m["format"] = "align-synth";
  m["version"] = 1;
  m["seed"] = spec.seed;
  m["spec"] = detail::spec_to_json_value(spec);
  auto& domains = m["domains"] = nlohmann::json::array();
  for (const auto& d : splits) {
    nlohmann::json entry{{"id", d.domain}, {"source", d.domain == spec.source_domain}};
    for (const auto& name : kSplitNames) entry["counts"][name] = split_part(d.split, name).size();
    domains.push_back(entry);
  }
  return m.dump(2) + "\n";
}

void write_dataset(const std::filesystem::path& root, const SyntheticSpec& spec,
                   const std::vector<DomainSplit>& splits) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  for (const auto& d : splits) {
    for (const auto& name : kSplitNames) {
      const fs::path dir = root / std::to_string(d.domain) / name;
      fs::create_directories(dir);
      const auto& samples = split_part(d.split, name);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto stem = sample_stem(samples[i], i);
        write_pnm(dir / (stem + ".ppm"), samples[i].image);
        write_pnm(dir / (stem + "_mask.pgm"), samples[i].gt_mask);
      }
    }
  }
  std::ofstream os(root / "manifest.json", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest under " + root.string());
  os << dataset_manifest(spec, splits);
}

const DomainSplit& LoadedDataset::domain(int id) const {
  for (const auto& d : splits) {
    if (d.domain == id) return d;
  }
  throw std::out_of_range("dataset has no domain " + std::to_string(id));
}

LoadedDataset read_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("missing manifest: " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("manifest is not valid JSON: " + std::string(e.what()));
  }
  if (m.value("format", "") != "align-synth") throw std::runtime_error("manifest has wrong format tag");

  LoadedDataset out;
  detail::spec_from_json_value(m.at("spec"), "manifest.spec", out.spec);
  for (const auto& entry : m.at("domains")) {
    DomainSplit d;
    d.domain = entry.at("id").get<int>();
    for (const auto& name : kSplitNames) {
      const auto count = entry.at("counts").at(name).get<std::size_t>();
      const fs::path dir = root / std::to_string(d.domain) / name;
      auto& part = split_part(d.split, name);
      part.reserve(count);
      // The label prefix is unknown until we find the file.
      std::vector<fs::path> images(count);
      if (count > 0) {
        if (!fs::is_directory(dir)) throw std::runtime_error("missing split directory " + dir.string());
        for (const auto& file : fs::directory_iterator(dir)) {
          const std::string stem = file.path().stem().string();
          if (file.path().extension() != ".ppm") continue;
          const auto sep = stem.find('_');
          if (sep == std::string::npos) continue;
          const auto index = std::stoul(stem.substr(sep + 1));
          if (index >= count) throw std::runtime_error("unexpected sample file " + file.path().string());
          images[index] = file.path();
        }
      }
      for (std::size_t i = 0; i < count; ++i) {
        if (images[i].empty()) {
          throw std::runtime_error("sample " + std::to_string(i) + " missing in " + dir.string());
        }
        Sample s;
        s.domain = d.domain;
        s.palette = -1;
        const std::string stem = images[i].stem().string();
        s.label = std::stoll(stem.substr(0, stem.find('_')));
        s.image = read_pnm(images[i]);
        s.gt_mask = read_pnm(dir / (stem + "_mask.pgm"));
        if (s.image.dim(0) != 3 || s.gt_mask.dim(0) != 1) {
          throw std::runtime_error("sample " + images[i].string() + " has the wrong channel count");
        }
        part.push_back(std::move(s));
      }
    }
    out.splits.push_back(std::move(d));
  }
  return out;
}

std::string spec_to_json(const SyntheticSpec& spec) { return detail::spec_to_json_value(spec).dump(2); }

SyntheticSpec spec_from_json(const std::string& text) {
  SyntheticSpec spec;
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("spec is not valid JSON: " + std::string(e.what()));
  }
  detail::spec_from_json_value(value, "spec", spec);
  return spec;
}

}  // namespace align
