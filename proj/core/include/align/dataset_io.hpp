#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "align/synth.hpp"

namespace align {

// Layout under a dataset root:
//   manifest.json
//   <domain>/<split>/<label>_<index>.ppm
//   <domain>/<split>/<label>_<index>_mask.pgm
// where <index> is the sample's position within its split.

inline const std::vector<std::string> kSplitNames{"train", "val", "test"};

/// Deterministic manifest text: format tag, spec, split seed and per-domain
/// per-split counts.
std::string dataset_manifest(const SyntheticSpec& spec, const std::vector<DomainSplit>& splits);

void write_dataset(const std::filesystem::path& root, const SyntheticSpec& spec,
                   const std::vector<DomainSplit>& splits);

struct LoadedDataset {
  SyntheticSpec spec;
  std::vector<DomainSplit> splits;

  const DomainSplit& domain(int id) const;
};

/// Reads a dataset written by write_dataset. Pixel values come back
/// quantized to multiples of 1/255; palettes are not stored and read as -1.
LoadedDataset read_dataset(const std::filesystem::path& root);

std::string spec_to_json(const SyntheticSpec& spec);
SyntheticSpec spec_from_json(const std::string& text);

}  // namespace align
