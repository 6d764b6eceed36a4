#pragma once

#include <filesystem>
#include <string>

#include "align/models.hpp"

namespace align {

// On-disk layout:
//   8 bytes   magic "ALIGNCKP"
//   8 bytes   header length L, unsigned little-endian
//   L bytes   JSON header {"format","version","tensors":[{name,shape,offset}],"count","meta"}
//   payload   little-endian float64 values; `offset` counts values from payload start
struct Checkpoint {
  StateDict tensors;
  /// Free-form JSON object stored under "meta".
  std::string meta_json = "{}";
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Human-readable list of differences between the tensor layout `expected`
/// and `actual` (missing, unexpected, or reshaped entries). Empty when equal.
std::string layout_diff(const StateDict& expected, const StateDict& actual);

/// Prefixes every name in `state` with `prefix` + ".".
StateDict prefixed(const StateDict& state, const std::string& prefix);
/// Entries whose name starts with `prefix` + ".", with the prefix removed.
StateDict strip_prefix(const StateDict& state, const std::string& prefix);

}  // namespace align
