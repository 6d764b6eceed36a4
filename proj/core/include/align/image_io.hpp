#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "align/tensor.hpp"

namespace align {

/// Malformed or truncated PNM data. `offset` is the byte position where
/// parsing stopped.
class PnmError : public std::runtime_error {
 public:
  PnmError(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }
  const std::string& reason() const { return reason_; }

 private:
  std::string reason_;
  std::size_t offset_;
};

/// round(255 * v) with halves rounded up; `v` must lie in [0,1].
std::uint8_t quantize_unit(double v);

/// Binary PNM bytes for a [C,H,W] tensor with values in [0,1]: P5 when C=1,
/// P6 when C=3.
std::vector<std::uint8_t> encode_pnm(const Tensor& image);
/// Parses binary P5/P6 with maxval 255 into a [C,H,W] tensor in [0,1].
Tensor decode_pnm(std::span<const std::uint8_t> bytes);

void write_pnm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pnm(const std::filesystem::path& path);

}  // namespace align
