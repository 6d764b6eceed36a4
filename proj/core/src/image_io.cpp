#include "align/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace align {

PnmError::PnmError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " at byte " + std::to_string(offset)), reason_(what), offset_(offset) {}

std::uint8_t quantize_unit(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("pixel value " + std::to_string(v) + " outside [0,1]");
  return static_cast<std::uint8_t>(std::floor(255.0 * v + 0.5));
}

std::vector<std::uint8_t> encode_pnm(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw std::invalid_argument("encode_pnm: expected [1,H,W] or [3,H,W], got " + shape_str(image.shape()));
  }
  const auto c = image.dim(0);
  const auto h = image.dim(1);
  const auto w = image.dim(2);
  const std::string header = std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(w) + " " + std::to_string(h) +
                             "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + static_cast<std::size_t>(c * h * w));
  auto data = image.data();
  const auto plane = h * w;
  for (std::int64_t p = 0; p < plane; ++p) {
    for (std::int64_t ch = 0; ch < c; ++ch) out.push_back(quantize_unit(data[ch * plane + p]));
  }
  return out;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size()) throw PnmError(std::string("truncated header, expected ") + what, pos_);
    if (!std::isdigit(bytes_[pos_])) throw PnmError(std::string("malformed header, expected ") + what, pos_);
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000) throw PnmError(std::string("header value too large for ") + what, pos_);
      ++pos_;
    }
    return v;
  }

  std::size_t pos_ = 0;
  std::span<const std::uint8_t> bytes_;
};

}  // namespace

Tensor decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2) throw PnmError("truncated magic", bytes.size());
  if (bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) throw PnmError("unsupported magic (want P5 or P6)", 0);
  const std::int64_t c = bytes[1] == '5' ? 1 : 3;
  HeaderReader r(bytes);
  r.pos_ = 2;
  const long w = r.number("width");
  const long h = r.number("height");
  const long maxval = r.number("maxval");
  if (w <= 0 || h <= 0) throw PnmError("image dimensions must be positive", r.pos_);
  if (maxval != 255) throw PnmError("only maxval 255 is supported, got " + std::to_string(maxval), r.pos_);
  if (r.pos_ >= bytes.size() || !std::isspace(bytes[r.pos_])) {
    throw PnmError("missing whitespace after maxval", r.pos_);
  }
  const std::size_t start = r.pos_ + 1;
  const std::size_t need = static_cast<std::size_t>(c * h * w);
  if (bytes.size() - start < need) {
    throw PnmError("truncated payload: need " + std::to_string(need) + " bytes, have " +
                       std::to_string(bytes.size() - start),
                   bytes.size());
  }
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<double> data(need);
  for (std::int64_t p = 0; p < plane; ++p) {
    for (std::int64_t ch = 0; ch < c; ++ch) data[ch * plane + p] = bytes[start + p * c + ch] / 255.0;
  }
  return Tensor::from_data({c, h, w}, std::move(data));
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_pnm(image);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_pnm(bytes);
  } catch (const PnmError& e) {
    throw PnmError(path.string() + ": " + e.reason(), e.offset());
  }
}

}  // namespace align
