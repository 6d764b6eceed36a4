#include "align/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace align {

namespace {

constexpr char kMagic[8] = {'A', 'L', 'I', 'G', 'N', 'C', 'K', 'P'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(const unsigned char* bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header;
  header["format"] = "align-checkpoint";
  header["version"] = 1;
  header["meta"] = nlohmann::json::parse(checkpoint.meta_json);
  auto& entries = header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : checkpoint.tensors) {
    entries.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.value.numel());
  }
  header["count"] = offset;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof kMagic);
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : checkpoint.tensors) {
    for (double v : t.value.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw std::runtime_error("not an align checkpoint (bad magic): " + path.string());
  }
  const auto header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw std::runtime_error("checkpoint header truncated: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  if (header.value("format", "") != "align-checkpoint") throw std::runtime_error("checkpoint header has wrong format tag");

  const std::size_t payload_start = 16 + header_len;
  const std::uint64_t count = header.at("count").get<std::uint64_t>();
  if (bytes.size() - payload_start != count * 8) {
    std::ostringstream os;
    os << "checkpoint payload has " << (bytes.size() - payload_start) << " bytes, header declares " << count * 8;
    throw std::runtime_error(os.str());
  }
  Checkpoint out;
  out.meta_json = header.at("meta").dump();
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto n = static_cast<std::uint64_t>(numel_of(shape));
    if (offset + n > count) throw std::runtime_error("checkpoint entry '" + entry.at("name").get<std::string>() + "' overruns payload");
    std::vector<double> values(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      values[i] = std::bit_cast<double>(get_u64(bytes.data() + payload_start + 8 * (offset + i)));
    }
    out.tensors.push_back({entry.at("name").get<std::string>(), make_tensor(std::move(shape), std::move(values))});
  }
  return out;
}

std::string layout_diff(const StateDict& expected, const StateDict& actual) {
  std::ostringstream os;
  for (const auto& e : expected) {
    const NamedTensor* match = nullptr;
    for (const auto& a : actual)
      if (a.name == e.name) match = &a;
    if (!match) {
      os << "- " << e.name << " " << shape_str(e.value.shape()) << " (missing)\n";
    } else if (match->value.shape() != e.value.shape()) {
      os << "~ " << e.name << " expected " << shape_str(e.value.shape()) << " found " << shape_str(match->value.shape())
         << "\n";
    }
  }
  for (const auto& a : actual) {
    bool known = false;
    for (const auto& e : expected) known = known || e.name == a.name;
    if (!known) os << "+ " << a.name << " " << shape_str(a.value.shape()) << " (unexpected)\n";
  }
  return os.str();
}

StateDict prefixed(const StateDict& state, const std::string& prefix) {
  StateDict out;
  for (const auto& t : state) out.push_back({prefix + "." + t.name, t.value});
  return out;
}

StateDict strip_prefix(const StateDict& state, const std::string& prefix) {
  StateDict out;
  const std::string p = prefix + ".";
  for (const auto& t : state)
    if (t.name.rfind(p, 0) == 0) out.push_back({t.name.substr(p.size()), t.value});
  return out;
}

}  // namespace align
