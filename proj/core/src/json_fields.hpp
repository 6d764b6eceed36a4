#pragma once

#include <set>
#include <stdexcept>
#include <string>

#include "align/synth.hpp"
#include "json.hpp"

namespace align::detail {

/// Reads named members of a JSON object into existing defaults and rejects
/// members nobody asked for.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& object, std::string where) : object_(object), where_(std::move(where)) {
    if (!object_.is_object()) throw std::invalid_argument(where_ + ": expected a JSON object");
  }

  template <typename T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end()) return;
    try {
      target = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument(where_ + "." + key + ": wrong type (" + it->type_name() + ")");
    }
  }

  /// Nested object handled by `fn(sub_object, path)` when present.
  template <typename Fn>
  void nested(const char* key, Fn&& fn) {
    seen_.insert(key);
    auto it = object_.find(key);
    if (it != object_.end()) fn(*it, where_ + "." + key);
  }

  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
      if (!seen_.count(it.key())) throw std::invalid_argument(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const nlohmann::json& object_;
  std::string where_;
  std::set<std::string> seen_;
};

nlohmann::json spec_to_json_value(const SyntheticSpec& spec);
/// Overwrites the fields present in `value`; the result is validated.
void spec_from_json_value(const nlohmann::json& value, const std::string& where, SyntheticSpec& spec);

std::string assignment_name(TargetAssignment assignment);
TargetAssignment parse_assignment(const std::string& name);

}  // namespace align::detail
