#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace protoseg {

using ClassId = std::uint16_t;

/// Ordered tissue vocabulary; a class id is its position. "mixture" is
/// reserved for dropped clusters and may not name a class.
class TissueLabelMap {
 public:
  TissueLabelMap() = default;
  explicit TissueLabelMap(std::vector<std::string> names) : names_(std::move(names)) { validate(); }

  std::size_t size() const { return names_.size(); }
  bool contains(std::size_t id) const { return id < names_.size(); }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const TissueLabelMap&) const = default;

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& n : names_) {
      if (n.empty()) throw ConfigError("empty class name in label map");
      if (n == "mixture") throw ConfigError("'mixture' is reserved and cannot be a class name");
      if (!seen.insert(n).second) throw ConfigError("duplicate class name in label map: " + n);
    }
  }

 private:
  std::vector<std::string> names_;
};

inline nlohmann::json to_json_value(const TissueLabelMap& map) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < map.size(); ++i) arr.push_back({{"id", i}, {"name", map.name(i)}});
  return arr;
}

inline TissueLabelMap label_map_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("label map must be a JSON array");
  std::vector<std::string> names(j.size());
  std::vector<bool> filled(j.size(), false);
  for (const auto& e : j) {
    const auto id = e.at("id").get<std::size_t>();
    if (id >= names.size() || filled[id]) throw ConfigError("label map ids must be contiguous from 0");
    names[id] = e.at("name").get<std::string>();
    filled[id] = true;
  }
  return TissueLabelMap(std::move(names));
}

/// Default names for synthetic datasets.
inline TissueLabelMap default_label_map(std::size_t class_count) {
  static const char* const kNames[] = {"tumor", "stroma", "inflammatory", "necrosis", "other"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < class_count; ++i) {
    names.emplace_back(i < std::size(kNames) ? std::string(kNames[i]) : "tissue_" + std::to_string(i));
  }
  return TissueLabelMap(std::move(names));
}

}  // namespace protoseg
