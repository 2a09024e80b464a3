#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "binary_io.hpp"
#include "embedding.hpp"
#include "error.hpp"
#include "kmeans.hpp"
#include "labels.hpp"
#include "patches.hpp"
#include "rng.hpp"

namespace protoseg {

enum class SamplingStrategy { central, equidistant };

inline std::string to_string(SamplingStrategy s) { return s == SamplingStrategy::central ? "central" : "equidistant"; }

inline SamplingStrategy parse_sampling_strategy(const std::string& s) {
  if (s == "central") return SamplingStrategy::central;
  if (s == "equidistant") return SamplingStrategy::equidistant;
  throw ConfigError("unknown sampling strategy '" + s + "' (expected central|equidistant)");
}

namespace detail {

struct RankedMember {
  double distance;
  std::uint64_t patch_id;
  std::size_t row;
};

// Members of one cluster ordered by (distance to centroid, patch id).
inline std::vector<RankedMember> ranked_members(const PatchEmbeddingSet& set, const ClusteringResult& result,
                                                std::size_t cluster_index) {
  if (cluster_index >= result.k) {
    throw ConfigError("cluster index " + std::to_string(cluster_index) + " out of range (k=" + std::to_string(result.k) + ")");
  }
  if (set.size() != result.point_count()) throw DimensionMismatchError(set.size(), result.point_count());
  if (set.dim != result.dim) throw DimensionMismatchError(set.dim, result.dim);
  std::vector<RankedMember> members;
  const auto centroid = result.centroid(cluster_index);
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (result.assignments[i] != cluster_index) continue;
    members.push_back({squared_euclidean(set.embedding(i), centroid), set.records[i].patch_id, i});
  }
  if (members.empty()) throw NumericError("cluster " + std::to_string(cluster_index) + " is empty");
  std::sort(members.begin(), members.end(), [](const RankedMember& a, const RankedMember& b) {
    return std::tie(a.distance, a.patch_id) < std::tie(b.distance, b.patch_id);
  });
  return members;
}

}  // namespace detail

/// The min(t, |cluster|) members closest to the centroid, nearest first.
inline std::vector<std::uint64_t> central_sample(const PatchEmbeddingSet& set, const ClusteringResult& result,
                                                 std::size_t cluster_index, std::size_t t = 10) {
  if (t < 1) throw ConfigError("t must be >= 1");
  const auto members = detail::ranked_members(set, result, cluster_index);
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < std::min(t, members.size()); ++i) out.push_back(members[i].patch_id);
  return out;
}

/// Splits the distance-sorted members into min(t, |cluster|) contiguous strata
/// of near-equal size ([i*m/t, (i+1)*m/t)) and draws one member uniformly from
/// each, centre to border. The stream is derive_seed(seed, cluster_index).
inline std::vector<std::uint64_t> equidistant_sample(const PatchEmbeddingSet& set, const ClusteringResult& result,
                                                     std::size_t cluster_index, std::size_t t, std::uint64_t seed) {
  if (t < 1) throw ConfigError("t must be >= 1");
  const auto members = detail::ranked_members(set, result, cluster_index);
  const std::size_t m = members.size();
  const std::size_t strata = std::min(t, m);
  SplitMix64 rng(derive_seed(seed, cluster_index));
  std::vector<std::uint64_t> out;
  for (std::size_t s = 0; s < strata; ++s) {
    const std::size_t begin = s * m / strata;
    const std::size_t end = (s + 1) * m / strata;
    out.push_back(members[begin + rng.below(end - begin)].patch_id);
  }
  return out;
}

inline std::vector<std::uint64_t> sample_representatives(const PatchEmbeddingSet& set, const ClusteringResult& result,
                                                         std::size_t cluster_index, std::size_t t,
                                                         SamplingStrategy strategy, std::uint64_t seed) {
  return strategy == SamplingStrategy::central ? central_sample(set, result, cluster_index, t)
                                               : equidistant_sample(set, result, cluster_index, t, seed);
}

/// A cluster's label: a tissue class, or nullopt for a dropped mixture.
using Decision = std::optional<ClassId>;

struct ClusterVerdict {
  std::size_t cluster_index = 0;
  Decision decision;
  std::string decided_by = "oracle";  // "oracle" | "human"
  std::vector<std::uint64_t> inspected_patch_ids;

  bool dropped() const { return !decision.has_value(); }
  bool operator==(const ClusterVerdict&) const = default;
};

/// Simulated pathologist: averages the inspected patches' ground-truth class
/// proportions and returns the class whose mean strictly exceeds
/// `threshold`, otherwise drops the cluster. Per-class values are summed in
/// sorted order, so the result does not depend on the order of `inspected`.
inline Decision simulated_label(const std::vector<PatchRecord>& inspected, const TissueLabelMap& label_map,
                                double threshold = 0.8) {
  if (inspected.empty()) throw ConfigError("no inspected patches to label");
  std::vector<std::vector<double>> per_class(label_map.size());
  for (const auto& rec : inspected) {
    if (!rec.gt_proportions) throw ConfigError("patch " + std::to_string(rec.patch_id) + " has no ground-truth proportions");
    std::vector<double> row(label_map.size(), 0.0);
    for (const auto& [cls, p] : *rec.gt_proportions) {
      if (!label_map.contains(cls)) throw ConfigError("ground-truth class " + std::to_string(cls) + " not in label map");
      row[cls] = p;
    }
    for (std::size_t c = 0; c < row.size(); ++c) per_class[c].push_back(row[c]);
  }
  Decision best;
  double best_mean = -1.0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    auto& v = per_class[c];
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(v.size());
    if (mean > threshold && mean > best_mean) {
      best_mean = mean;
      best = static_cast<ClassId>(c);
    }
  }
  return best;
}

struct OracleOptions {
  std::size_t t = 10;
  SamplingStrategy strategy = SamplingStrategy::central;
  double threshold = 0.8;
  std::uint64_t seed = 0;
  bool whole_cluster = false;  // rate all members instead of the sampled ones
};

/// Representative patch ids per cluster; empty clusters get an empty list.
inline std::vector<std::vector<std::uint64_t>> sample_all_representatives(const PatchEmbeddingSet& set,
                                                                          const ClusteringResult& result, std::size_t t,
                                                                          SamplingStrategy strategy, std::uint64_t seed) {
  std::vector<std::vector<std::uint64_t>> reps(result.k);
  for (std::size_t j = 0; j < result.k; ++j) {
    if (result.cluster_sizes[j] == 0) continue;
    reps[j] = sample_representatives(set, result, j, t, strategy, seed);
  }
  return reps;
}

/// Oracle verdict for every cluster, given each cluster's inspected ids.
inline std::vector<ClusterVerdict> oracle_verdicts(const PatchEmbeddingSet& set, const ClusteringResult& result,
                                                   const std::vector<std::vector<std::uint64_t>>& representatives,
                                                   const TissueLabelMap& label_map, const OracleOptions& opt = {}) {
  if (representatives.size() != result.k) throw ConfigError("need one representative list per cluster");
  std::unordered_map<std::uint64_t, std::size_t> row_of;
  for (std::size_t i = 0; i < set.size(); ++i) row_of[set.records[i].patch_id] = i;
  std::vector<ClusterVerdict> out;
  for (std::size_t j = 0; j < result.k; ++j) {
    ClusterVerdict v;
    v.cluster_index = j;
    v.decided_by = "oracle";
    std::vector<PatchRecord> inspected;
    if (opt.whole_cluster) {
      for (std::size_t i = 0; i < set.size(); ++i) {
        if (result.assignments[i] == j) inspected.push_back(set.records[i]);
      }
    } else {
      v.inspected_patch_ids = representatives[j];
      for (auto id : representatives[j]) {
        auto it = row_of.find(id);
        if (it == row_of.end()) throw ConfigError("representative patch " + std::to_string(id) + " not in the patch set");
        inspected.push_back(set.records[it->second]);
      }
    }
    if (!inspected.empty()) v.decision = simulated_label(inspected, label_map, opt.threshold);
    out.push_back(std::move(v));
  }
  return out;
}

struct PrototypeEntry {
  std::uint32_t prototype_id = 0;
  ClassId class_id = 0;
  std::size_t source_cluster = 0;
  std::size_t cluster_size = 0;
  std::vector<double> centroid;  // unit norm

  bool operator==(const PrototypeEntry&) const = default;
};

struct PrototypeDictionary {
  std::uint32_t dim = 0;
  std::vector<PrototypeEntry> entries;
  TissueLabelMap label_map;

  std::size_t size() const { return entries.size(); }
  bool operator==(const PrototypeDictionary&) const = default;

  void validate() const {
    if (entries.empty()) throw NumericError("prototype dictionary is empty");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (e.prototype_id != i) throw NumericError("prototype ids must be 0..l-1 in order");
      if (e.centroid.size() != dim) throw DimensionMismatchError(e.centroid.size(), dim);
      if (!label_map.contains(e.class_id)) throw NumericError("prototype class not in label map");
      const double norm = std::sqrt(squared_norm(std::span<const double>(e.centroid)));
      if (std::abs(norm - 1.0) > 1e-6) throw NumericError("prototype centroid is not unit-norm");
    }
  }
};

/// One entry per tissue verdict, in cluster order, carrying the cluster's
/// re-normalized centroid. Dropped clusters contribute nothing.
inline PrototypeDictionary build_dictionary(const ClusteringResult& result, std::vector<ClusterVerdict> verdicts,
                                            const TissueLabelMap& label_map) {
  if (verdicts.size() != result.k) throw ConfigError("need exactly one verdict per cluster");
  std::sort(verdicts.begin(), verdicts.end(),
            [](const ClusterVerdict& a, const ClusterVerdict& b) { return a.cluster_index < b.cluster_index; });
  PrototypeDictionary dict;
  dict.dim = static_cast<std::uint32_t>(result.dim);
  dict.label_map = label_map;
  for (std::size_t j = 0; j < verdicts.size(); ++j) {
    const auto& v = verdicts[j];
    if (v.cluster_index != j) throw ConfigError("verdicts must cover each cluster exactly once");
    if (v.dropped()) continue;
    if (!label_map.contains(*v.decision)) throw ConfigError("verdict class " + std::to_string(*v.decision) + " not in label map");
    PrototypeEntry e;
    e.prototype_id = static_cast<std::uint32_t>(dict.entries.size());
    e.class_id = *v.decision;
    e.source_cluster = j;
    e.cluster_size = result.cluster_sizes[j];
    e.centroid = l2_normalize(result.centroid(j));
    dict.entries.push_back(std::move(e));
  }
  if (dict.entries.empty()) throw NumericError("every cluster was dropped; the prototype dictionary would be empty");
  return dict;
}

inline constexpr int kDictionaryVersion = 1;

inline std::string encode_dictionary(const PrototypeDictionary& dict) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : dict.entries) {
    entries.push_back({{"prototype_id", e.prototype_id},
                       {"class_id", e.class_id},
                       {"source_cluster", e.source_cluster},
                       {"cluster_size", e.cluster_size},
                       {"centroid", e.centroid}});
  }
  nlohmann::json j = {{"version", kDictionaryVersion},
                      {"dim", dict.dim},
                      {"label_map", to_json_value(dict.label_map)},
                      {"entries", std::move(entries)}};
  return j.dump(1) + "\n";
}

inline PrototypeDictionary decode_dictionary(const std::string& text, const std::string& what = "dictionary") {
  PrototypeDictionary dict;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("version").get<int>() != kDictionaryVersion) throw IoError(what + ": unsupported dictionary version");
    dict.dim = j.at("dim").get<std::uint32_t>();
    dict.label_map = label_map_from_json(j.at("label_map"));
    for (const auto& e : j.at("entries")) {
      PrototypeEntry p;
      p.prototype_id = e.at("prototype_id").get<std::uint32_t>();
      p.class_id = e.at("class_id").get<ClassId>();
      p.source_cluster = e.at("source_cluster").get<std::size_t>();
      p.cluster_size = e.at("cluster_size").get<std::size_t>();
      p.centroid = e.at("centroid").get<std::vector<double>>();
      dict.entries.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(what + ": malformed dictionary: " + e.what());
  }
  try {
    dict.validate();
  } catch (const NumericError& e) {
    throw IoError(what + ": " + e.what());
  }
  return dict;
}

inline void save_dictionary(const PrototypeDictionary& dict, const std::filesystem::path& path) {
  dict.validate();
  write_file_bytes(path, encode_dictionary(dict));
}

inline PrototypeDictionary load_dictionary(const std::filesystem::path& path) {
  return decode_dictionary(read_file_text(path), path.string());
}

inline nlohmann::json to_json_value(const ClusterVerdict& v) {
  nlohmann::json j = {{"cluster", v.cluster_index},
                      {"decision", v.dropped() ? "drop" : "tissue"},
                      {"decided_by", v.decided_by},
                      {"inspected", v.inspected_patch_ids}};
  if (!v.dropped()) j["class_id"] = *v.decision;
  return j;
}

inline ClusterVerdict verdict_from_json(const nlohmann::json& j) {
  ClusterVerdict v;
  v.cluster_index = j.at("cluster").get<std::size_t>();
  const auto decision = j.at("decision").get<std::string>();
  if (decision == "tissue") {
    v.decision = j.at("class_id").get<ClassId>();
  } else if (decision != "drop") {
    throw ConfigError("verdict decision must be 'tissue' or 'drop'");
  }
  v.decided_by = j.value("decided_by", std::string("oracle"));
  v.inspected_patch_ids = j.value("inspected", std::vector<std::uint64_t>{});
  return v;
}

inline std::string encode_verdicts(const std::vector<ClusterVerdict>& verdicts) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : verdicts) arr.push_back(to_json_value(v));
  return nlohmann::json{{"verdicts", std::move(arr)}}.dump(1) + "\n";
}

inline std::vector<ClusterVerdict> decode_verdicts(const std::string& text) {
  try {
    std::vector<ClusterVerdict> out;
    const auto doc = nlohmann::json::parse(text);
    for (const auto& v : doc.at("verdicts")) out.push_back(verdict_from_json(v));
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed verdicts JSON: ") + e.what());
  }
}

}  // namespace protoseg
