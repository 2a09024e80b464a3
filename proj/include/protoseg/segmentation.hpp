#pragma once

#include <algorithm>
#include <bit>
#include <limits>
#include <optional>
#include <string>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "embedding.hpp"
#include "error.hpp"
#include "kmeans.hpp"
#include "mask.hpp"
#include "parallel.hpp"
#include "prototypes.hpp"

namespace protoseg {

enum class QueryMode { direct, cluster_then_query };

inline QueryMode parse_query_mode(const std::string& s) {
  if (s == "dq") return QueryMode::direct;
  if (s == "cq") return QueryMode::cluster_then_query;
  throw ConfigError("unknown query mode '" + s + "' (expected dq|cq)");
}

inline std::string to_string(QueryMode m) { return m == QueryMode::direct ? "dq" : "cq"; }

struct CqConfig {
  double gamma = 5.0;
  std::size_t restarts = 8;
  std::uint64_t seed = 0;
  LloydOptions lloyd{};

  void validate() const {
    if (!(gamma >= 1.0)) throw ConfigError("gamma must be >= 1");
    if (restarts < 1) throw ConfigError("restarts must be >= 1");
  }
};

/// Index of the prototype with maximal cosine similarity; ties go to the
/// lowest prototype id.
template <class T>
std::size_t nearest_prototype(std::span<const T> v, const PrototypeDictionary& dict) {
  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < dict.entries.size(); ++p) {
    const double s = cosine_similarity(v, std::span<const double>(dict.entries[p].centroid));
    if (s > best_sim) {
      best_sim = s;
      best = p;
    }
  }
  return best;
}

namespace detail {
inline void check_query(const EmbeddingGrid& grid, const PrototypeDictionary& dict) {
  if (dict.entries.empty()) throw NumericError("prototype dictionary is empty");
  if (grid.dim != dict.dim) throw DimensionMismatchError(grid.dim, dict.dim);
  grid.validate();
}
}  // namespace detail

/// Direct-Query: every cell takes the class of its nearest prototype.
inline LabelGrid direct_query(const EmbeddingGrid& grid, const PrototypeDictionary& dict) {
  detail::check_query(grid, dict);
  LabelGrid out(grid.height, grid.width, dict.label_map);
  parallel_for(
      grid.cell_count(),
      [&](std::size_t i) {
        out.labels[i] = dict.entries[nearest_prototype(grid.cells().row(i), dict)].class_id;
      },
      64);
  return out;
}

template <class Units>
std::size_t distinct_tissue_count(const LabelRaster<Units>& raster) {
  return std::set<ClassId>(raster.labels.begin(), raster.labels.end()).size();
}

/// Number of bit-distinct cell vectors in a grid.
inline std::size_t distinct_cell_count(const EmbeddingGrid& grid) {
  std::vector<std::span<const float>> rows;
  rows.reserve(grid.cell_count());
  for (std::size_t i = 0; i < grid.cell_count(); ++i) rows.push_back(grid.cells().row(i));
  auto bits_less = [](std::span<const float> a, std::span<const float> b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), [](float x, float y) {
      return std::bit_cast<std::uint32_t>(x) < std::bit_cast<std::uint32_t>(y);
    });
  };
  std::sort(rows.begin(), rows.end(), bits_less);
  std::size_t distinct = rows.empty() ? 0 : 1;
  for (std::size_t i = 1; i < rows.size(); ++i) distinct += bits_less(rows[i - 1], rows[i]) ? 1 : 0;
  return distinct;
}

/// Number of groups Cluster-then-Query uses: min(floor(gamma * d), distinct
/// cell vectors), at least 1.
inline std::size_t cq_cluster_count(const EmbeddingGrid& grid, std::size_t d, double gamma) {
  const auto scaled = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(d)));
  return std::max<std::size_t>(1, std::min(scaled, distinct_cell_count(grid)));
}

/// Cluster-then-Query. d is the number of distinct classes Direct-Query
/// finds; the cells are clustered into min(gamma*d, distinct cells) groups and
/// every cell takes the class of its group centroid's nearest prototype.
inline LabelGrid cluster_then_query(const EmbeddingGrid& grid, const PrototypeDictionary& dict, const CqConfig& cfg = {}) {
  cfg.validate();
  const LabelGrid dq = direct_query(grid, dict);
  const std::size_t m = cq_cluster_count(grid, distinct_tissue_count(dq), cfg.gamma);
  const auto groups = cluster(grid.cells(), m, ClusterOptions{cfg.restarts, cfg.seed, cfg.lloyd});

  std::vector<std::optional<ClassId>> group_class(groups.k);
  for (std::size_t j = 0; j < groups.k; ++j) {
    if (groups.cluster_sizes[j] == 0) continue;
    const auto c = groups.centroid(j);
    if (!(squared_norm(c) > 0.0)) continue;  // antipodal members; fall back to per-cell labels
    group_class[j] = dict.entries[nearest_prototype(c, dict)].class_id;
  }
  LabelGrid out(grid.height, grid.width, dict.label_map);
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    const auto& g = group_class[groups.assignments[i]];
    out.labels[i] = g ? *g : dq.labels[i];
  }
  return out;
}

inline LabelGrid query(const EmbeddingGrid& grid, const PrototypeDictionary& dict, QueryMode mode, const CqConfig& cfg = {}) {
  return mode == QueryMode::direct ? direct_query(grid, dict) : cluster_then_query(grid, dict, cfg);
}

}  // namespace protoseg
