#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "embedding.hpp"
#include "error.hpp"
#include "labels.hpp"
#include "rng.hpp"

namespace protoseg {

/// Provenance of one embedded patch. The embedding itself lives in the
/// owning PatchEmbeddingSet's matrix at the same row.
struct PatchRecord {
  std::uint64_t patch_id = 0;
  std::string source_image_id;
  std::uint32_t origin_x = 0;
  std::uint32_t origin_y = 0;
  std::optional<std::map<ClassId, double>> gt_proportions;
  std::optional<std::string> thumbnail;

  bool operator==(const PatchRecord&) const = default;
};

struct PatchEmbeddingSet {
  std::uint32_t dim = 0;
  std::vector<PatchRecord> records;
  std::vector<float> embeddings;  // records.size() x dim, row-major

  std::size_t size() const { return records.size(); }

  std::span<const float> embedding(std::size_t i) const {
    return std::span<const float>(embeddings).subspan(i * dim, dim);
  }

  MatrixView<float> points() const { return {embeddings, records.size(), dim}; }

  void push_back(PatchRecord rec, std::span<const float> emb) {
    if (emb.size() != dim) throw DimensionMismatchError(emb.size(), dim);
    records.push_back(std::move(rec));
    embeddings.insert(embeddings.end(), emb.begin(), emb.end());
  }

  /// Row index of a patch id; throws if absent.
  std::size_t index_of(std::uint64_t patch_id) const {
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].patch_id == patch_id) return i;
    }
    throw ConfigError("unknown patch id " + std::to_string(patch_id));
  }

  void validate() const {
    if (dim < 1) throw NumericError("embedding dimension must be >= 1");
    if (embeddings.size() != records.size() * dim) throw DimensionMismatchError(embeddings.size(), records.size() * dim);
    if (!all_finite(std::span<const float>(embeddings))) throw NumericError("non-finite embedding value");
    std::unordered_set<std::uint64_t> ids;
    for (const auto& r : records) {
      if (!ids.insert(r.patch_id).second) throw NumericError("duplicate patch id " + std::to_string(r.patch_id));
      if (r.gt_proportions) {
        double sum = 0.0;
        for (const auto& [cls, p] : *r.gt_proportions) {
          if (!(p >= 0.0 && p <= 1.0)) throw NumericError("gt proportion outside [0,1]");
          sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-6) throw NumericError("gt proportions of patch " + std::to_string(r.patch_id) + " do not sum to 1");
      }
    }
  }

  bool operator==(const PatchEmbeddingSet&) const = default;
};

/// L2-normalizes every embedding whose norm is not already 1 within 1e-6.
/// Rows that are already unit are left bit-identical.
inline void normalize_rows(PatchEmbeddingSet& set) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::span<float> row(set.embeddings.data() + i * set.dim, set.dim);
    const double n2 = squared_norm(std::span<const float>(row));
    if (std::abs(std::sqrt(n2) - 1.0) <= 1e-6) continue;
    const auto unit = l2_normalize(std::span<const float>(row));
    std::copy(unit.begin(), unit.end(), row.begin());
  }
}

/// Uniform sample of m records without replacement (partial Fisher-Yates over
/// row indices). Selected rows keep their original relative order.
inline PatchEmbeddingSet subsample_patches(const PatchEmbeddingSet& set, std::size_t m, std::uint64_t seed) {
  if (m < 1 || m > set.size()) {
    throw ConfigError("subsample size " + std::to_string(m) + " outside [1, " + std::to_string(set.size()) + "]");
  }
  std::vector<std::size_t> idx(set.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + rng.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  PatchEmbeddingSet out;
  out.dim = set.dim;
  out.records.reserve(m);
  out.embeddings.reserve(m * set.dim);
  for (std::size_t i : idx) out.push_back(set.records[i], set.embedding(i));
  return out;
}

}  // namespace protoseg
