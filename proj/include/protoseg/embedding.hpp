#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace protoseg {

using EmbeddingVector = std::vector<float>;

// Reductions below accumulate in double over four lanes (element i goes to
// lane i % 4, lanes combined as (l0 + l1) + (l2 + l3)). The order is fixed,
// so results are bit-reproducible regardless of caller or thread schedule.

template <class A, class B>
double dot(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw DimensionMismatchError(a.size(), b.size());
  double l0 = 0, l1 = 0, l2 = 0, l3 = 0;
  const std::size_t n = a.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    l0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    l1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    l2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    l3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
  }
  if (i < n) l0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  if (i + 1 < n) l1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
  if (i + 2 < n) l2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
  return (l0 + l1) + (l2 + l3);
}

template <class A>
double squared_norm(std::span<const A> a) {
  return dot(a, a);
}

template <class A, class B>
double squared_euclidean(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw DimensionMismatchError(a.size(), b.size());
  double l0 = 0, l1 = 0, l2 = 0, l3 = 0;
  const std::size_t n = a.size();
  auto sq = [&](std::size_t j) {
    const double d = static_cast<double>(a[j]) - static_cast<double>(b[j]);
    return d * d;
  };
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    l0 += sq(i);
    l1 += sq(i + 1);
    l2 += sq(i + 2);
    l3 += sq(i + 3);
  }
  if (i < n) l0 += sq(i);
  if (i + 1 < n) l1 += sq(i + 1);
  if (i + 2 < n) l2 += sq(i + 2);
  return (l0 + l1) + (l2 + l3);
}

/// Cosine similarity. Throws ZeroNormError rather than returning 0 for a
/// zero vector.
template <class A, class B>
double cosine_similarity(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw DimensionMismatchError(a.size(), b.size());
  const double na = squared_norm(a);
  const double nb = squared_norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw ZeroNormError();
  const double c = dot(a, b) / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

template <class T>
std::vector<T> l2_normalize(std::span<const T> a) {
  const double norm = std::sqrt(squared_norm(a));
  if (!(norm > 0.0)) throw ZeroNormError();
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<T>(static_cast<double>(a[i]) / norm);
  return out;
}

template <class T>
bool all_finite(std::span<const T> a) {
  return std::all_of(a.begin(), a.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
}

struct ContrastiveConfig {
  double temperature = 0.5;
};

/// NT-Xent / InfoNCE loss for one anchor:
///   -log( exp(sim(s,t+)/tau) / (exp(sim(s,t+)/tau) + sum_k exp(sim(s,t-_k)/tau)) )
/// with cosine similarity. Logits are shifted by their maximum before
/// exponentiation. Empty `negatives` gives exactly 0.
template <class T>
double nt_xent_loss(std::span<const T> anchor, std::span<const T> positive,
                    std::span<const std::vector<T>> negatives, const ContrastiveConfig& cfg = {}) {
  if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be positive");
  std::vector<double> logits;
  logits.reserve(negatives.size() + 1);
  logits.push_back(cosine_similarity(anchor, positive) / cfg.temperature);
  for (const auto& neg : negatives) {
    logits.push_back(cosine_similarity(anchor, std::span<const T>(neg)) / cfg.temperature);
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - top);
  const double loss = -(logits.front() - top) + std::log(denom);
  if (!std::isfinite(loss)) throw NumericError("non-finite contrastive loss");
  return std::max(loss, 0.0);
}

/// Read-only row-major matrix view, one embedding per row.
template <class T>
struct MatrixView {
  std::span<const T> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  MatrixView() = default;
  MatrixView(std::span<const T> d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {
    if (d.size() != r * c) throw DimensionMismatchError(d.size(), r * c);
  }

  std::span<const T> row(std::size_t i) const { return data.subspan(i * cols, cols); }
};

/// Dense height x width grid of dim-dimensional embeddings (a "semantic
/// vector map"), row-major by cell, cell-contiguous.
struct EmbeddingGrid {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;

  EmbeddingGrid() = default;
  EmbeddingGrid(std::uint32_t h, std::uint32_t w, std::uint32_t d)
      : height(h), width(w), dim(d), data(static_cast<std::size_t>(h) * w * d, 0.0f) {}

  std::size_t cell_count() const { return static_cast<std::size_t>(height) * width; }

  std::span<const float> cell(std::size_t r, std::size_t c) const {
    return std::span<const float>(data).subspan((r * width + c) * dim, dim);
  }
  std::span<float> cell(std::size_t r, std::size_t c) {
    return std::span<float>(data).subspan((r * width + c) * dim, dim);
  }

  MatrixView<float> cells() const { return {data, cell_count(), dim}; }

  void validate() const {
    if (height < 1 || width < 1 || dim < 1) throw NumericError("embedding grid must be at least 1x1x1");
    if (data.size() != cell_count() * dim) throw DimensionMismatchError(data.size(), cell_count() * dim);
    if (!all_finite(std::span<const float>(data))) throw NumericError("embedding grid has non-finite values");
  }

  bool operator==(const EmbeddingGrid&) const = default;
};

}  // namespace protoseg
