#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "embedding.hpp"
#include "error.hpp"
#include "image.hpp"
#include "patches.hpp"

namespace protoseg {

/// Width of the built-in block descriptor.
inline constexpr std::uint32_t kFeatureDim = 64;
inline constexpr std::uint32_t kDefaultBlock = 32;
inline constexpr std::uint32_t kDefaultPatch = 128;

/// Descriptor layout (before zero padding to kFeatureDim):
inline constexpr std::size_t kMeanOffset = 0;   // 3: per-channel mean / 255
inline constexpr std::size_t kStdOffset = 3;    // 3: per-channel population std / 255
inline constexpr std::size_t kHistOffset = 6;   // 24: 8-bin histogram per channel, fractions
inline constexpr std::size_t kHistBins = 8;
inline constexpr std::size_t kGradOffset = 30;  // 1: mean squared neighbour difference / 255^2

struct PatchGeometry {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t size = kDefaultPatch;
};

/// Non-overlapping row-major tiling; trailing remainders are dropped.
/// Records carry geometry and provenance only.
inline std::vector<PatchRecord> crop_patches(const SourceImage& img, std::uint32_t patch_size = kDefaultPatch,
                                             const std::string& image_id = {}, std::uint64_t first_patch_id = 0) {
  if (patch_size < 1) throw ConfigError("patch size must be >= 1");
  if (img.height < patch_size || img.width < patch_size) {
    throw NumericError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                       " is smaller than one " + std::to_string(patch_size) + " px patch");
  }
  std::vector<PatchRecord> out;
  const std::uint32_t rows = img.height / patch_size;
  const std::uint32_t cols = img.width / patch_size;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      PatchRecord rec;
      rec.patch_id = first_patch_id + out.size();
      rec.source_image_id = image_id;
      rec.origin_x = c * patch_size;
      rec.origin_y = r * patch_size;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

/// Colour/texture descriptor of the block x block region at (x0, y0),
/// L2-normalized.
inline EmbeddingVector block_descriptor(const SourceImage& img, std::uint32_t x0, std::uint32_t y0,
                                        std::uint32_t block = kDefaultBlock) {
  if (block < 2) throw ConfigError("block size must be >= 2");
  if (x0 + block > img.width || y0 + block > img.height) throw NumericError("block out of image bounds");
  std::array<double, kFeatureDim> f{};
  const double n = static_cast<double>(block) * block;
  std::array<double, 3> sum{}, sum_sq{};
  std::array<std::array<std::uint32_t, kHistBins>, 3> hist{};
  double grad = 0.0;
  for (std::uint32_t y = y0; y < y0 + block; ++y) {
    for (std::uint32_t x = x0; x < x0 + block; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::uint8_t v = img.at(y, x, c);
        const double s = v / 255.0;
        sum[c] += s;
        ++hist[c][v >> 5];
        if (x + 1 < x0 + block) {
          const double d = (static_cast<int>(img.at(y, x + 1, c)) - v) / 255.0;
          grad += d * d;
        }
        if (y + 1 < y0 + block) {
          const double d = (static_cast<int>(img.at(y + 1, x, c)) - v) / 255.0;
          grad += d * d;
        }
      }
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = sum[c] / n;
    f[kMeanOffset + c] = mean;
    for (std::uint32_t y = y0; y < y0 + block; ++y) {
      for (std::uint32_t x = x0; x < x0 + block; ++x) {
        const double d = img.at(y, x, c) / 255.0 - mean;
        sum_sq[c] += d * d;
      }
    }
    f[kStdOffset + c] = std::sqrt(sum_sq[c] / n);
    for (std::size_t b = 0; b < kHistBins; ++b) f[kHistOffset + c * kHistBins + b] = hist[c][b] / n;
  }
  const double pairs = 2.0 * block * (block - 1);
  f[kGradOffset] = grad / (3.0 * pairs);
  const auto unit = l2_normalize(std::span<const double>(f));
  return EmbeddingVector(unit.begin(), unit.end());
}

/// Dense floor(H/block) x floor(W/block) grid of block descriptors.
inline EmbeddingGrid block_featurize(const SourceImage& img, std::uint32_t block = kDefaultBlock) {
  if (img.rgb.size() != static_cast<std::size_t>(img.height) * img.width * 3) throw NumericError("degenerate image buffer");
  if (block < 2 || img.height < block || img.width < block) {
    throw NumericError("degenerate image: smaller than one " + std::to_string(block) + " px block");
  }
  EmbeddingGrid grid(img.height / block, img.width / block, kFeatureDim);
  for (std::uint32_t r = 0; r < grid.height; ++r) {
    for (std::uint32_t c = 0; c < grid.width; ++c) {
      const auto d = block_descriptor(img, c * block, r * block, block);
      std::copy(d.begin(), d.end(), grid.cell(r, c).begin());
    }
  }
  return grid;
}

namespace detail {
inline void check_patch(std::uint32_t width, std::uint32_t height, const PatchGeometry& g, std::uint32_t block) {
  if (g.size < block || g.size % block != 0) throw ConfigError("patch size must be a positive multiple of the block size");
  if (static_cast<std::uint64_t>(g.x) + g.size > width || static_cast<std::uint64_t>(g.y) + g.size > height) {
    throw NumericError("patch geometry out of bounds");
  }
  if (g.x % block != 0 || g.y % block != 0) throw NumericError("patch origin not aligned to the block grid");
}

template <class CellFn>
std::vector<double> mean_of_blocks(const PatchGeometry& g, std::uint32_t block, std::size_t dim, CellFn&& cell) {
  std::vector<double> acc(dim, 0.0);
  const std::uint32_t per_side = g.size / block;
  for (std::uint32_t r = 0; r < per_side; ++r) {
    for (std::uint32_t c = 0; c < per_side; ++c) {
      const auto v = cell(g.y / block + r, g.x / block + c);
      for (std::size_t i = 0; i < dim; ++i) acc[i] += v[i];
    }
  }
  const double count = static_cast<double>(per_side) * per_side;
  for (auto& a : acc) a /= count;
  return acc;
}
}  // namespace detail

/// Average of the patch's block descriptors, before normalization.
inline std::vector<double> patch_mean_descriptor(const SourceImage& img, const PatchGeometry& g,
                                                 std::uint32_t block = kDefaultBlock) {
  detail::check_patch(img.width, img.height, g, block);
  return detail::mean_of_blocks(g, block, kFeatureDim, [&](std::uint32_t r, std::uint32_t c) {
    return block_descriptor(img, c * block, r * block, block);
  });
}

/// Global-average-pooled patch embedding: mean block descriptor, normalized.
inline EmbeddingVector patch_embed(const SourceImage& img, const PatchGeometry& g, std::uint32_t block = kDefaultBlock) {
  const auto mean = patch_mean_descriptor(img, g, block);
  const auto unit = l2_normalize(std::span<const double>(mean));
  return EmbeddingVector(unit.begin(), unit.end());
}

/// Same as patch_embed, reusing an already computed grid of the image.
inline EmbeddingVector patch_embed_from_grid(const EmbeddingGrid& grid, const PatchGeometry& g,
                                             std::uint32_t block = kDefaultBlock) {
  detail::check_patch(grid.width * block, grid.height * block, g, block);
  const auto mean = detail::mean_of_blocks(g, block, grid.dim, [&](std::uint32_t r, std::uint32_t c) {
    return grid.cell(r, c);
  });
  const auto unit = l2_normalize(std::span<const double>(mean));
  return EmbeddingVector(unit.begin(), unit.end());
}

}  // namespace protoseg
