#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"
#include "labels.hpp"
#include "mask.hpp"
#include "rng.hpp"

namespace protoseg {

using Rgb = std::array<double, 3>;

/// Sixteen colours with minimum pairwise RGB distance > 73.
inline const std::vector<Rgb>& default_palette() {
  static const std::vector<Rgb> palette = {
      {200, 60, 80},   {60, 180, 90},   {70, 90, 210},   {230, 200, 60},  {150, 60, 170},  {40, 190, 200},
      {240, 130, 40},  {120, 120, 120}, {250, 250, 250}, {20, 20, 20},    {140, 90, 40},   {190, 160, 230},
      {20, 100, 60},   {110, 20, 30},   {160, 220, 140}, {30, 40, 110},
  };
  return palette;
}

struct SyntheticDatasetConfig {
  std::uint32_t image_count = 20;
  std::uint32_t image_size = 256;
  std::uint32_t class_count = 4;
  std::uint32_t region_seed_count = 4;
  std::vector<Rgb> class_colors;  // empty: first class_count entries of default_palette()
  double noise_sigma = 10.0;      // 8-bit units
  std::uint64_t rng_seed = 0;

  std::vector<Rgb> colors() const {
    if (!class_colors.empty()) return class_colors;
    const auto& p = default_palette();
    return {p.begin(), p.begin() + std::min<std::size_t>(class_count, p.size())};
  }

  /// Smallest pairwise distance between class colours (infinity for one class).
  double min_color_separation() const {
    const auto c = colors();
    double best = INFINITY;
    for (std::size_t i = 0; i < c.size(); ++i) {
      for (std::size_t j = i + 1; j < c.size(); ++j) {
        const double d = std::hypot(c[i][0] - c[j][0], c[i][1] - c[j][1], c[i][2] - c[j][2]);
        best = std::min(best, d);
      }
    }
    return best;
  }

  void validate() const {
    if (image_count < 1) throw ConfigError("image_count must be >= 1");
    if (image_size < 32) throw ConfigError("image_size must be >= 32");
    if (class_count < 1 || class_count > 16) throw ConfigError("class_count must be in [1, 16]");
    if (region_seed_count < 1) throw ConfigError("region_seed_count must be >= 1");
    if (static_cast<std::uint64_t>(region_seed_count) > static_cast<std::uint64_t>(image_size) * image_size) {
      throw ConfigError("more region seeds than pixels");
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    const auto c = colors();
    if (c.size() != class_count) throw ConfigError("class_colors must list one colour per class");
    for (const auto& rgb : c) {
      for (double v : rgb) {
        if (!(v >= 0.0 && v <= 255.0)) throw ConfigError("class colour component outside [0, 255]");
      }
    }
    if (class_count > 1 && !(min_color_separation() > 4.0 * noise_sigma && min_color_separation() > 0.0)) {
      throw ConfigError("class colours must be pairwise separated by more than 4 sigma");
    }
  }
};

struct SyntheticDataset {
  std::vector<std::string> image_ids;
  std::vector<SourceImage> images;
  std::vector<ClassMask> masks;
  TissueLabelMap label_map;
};

/// Cellular images: each pixel takes the class of its nearest region seed
/// (ties to the lower seed index), coloured with the class mean plus
/// Gaussian noise. Image i uses the stream derive_seed(rng_seed, i).
inline SyntheticDataset generate_synthetic_dataset(const SyntheticDatasetConfig& cfg) {
  cfg.validate();
  const auto colors = cfg.colors();
  SyntheticDataset out;
  out.label_map = default_label_map(cfg.class_count);
  const std::uint32_t size = cfg.image_size;
  for (std::uint32_t i = 0; i < cfg.image_count; ++i) {
    SplitMix64 rng(derive_seed(cfg.rng_seed, i));

    std::vector<std::array<std::uint32_t, 2>> seeds;
    while (seeds.size() < cfg.region_seed_count) {
      std::array<std::uint32_t, 2> s{static_cast<std::uint32_t>(rng.below(size)), static_cast<std::uint32_t>(rng.below(size))};
      if (std::find(seeds.begin(), seeds.end(), s) == seeds.end()) seeds.push_back(s);
    }
    // The first seeds cover distinct classes, the rest are uniform.
    std::vector<ClassId> order(cfg.class_count);
    for (std::size_t c = 0; c < order.size(); ++c) order[c] = static_cast<ClassId>(c);
    shuffle(std::span<ClassId>(order), rng);
    std::vector<ClassId> seed_class(seeds.size());
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      seed_class[s] = s < order.size() ? order[s] : static_cast<ClassId>(rng.below(cfg.class_count));
    }

    ClassMask mask(size, size, out.label_map);
    SourceImage img(size, size);
    for (std::uint32_t y = 0; y < size; ++y) {
      for (std::uint32_t x = 0; x < size; ++x) {
        std::size_t best = 0;
        std::int64_t best_d = INT64_MAX;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
          const std::int64_t dy = static_cast<std::int64_t>(y) - seeds[s][0];
          const std::int64_t dx = static_cast<std::int64_t>(x) - seeds[s][1];
          const std::int64_t d = dy * dy + dx * dx;
          if (d < best_d) {
            best_d = d;
            best = s;
          }
        }
        const ClassId cls = seed_class[best];
        mask.at(y, x) = cls;
        for (std::size_t c = 0; c < 3; ++c) {
          const double noise = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * rng.normal() : 0.0;
          img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::round(colors[cls][c] + noise), 0.0, 255.0));
        }
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "img_%03u", i);
    out.image_ids.emplace_back(id);
    out.images.push_back(std::move(img));
    out.masks.push_back(std::move(mask));
  }
  return out;
}

/// Per-class pixel fractions of a mask region; only classes present appear.
inline std::map<ClassId, double> region_proportions(const ClassMask& mask, std::uint32_t x, std::uint32_t y,
                                                    std::uint32_t w, std::uint32_t h) {
  if (x + w > mask.width || y + h > mask.height) throw NumericError("region out of mask bounds");
  std::map<ClassId, std::size_t> counts;
  for (std::uint32_t r = y; r < y + h; ++r) {
    for (std::uint32_t c = x; c < x + w; ++c) ++counts[mask.at(r, c)];
  }
  std::map<ClassId, double> out;
  const double n = static_cast<double>(w) * h;
  for (const auto& [cls, cnt] : counts) out[cls] = cnt / n;
  return out;
}

}  // namespace protoseg
