#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "binary_io.hpp"
#include "image.hpp"
#include "labels.hpp"

namespace protoseg {

struct CellUnits {};
struct PixelUnits {};

/// Class-index raster. Instantiated per resolution so that cell grids and
/// pixel masks cannot be mixed up.
template <class Units>
struct LabelRaster {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<ClassId> labels;
  TissueLabelMap label_map;

  LabelRaster() = default;
  LabelRaster(std::uint32_t h, std::uint32_t w, TissueLabelMap map, ClassId fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill), label_map(std::move(map)) {}

  ClassId at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
  ClassId& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  std::size_t size() const { return labels.size(); }

  bool operator==(const LabelRaster&) const = default;

  void validate() const {
    if (labels.size() != static_cast<std::size_t>(height) * width) throw NumericError("label raster size mismatch");
    for (ClassId l : labels) {
      if (!label_map.contains(l)) throw NumericError("label " + std::to_string(l) + " not in label map");
    }
  }
};

/// One class id per embedding-grid cell.
using LabelGrid = LabelRaster<CellUnits>;
/// One class id per image pixel.
using ClassMask = LabelRaster<PixelUnits>;

/// Nearest-neighbour expansion: every factor x factor block copies its cell.
inline ClassMask upsample_mask(const LabelGrid& grid, std::uint32_t factor = 32) {
  if (factor < 1) throw ConfigError("upsample factor must be >= 1");
  ClassMask mask(grid.height * factor, grid.width * factor, grid.label_map);
  for (std::uint32_t y = 0; y < mask.height; ++y) {
    for (std::uint32_t x = 0; x < mask.width; ++x) mask.at(y, x) = grid.at(y / factor, x / factor);
  }
  return mask;
}

inline std::filesystem::path mask_sidecar_path(const std::filesystem::path& pgm) {
  auto p = pgm;
  p += ".json";
  return p;
}

inline std::string encode_mask_pgm(const ClassMask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  out.reserve(out.size() + mask.labels.size());
  for (ClassId l : mask.labels) {
    if (l > 255) throw NumericError("class id " + std::to_string(l) + " does not fit an 8-bit mask");
    out.push_back(static_cast<char>(l));
  }
  return out;
}

inline std::string encode_mask_sidecar(const ClassMask& mask) {
  nlohmann::json j = {{"label_map", to_json_value(mask.label_map)}, {"width", mask.width}, {"height", mask.height}};
  return j.dump(2) + "\n";
}

/// Writes the PGM (P5, maxval 255, class index per pixel) and its JSON
/// sidecar `<path>.json`.
inline void write_mask(const ClassMask& mask, const std::filesystem::path& path) {
  mask.validate();
  write_file_bytes(path, encode_mask_pgm(mask));
  write_file_bytes(mask_sidecar_path(path), encode_mask_sidecar(mask));
}

inline ClassMask read_mask(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto h = detail::parse_pnm_header(bytes, path.string());
  if (h.magic != "P5") throw IoError(path.string() + ": not a binary PGM (P5)");
  if (h.maxval != 255) throw IoError(path.string() + ": mask maxval must be 255");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_file_text(mask_sidecar_path(path)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed mask sidecar: " + e.what());
  }
  ClassMask mask;
  try {
    mask = ClassMask(h.height, h.width, label_map_from_json(side.at("label_map")));
    if (side.at("width").get<std::uint32_t>() != h.width || side.at("height").get<std::uint32_t>() != h.height) {
      throw IoError(path.string() + ": sidecar dimensions disagree with PGM header");
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed mask sidecar: " + e.what());
  }
  if (bytes.size() - h.data_offset < mask.labels.size()) throw IoError(path.string() + ": truncated raster");
  for (std::size_t i = 0; i < mask.labels.size(); ++i) mask.labels[i] = bytes[h.data_offset + i];
  mask.validate();
  return mask;
}

}  // namespace protoseg
