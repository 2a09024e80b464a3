#pragma once

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>

#include <json.hpp>

#include "binary_io.hpp"
#include "embedding.hpp"
#include "patches.hpp"

namespace protoseg {

// Embedding Grid File (EGF), little-endian:
//   "EGRD" u16 version=1 u16 reserved=0 u32 height u32 width u32 dim
//   height*width*dim float32, row-major by cell
inline constexpr std::uint16_t kEgfVersion = 1;

// Embedding Set File (ESF), little-endian:
//   "ESET" u16 version=1 u16 reserved=0 u32 count u32 dim
//   count*dim float32
// plus a JSON Lines sidecar `<path>.jsonl`, one record object per row.
inline constexpr std::uint16_t kEsfVersion = 1;

inline std::string encode_egf(const EmbeddingGrid& grid) {
  grid.validate();
  ByteWriter w;
  w.put_bytes("EGRD");
  w.put_u16(kEgfVersion);
  w.put_u16(0);
  w.put_u32(grid.height);
  w.put_u32(grid.width);
  w.put_u32(grid.dim);
  for (float v : grid.data) w.put_f32(v);
  return w.bytes();
}

inline EmbeddingGrid decode_egf(const std::vector<std::uint8_t>& bytes, const std::string& what = "EGF") {
  ByteReader r(bytes, what);
  r.expect_magic("EGRD");
  if (r.u16() != kEgfVersion) throw IoError(what + ": unsupported EGF version");
  r.u16();
  const std::uint32_t h = r.u32();
  const std::uint32_t w = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint64_t n = static_cast<std::uint64_t>(h) * w * d;
  if (r.remaining() != n * 4) throw IoError(what + ": payload size does not match header");
  EmbeddingGrid grid(h, w, d);
  for (auto& v : grid.data) v = r.f32();
  grid.validate();
  return grid;
}

inline void write_egf(const EmbeddingGrid& grid, const std::filesystem::path& path) {
  write_file_bytes(path, encode_egf(grid));
}

inline EmbeddingGrid read_egf(const std::filesystem::path& path) {
  return decode_egf(read_file_bytes(path), path.string());
}

inline std::filesystem::path esf_sidecar_path(const std::filesystem::path& esf) {
  auto p = esf;
  p += ".jsonl";
  return p;
}

inline std::string encode_esf(const PatchEmbeddingSet& set) {
  set.validate();
  ByteWriter w;
  w.put_bytes("ESET");
  w.put_u16(kEsfVersion);
  w.put_u16(0);
  w.put_u32(static_cast<std::uint32_t>(set.size()));
  w.put_u32(set.dim);
  for (float v : set.embeddings) w.put_f32(v);
  return w.bytes();
}

inline nlohmann::json record_to_json(const PatchRecord& r) {
  nlohmann::json j = {{"patch_id", r.patch_id}, {"source_image_id", r.source_image_id}, {"x", r.origin_x}, {"y", r.origin_y}};
  if (r.gt_proportions) {
    nlohmann::json props = nlohmann::json::object();
    for (const auto& [cls, p] : *r.gt_proportions) props[std::to_string(cls)] = p;
    j["gt_proportions"] = std::move(props);
  }
  if (r.thumbnail) j["thumbnail"] = *r.thumbnail;
  return j;
}

inline PatchRecord record_from_json(const nlohmann::json& j) {
  PatchRecord r;
  r.patch_id = j.at("patch_id").get<std::uint64_t>();
  r.source_image_id = j.at("source_image_id").get<std::string>();
  r.origin_x = j.at("x").get<std::uint32_t>();
  r.origin_y = j.at("y").get<std::uint32_t>();
  if (auto it = j.find("gt_proportions"); it != j.end()) {
    std::map<ClassId, double> props;
    for (const auto& [key, value] : it->items()) props[static_cast<ClassId>(std::stoul(key))] = value.get<double>();
    r.gt_proportions = std::move(props);
  }
  if (auto it = j.find("thumbnail"); it != j.end()) r.thumbnail = it->get<std::string>();
  return r;
}

inline std::string encode_esf_sidecar(const PatchEmbeddingSet& set) {
  std::string out;
  for (const auto& r : set.records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline void write_esf(const PatchEmbeddingSet& set, const std::filesystem::path& path) {
  write_file_bytes(path, encode_esf(set));
  write_file_bytes(esf_sidecar_path(path), encode_esf_sidecar(set));
}

inline PatchEmbeddingSet read_esf(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string what = path.string();
  ByteReader r(bytes, what);
  r.expect_magic("ESET");
  if (r.u16() != kEsfVersion) throw IoError(what + ": unsupported ESF version");
  r.u16();
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  if (r.remaining() != static_cast<std::uint64_t>(count) * dim * 4) throw IoError(what + ": payload size does not match header");
  PatchEmbeddingSet set;
  set.dim = dim;
  set.embeddings.resize(static_cast<std::size_t>(count) * dim);
  for (auto& v : set.embeddings) v = r.f32();

  std::istringstream lines(read_file_text(esf_sidecar_path(path)));
  std::string line;
  try {
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      set.records.push_back(record_from_json(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(what + ": malformed sidecar: " + e.what());
  }
  if (set.records.size() != count) throw IoError(what + ": sidecar record count does not match ESF header");
  set.validate();
  return set;
}

}  // namespace protoseg
