#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "protoseg/digest.hpp"
#include "protoseg/protoseg.hpp"
#include "support/oracles.hpp"

using namespace protoseg;

namespace {

EmbeddingGrid random_grid(std::uint64_t seed, std::uint32_t h, std::uint32_t w, std::uint32_t d) {
  SplitMix64 rng(seed);
  EmbeddingGrid g(h, w, d);
  for (auto& v : g.data) v = static_cast<float>(rng.normal());
  g.data[0] = -0.0f;
  if (g.data.size() > 1) g.data[1] = std::numeric_limits<float>::denorm_min();
  return g;
}

PatchEmbeddingSet random_set(std::uint64_t seed, std::size_t n, std::uint32_t d) {
  SplitMix64 rng(seed);
  PatchEmbeddingSet set;
  set.dim = d;
  for (std::size_t i = 0; i < n; ++i) {
    PatchRecord r;
    r.patch_id = 100 + i * 3;
    r.source_image_id = "img_" + std::to_string(i % 4);
    r.origin_x = static_cast<std::uint32_t>(128 * (i % 2));
    r.origin_y = static_cast<std::uint32_t>(128 * (i / 2 % 2));
    if (i % 3 != 0) r.gt_proportions = std::map<ClassId, double>{{0, 0.1 + 0.01 * i}, {2, 0.9 - 0.01 * i}};
    if (i % 2 == 0) r.thumbnail = "thumbs/p" + std::to_string(i) + ".ppm";
    std::vector<float> e(d);
    for (auto& v : e) v = static_cast<float>(rng.normal());
    set.push_back(std::move(r), e);
  }
  return set;
}

}  // namespace

TEST(Egf, RoundTripIsBitExact) {
  oracle::TempDir tmp;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto g = random_grid(seed, 1 + seed, 3 + seed, 7 * (seed + 1));
    const auto path = tmp / ("g" + std::to_string(seed) + ".egf");
    write_egf(g, path);
    const auto back = read_egf(path);
    ASSERT_EQ(back.height, g.height);
    ASSERT_EQ(back.width, g.width);
    ASSERT_EQ(back.dim, g.dim);
    ASSERT_EQ(std::memcmp(back.data.data(), g.data.data(), g.data.size() * 4), 0);
    EXPECT_EQ(encode_egf(back), encode_egf(g));
  }
}

TEST(Egf, HeaderLayout) {
  EmbeddingGrid g(2, 3, 1);
  g.data = {1, 2, 3, 4, 5, 6};
  const auto bytes = encode_egf(g);
  ASSERT_EQ(bytes.size(), 20u + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "EGRD");
  const unsigned char expect[] = {1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0};
  EXPECT_EQ(std::memcmp(bytes.data() + 4, expect, sizeof expect), 0);
  // 1.0f little-endian
  const unsigned char one[] = {0x00, 0x00, 0x80, 0x3F};
  EXPECT_EQ(std::memcmp(bytes.data() + 20, one, 4), 0);
}

TEST(Egf, RejectsCorruptFiles) {
  const auto good = encode_egf(random_grid(1, 2, 2, 4));
  auto bytes = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  EXPECT_THROW(decode_egf(bytes(good.substr(0, good.size() - 1))), IoError);
  EXPECT_THROW(decode_egf(bytes(good.substr(0, 10))), IoError);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_egf(bytes(bad_magic)), IoError);
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(decode_egf(bytes(bad_version)), IoError);
  EXPECT_THROW(read_egf("/nonexistent/x.egf"), IoError);
}

TEST(Esf, RoundTripIsBitExact) {
  oracle::TempDir tmp;
  const auto set = random_set(3, 9, 5);
  write_esf(set, tmp / "s.esf");
  const auto back = read_esf(tmp / "s.esf");
  EXPECT_EQ(back, set);
  EXPECT_EQ(std::memcmp(back.embeddings.data(), set.embeddings.data(), set.embeddings.size() * 4), 0);
  const auto sidecar = encode_esf_sidecar(set);
  EXPECT_EQ(read_file_bytes(tmp / "s.esf.jsonl"), std::vector<std::uint8_t>(sidecar.begin(),
                                                                            sidecar.end()));
  write_esf(back, tmp / "t.esf");
  EXPECT_EQ(read_file_bytes(tmp / "s.esf"), read_file_bytes(tmp / "t.esf"));
  EXPECT_EQ(read_file_bytes(tmp / "s.esf.jsonl"), read_file_bytes(tmp / "t.esf.jsonl"));
}

TEST(Esf, SidecarMismatchAndValidation) {
  oracle::TempDir tmp;
  const auto set = random_set(4, 4, 3);
  write_esf(set, tmp / "s.esf");
  {
    std::ofstream side(tmp / "s.esf.jsonl", std::ios::trunc);
    side << record_to_json(set.records[0]).dump() << "\n";
  }
  EXPECT_THROW(read_esf(tmp / "s.esf"), IoError);

  auto dup = set;
  dup.records[1].patch_id = dup.records[0].patch_id;
  EXPECT_THROW(encode_esf(dup), NumericError);
  auto bad_props = set;
  bad_props.records[1].gt_proportions = std::map<ClassId, double>{{0, 0.5}};
  EXPECT_THROW(bad_props.validate(), NumericError);
}

TEST(Ppm, RoundTrip) {
  oracle::TempDir tmp;
  SourceImage img(5, 7);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i * 37);
  write_ppm(img, tmp / "a.ppm");
  EXPECT_EQ(read_ppm(tmp / "a.ppm"), img);
  const auto c = crop(img, 2, 1, 3, 2);
  EXPECT_EQ(c.at(0, 0, 1), img.at(1, 2, 1));
  EXPECT_EQ(c.at(1, 2, 2), img.at(2, 4, 2));
  EXPECT_THROW(crop(img, 5, 0, 3, 1), NumericError);
}

TEST(Ppm, CommentsInHeaderAndErrors) {
  oracle::TempDir tmp;
  write_file_bytes(tmp / "c.ppm", std::string("P6\n# comment\n2 1\n255\n") + std::string("\x01\x02\x03\x04\x05\x06", 6));
  const auto img = read_ppm(tmp / "c.ppm");
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.at(0, 1, 2), 6);
  write_file_bytes(tmp / "d.ppm", std::string("P6\n2 1\n255\n") + std::string("\x01\x02", 2));
  EXPECT_THROW(read_ppm(tmp / "d.ppm"), IoError);
  write_file_bytes(tmp / "e.ppm", std::string("P6\n1 1\n65535\n") + std::string(6, '\0'));
  EXPECT_THROW(read_ppm(tmp / "e.ppm"), IoError);
}

TEST(Mask, RoundTripAndSidecar) {
  oracle::TempDir tmp;
  ClassMask m(3, 4, default_label_map(17));
  for (std::size_t i = 0; i < m.labels.size(); ++i) m.labels[i] = static_cast<ClassId>(i % 17);
  write_mask(m, tmp / "m.pgm");
  EXPECT_EQ(read_mask(tmp / "m.pgm"), m);
  const auto side = nlohmann::json::parse(read_file_text(tmp / "m.pgm.json"));
  EXPECT_EQ(side.at("width"), 4);
  EXPECT_EQ(side.at("height"), 3);
  EXPECT_EQ(side.at("label_map").size(), 17u);
}

TEST(Mask, Errors) {
  oracle::TempDir tmp;
  std::vector<std::string> names;
  for (int i = 0; i < 300; ++i) names.push_back("c" + std::to_string(i));
  ClassMask wide(1, 1, TissueLabelMap(names), 256);
  EXPECT_THROW(write_mask(wide, tmp / "w.pgm"), NumericError);

  ClassMask m(2, 2, default_label_map(2));
  write_mask(m, tmp / "m.pgm");
  write_file_bytes(tmp / "m.pgm", std::string("P5\n2 2\n15\n") + std::string(4, '\0'));
  EXPECT_THROW(read_mask(tmp / "m.pgm"), IoError);
  write_file_bytes(tmp / "m.pgm", std::string("P5\n2 2\n255\n") + std::string(3, '\0'));
  EXPECT_THROW(read_mask(tmp / "m.pgm"), IoError);
  write_file_bytes(tmp / "m.pgm", std::string("P5\n2 2\n255\n") + std::string(4, '\x05'));
  EXPECT_THROW(read_mask(tmp / "m.pgm"), NumericError);
}

TEST(LabelMap, Validation) {
  EXPECT_THROW(TissueLabelMap({"a", "a"}), ConfigError);
  EXPECT_THROW(TissueLabelMap({"mixture"}), ConfigError);
  const auto m = default_label_map(6);
  EXPECT_EQ(m.name(0), "tumor");
  EXPECT_EQ(m.name(5), "tissue_5");
  EXPECT_EQ(label_map_from_json(to_json_value(m)), m);
  EXPECT_THROW(label_map_from_json(nlohmann::json::parse(R"([{"id":1,"name":"a"}])")), ConfigError);
}

TEST(Digest, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
