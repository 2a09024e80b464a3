#include <gtest/gtest.h>

#include <set>

#include "protoseg/protoseg.hpp"
#include "support/oracles.hpp"

using namespace protoseg;

namespace {

EmbeddingGrid grid_of(const std::vector<std::vector<double>>& cells, std::uint32_t h, std::uint32_t w) {
  EmbeddingGrid g(h, w, static_cast<std::uint32_t>(cells.front().size()));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t d = 0; d < g.dim; ++d) g.data[i * g.dim + d] = static_cast<float>(cells[i][d]);
  }
  return g;
}

EmbeddingGrid random_grid(SplitMix64& rng, std::uint32_t h, std::uint32_t w, std::size_t dim) {
  std::vector<std::vector<double>> cells;
  for (std::size_t i = 0; i < std::size_t{h} * w; ++i) cells.push_back(oracle::random_gaussian(rng, dim));
  return grid_of(cells, h, w);
}

PrototypeDictionary random_dict(SplitMix64& rng, std::size_t l, std::size_t dim, std::size_t classes) {
  std::vector<std::vector<double>> cs;
  std::vector<ClassId> ids;
  for (std::size_t p = 0; p < l; ++p) {
    cs.push_back(oracle::random_gaussian(rng, dim));
    ids.push_back(static_cast<ClassId>(rng.below(classes)));
  }
  return oracle::make_dictionary(cs, ids, classes);
}

}  // namespace

TEST(DirectQuery, Examples) {
  SplitMix64 rng(1);
  const auto dict = random_dict(rng, 3, 5, 3);
  std::vector<std::vector<double>> cells{dict.entries[1].centroid, dict.entries[2].centroid, dict.entries[0].centroid};
  const auto out = direct_query(grid_of(cells, 1, 3), dict);
  EXPECT_EQ(out.labels, (std::vector<ClassId>{dict.entries[1].class_id, dict.entries[2].class_id, dict.entries[0].class_id}));

  auto single = dict;
  single.entries.resize(1);
  const auto uniform = direct_query(random_grid(rng, 4, 4, 5), single);
  EXPECT_EQ(distinct_tissue_count(uniform), 1u);
}

TEST(DirectQuery, MatchesBruteForce) {
  SplitMix64 rng(2);
  for (int it = 0; it < 30; ++it) {
    const std::size_t dim = 2 + rng.below(12);
    const auto dict = random_dict(rng, 1 + rng.below(40), dim, 1 + rng.below(6));
    const auto grid = random_grid(rng, 1 + rng.below(20), 1 + rng.below(20), dim);
    EXPECT_EQ(direct_query(grid, dict).labels, oracle::brute_force_dq(grid, dict));
  }
}

TEST(DirectQuery, TiesGoToLowestPrototype) {
  SplitMix64 rng(3);
  auto dict = random_dict(rng, 2, 4, 3);
  dict.entries[1].centroid = dict.entries[0].centroid;
  dict.entries[0].class_id = 2;
  dict.entries[1].class_id = 1;
  const auto out = direct_query(grid_of({dict.entries[0].centroid}, 1, 1), dict);
  EXPECT_EQ(out.labels[0], 2);
}

TEST(DirectQuery, Errors) {
  SplitMix64 rng(4);
  const auto dict = random_dict(rng, 3, 5, 2);
  EXPECT_THROW(direct_query(random_grid(rng, 2, 2, 4), dict), DimensionMismatchError);
  PrototypeDictionary empty;
  empty.dim = 5;
  EXPECT_THROW(direct_query(random_grid(rng, 2, 2, 5), empty), NumericError);
}

TEST(DistinctTissueCount, Examples) {
  LabelGrid g(2, 2, default_label_map(4));
  EXPECT_EQ(distinct_tissue_count(g), 1u);
  g.labels = {0, 2, 3, 2};
  EXPECT_EQ(distinct_tissue_count(g), 3u);
}

TEST(DistinctTissueCount, SyntheticImageShowsAllClasses) {
  SyntheticDatasetConfig cfg;
  cfg.image_count = 1;
  cfg.image_size = 256;
  cfg.region_seed_count = 4;
  const auto ds = generate_synthetic_dataset(cfg);
  // Prototype per class: descriptor of a noiseless block of that colour.
  std::vector<std::vector<double>> cs;
  std::vector<ClassId> ids;
  for (std::size_t c = 0; c < 4; ++c) {
    SourceImage block(32, 32);
    for (std::size_t i = 0; i < block.rgb.size(); ++i) block.rgb[i] = static_cast<std::uint8_t>(cfg.colors()[c][i % 3]);
    const auto d = block_descriptor(block, 0, 0);
    cs.emplace_back(d.begin(), d.end());
    ids.push_back(static_cast<ClassId>(c));
  }
  const auto dict = oracle::make_dictionary(cs, ids, 4);
  const auto dq = direct_query(block_featurize(ds.images[0]), dict);
  std::set<ClassId> census;
  for (std::uint32_t r = 0; r < 8; ++r) {
    for (std::uint32_t c = 0; c < 8; ++c) {
      // blocks entirely inside one ground-truth region
      const auto p = region_proportions(ds.masks[0], c * 32, r * 32, 32, 32);
      if (p.size() == 1) census.insert(p.begin()->first);
    }
  }
  ASSERT_EQ(census.size(), 4u);
  EXPECT_EQ(distinct_tissue_count(dq), 4u);
}

TEST(ClusterThenQuery, DegeneracyEqualsDirectQuery) {
  SplitMix64 rng(5);
  for (int it = 0; it < 20; ++it) {
    const std::size_t dim = 3 + rng.below(6);
    const auto dict = random_dict(rng, 2 + rng.below(8), dim, 4);
    const auto grid = random_grid(rng, 1 + rng.below(5), 1 + rng.below(5), dim);
    CqConfig cfg;
    cfg.gamma = static_cast<double>(grid.cell_count());
    cfg.seed = static_cast<std::uint64_t>(it);
    EXPECT_EQ(cluster_then_query(grid, dict, cfg).labels, direct_query(grid, dict).labels);
  }
}

TEST(ClusterThenQuery, UniformGrid) {
  SplitMix64 rng(6);
  const auto dict = random_dict(rng, 5, 6, 3);
  const auto v = oracle::random_gaussian(rng, 6);
  const auto grid = grid_of(std::vector<std::vector<double>>(12, v), 3, 4);
  EXPECT_EQ(cq_cluster_count(grid, 1, 5.0), 1u);
  EXPECT_EQ(cluster_then_query(grid, dict).labels, direct_query(grid, dict).labels);
}

TEST(ClusterThenQuery, ClassesSubsetOfDictionary) {
  SplitMix64 rng(7);
  const auto dict = random_dict(rng, 6, 8, 10);
  std::set<ClassId> allowed;
  for (const auto& e : dict.entries) allowed.insert(e.class_id);
  const auto out = cluster_then_query(random_grid(rng, 16, 16, 8), dict);
  for (auto l : out.labels) EXPECT_TRUE(allowed.count(l));
}

TEST(ClusterThenQuery, SuppressesPerturbedCells) {
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = oracle::make_perturbed_grid(seed);
    const auto dq = oracle::count_errors(direct_query(c.grid, c.dict).labels, c.truth);
    CqConfig cfg;
    cfg.seed = seed;
    const auto cq = oracle::count_errors(cluster_then_query(c.grid, c.dict, cfg).labels, c.truth);
    EXPECT_GT(dq, 0u);
    ok += cq <= dq ? 1 : 0;
  }
  EXPECT_GE(ok, 9);
}

TEST(ClusterThenQuery, Deterministic) {
  const auto c = oracle::make_perturbed_grid(3);
  CqConfig cfg;
  cfg.seed = 9;
  EXPECT_EQ(cluster_then_query(c.grid, c.dict, cfg), cluster_then_query(c.grid, c.dict, cfg));
  cfg.gamma = 0.5;
  EXPECT_THROW(cluster_then_query(c.grid, c.dict, cfg), ConfigError);
}

TEST(Upsample, Examples) {
  const auto map = default_label_map(4);
  LabelGrid one(1, 1, map, 3);
  const auto m = upsample_mask(one);
  EXPECT_EQ(m.height, 32u);
  EXPECT_EQ(std::set<ClassId>(m.labels.begin(), m.labels.end()), std::set<ClassId>{3});

  LabelGrid g(2, 2, map);
  g.labels = {0, 1, 2, 3};
  const auto id = upsample_mask(g, 1);
  EXPECT_EQ(id.labels, g.labels);
  const auto q = upsample_mask(g);
  ASSERT_EQ(q.width, 64u);
  for (std::uint32_t y = 0; y < 64; ++y) {
    for (std::uint32_t x = 0; x < 64; ++x) EXPECT_EQ(q.at(y, x), (y / 32) * 2 + x / 32);
  }
  EXPECT_THROW(upsample_mask(g, 0), ConfigError);
}

TEST(Upsample, PreservesHistogramRatios) {
  SplitMix64 rng(8);
  LabelGrid g(5, 7, default_label_map(6));
  for (auto& l : g.labels) l = static_cast<ClassId>(rng.below(6));
  for (std::uint32_t f : {1u, 3u, 32u}) {
    const auto m = upsample_mask(g, f);
    for (ClassId c = 0; c < 6; ++c) {
      EXPECT_EQ(std::count(m.labels.begin(), m.labels.end(), c), std::count(g.labels.begin(), g.labels.end(), c) * f * f);
    }
  }
}

TEST(QueryMode, Parse) {
  EXPECT_EQ(parse_query_mode("dq"), QueryMode::direct);
  EXPECT_EQ(parse_query_mode("cq"), QueryMode::cluster_then_query);
  EXPECT_THROW(parse_query_mode("xx"), ConfigError);
}
