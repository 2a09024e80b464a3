#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "protoseg/embedding.hpp"
#include "protoseg/rng.hpp"
#include "support/oracles.hpp"

using namespace protoseg;

namespace {

std::span<const double> s(const std::vector<double>& v) { return v; }

}  // namespace

TEST(Cosine, Examples) {
  EXPECT_DOUBLE_EQ(cosine_similarity(s({1, 0}), s({0, 1})), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(s({3, 4}), s({3, 4})), 1.0);
  EXPECT_NEAR(cosine_similarity(s({1, 1}), s({1, 0})), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Cosine, Errors) {
  EXPECT_THROW(cosine_similarity(s({1, 0}), s({1, 0, 0})), DimensionMismatchError);
  EXPECT_THROW(cosine_similarity(s({0, 0}), s({1, 0})), ZeroNormError);
  EXPECT_THROW(cosine_similarity(s({1, 0}), s({0, 0})), ZeroNormError);
}

TEST(Cosine, SymmetricAndBoundedFuzz) {
  SplitMix64 rng(11);
  for (int it = 0; it < 2000; ++it) {
    const std::size_t dim = 1 + rng.below(40);
    auto a = oracle::random_gaussian(rng, dim);
    auto b = oracle::random_gaussian(rng, dim);
    const double scale = std::pow(10.0, static_cast<double>(rng.below(13)) - 6.0);
    for (auto& x : b) x *= scale;
    if (rng.below(4) == 0) b = a;
    const double ab = cosine_similarity(s(a), s(b));
    EXPECT_EQ(ab, cosine_similarity(s(b), s(a)));
    EXPECT_LE(std::abs(ab), 1.0 + 1e-9);
  }
}

TEST(SquaredEuclidean, Examples) {
  EXPECT_EQ(squared_euclidean(s({0, 0}), s({0, 0})), 0.0);
  EXPECT_EQ(squared_euclidean(s({1, 0}), s({0, 1})), 2.0);
  EXPECT_EQ(squared_euclidean(s({2, 1}), s({-1, 5})), 25.0);
  EXPECT_THROW(squared_euclidean(s({1}), s({1, 2})), DimensionMismatchError);
}

TEST(SquaredEuclidean, ExpansionIdentityFuzz) {
  SplitMix64 rng(12);
  for (int it = 0; it < 2000; ++it) {
    const std::size_t dim = 1 + rng.below(70);
    const auto a = oracle::random_gaussian(rng, dim);
    const auto b = oracle::random_gaussian(rng, dim);
    const double lhs = squared_euclidean(s(a), s(b));
    const double rhs = squared_norm(s(a)) + squared_norm(s(b)) - 2.0 * dot(s(a), s(b));
    EXPECT_NEAR(lhs, rhs, 1e-6);
    EXPECT_GE(lhs, 0.0);
  }
}

TEST(SquaredEuclidean, ZeroOnlyForEqual) {
  const std::vector<double> a{1.0, 2.0, 3.0};
  auto b = a;
  EXPECT_EQ(squared_euclidean(s(a), s(b)), 0.0);
  b[2] = std::nextafter(3.0, 4.0);
  EXPECT_GT(squared_euclidean(s(a), s(b)), 0.0);
}

TEST(Reductions, FixedOrderAcrossTypes) {
  SplitMix64 rng(5);
  std::vector<float> f(67);
  for (auto& x : f) x = static_cast<float>(rng.normal());
  std::vector<double> d(f.begin(), f.end());
  EXPECT_EQ(dot(std::span<const float>(f), std::span<const float>(f)), dot(s(d), s(d)));
  EXPECT_EQ(squared_norm(std::span<const float>(f)), squared_norm(s(d)));
}

TEST(Normalize, Examples) {
  const auto a = l2_normalize(s({3, 4}));
  EXPECT_DOUBLE_EQ(a[0], 0.6);
  EXPECT_DOUBLE_EQ(a[1], 0.8);
  const auto u = l2_normalize(s({0, 1, 0}));
  EXPECT_EQ(u, (std::vector<double>{0, 1, 0}));
  const auto b = l2_normalize(s({2, 2}));
  EXPECT_NEAR(b[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(b[1], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(l2_normalize(s({0, 0})), ZeroNormError);
}

TEST(Normalize, UnitNormAndDirectionFuzz) {
  SplitMix64 rng(13);
  for (int it = 0; it < 500; ++it) {
    const auto a = oracle::random_gaussian(rng, 1 + rng.below(64));
    std::vector<float> fa(a.begin(), a.end());
    const auto u = l2_normalize(std::span<const float>(fa));
    EXPECT_NEAR(std::sqrt(squared_norm(std::span<const float>(u))), 1.0, 1e-6);
    EXPECT_NEAR(cosine_similarity(std::span<const float>(u), std::span<const float>(fa)), 1.0, 1e-6);
  }
}

TEST(Normalize, EuclideanArgminMatchesCosineArgmax) {
  SplitMix64 rng(14);
  int checked = 0;
  for (int it = 0; it < 400; ++it) {
    const std::size_t dim = 2 + rng.below(16);
    const std::size_t k = 2 + rng.below(10);
    std::vector<std::vector<double>> cs;
    for (std::size_t j = 0; j < k; ++j) cs.push_back(l2_normalize(s(oracle::random_gaussian(rng, dim))));
    const auto q = l2_normalize(s(oracle::random_gaussian(rng, dim)));
    std::vector<double> d, c;
    for (const auto& x : cs) {
      d.push_back(squared_euclidean(s(q), s(x)));
      c.push_back(cosine_similarity(s(q), s(x)));
    }
    auto sorted = d;
    std::sort(sorted.begin(), sorted.end());
    if (sorted[1] - sorted[0] < 1e-9) continue;  // unique optimum only
    ++checked;
    EXPECT_EQ(std::min_element(d.begin(), d.end()) - d.begin(), std::max_element(c.begin(), c.end()) - c.begin());
  }
  EXPECT_GT(checked, 350);
}

TEST(NtXent, Examples) {
  const std::vector<double> a{1, 0}, p{1, 0}, n{0, 1};
  const std::vector<std::vector<double>> none;
  EXPECT_EQ(nt_xent_loss(s(a), s(p), std::span<const std::vector<double>>(none)), 0.0);

  const std::vector<std::vector<double>> one{n};
  // -log(e^2 / (e^2 + 1)) at 40 digits: 0.12692801104297249644
  EXPECT_NEAR(nt_xent_loss(s(a), s(p), std::span<const std::vector<double>>(one)), 0.12692801104297249644, 1e-15);

  const std::vector<double> q{0.6, 0.8};
  const std::vector<std::vector<double>> same{q};
  EXPECT_NEAR(nt_xent_loss(s(a), s(q), std::span<const std::vector<double>>(same)), std::log(2.0), 1e-15);
}

TEST(NtXent, ErrorsAndStability) {
  const std::vector<double> a{1, 0}, z{0, 0};
  const std::vector<std::vector<double>> negs{{0, 1}};
  EXPECT_THROW(nt_xent_loss(s(a), s(z), std::span<const std::vector<double>>(negs)), ZeroNormError);
  const std::vector<std::vector<double>> zero_neg{z};
  EXPECT_THROW(nt_xent_loss(s(a), s(a), std::span<const std::vector<double>>(zero_neg)), ZeroNormError);
  EXPECT_THROW(nt_xent_loss(s(a), s(a), std::span<const std::vector<double>>(negs), ContrastiveConfig{0.0}), ConfigError);

  // Tiny temperature: raw exponentials would overflow.
  std::vector<std::vector<double>> many(500, std::vector<double>{0.99, 0.1});
  const double loss = nt_xent_loss(s(a), s(std::vector<double>{0.9, 0.1}), std::span<const std::vector<double>>(many),
                                   ContrastiveConfig{1e-3});
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_GT(loss, 0.0);
}

TEST(NtXent, MonotoneInPositiveAndNegativeSimilarity) {
  const std::vector<double> anchor{1, 0, 0};
  const std::vector<std::vector<double>> negs{{0.2, 1, 0}, {0.1, 0, 1}};
  double prev = INFINITY;
  for (int i = 0; i <= 20; ++i) {
    const double th = 3.0 * (1.0 - i / 20.0);
    const std::vector<double> pos{std::cos(th), std::sin(th), 0};
    const double l = nt_xent_loss(s(anchor), s(pos), std::span<const std::vector<double>>(negs));
    EXPECT_LT(l, prev);
    prev = l;
  }
  prev = -INFINITY;
  const std::vector<double> pos{0.8, 0.6, 0};
  for (int i = 0; i <= 20; ++i) {
    const double th = 3.0 * (1.0 - i / 20.0);
    const std::vector<std::vector<double>> n2{{std::cos(th), 0, std::sin(th)}, {0, 1, 0}};
    const double l = nt_xent_loss(s(anchor), s(pos), std::span<const std::vector<double>>(n2));
    EXPECT_GT(l, prev);
    prev = l;
  }
}

TEST(Rng, SplitMixReferenceStream) {
  // Reference values of the published SplitMix64 for seed 0.
  SplitMix64 g(0);
  EXPECT_EQ(g.next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(g.next(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(g.next(), 0x06C45D188009454FULL);
}

TEST(Rng, BelowIsInRangeAndCoversValues) {
  SplitMix64 g(3);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) ++hits[g.below(7)];
  for (int h : hits) EXPECT_NEAR(h, 1000, 150);
  EXPECT_EQ(g.below(1), 0u);
}

TEST(EmbeddingGridType, ValidateRejectsNonFinite) {
  EmbeddingGrid g(2, 2, 3);
  g.data.assign(12, 0.5f);
  EXPECT_NO_THROW(g.validate());
  g.data[5] = NAN;
  EXPECT_THROW(g.validate(), NumericError);
  EmbeddingGrid empty;
  EXPECT_THROW(empty.validate(), NumericError);
}
