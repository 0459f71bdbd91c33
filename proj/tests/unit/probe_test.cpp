#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "latchange/probe.hpp"
#include "latchange/synthetic.hpp"

namespace latchange {
namespace {

/// 4×4 grid whose positions spread along channel 0 (wide) and channel 1 (narrow).
EmbeddingGrid planar_grid() {
  EmbeddingGrid g({4, 4, 3}, 0.0f);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      g.at(r, c)[0] = static_cast<float>(3 * (r - 1.5));
      g.at(r, c)[1] = static_cast<float>(c - 1.5);
      g.at(r, c)[2] = 2.0f;
    }
  return g;
}

TEST(Pca, RecoversAxesWithSignConvention) {
  const auto b = fit_pca(planar_grid(), 2);
  ASSERT_EQ(b.directions.size(), 2u);
  EXPECT_NEAR(b.directions[0][0], 1.0, 1e-9);
  EXPECT_NEAR(b.directions[1][1], 1.0, 1e-9);
  EXPECT_NEAR(b.eigenvalues[0], 9.0 * 1.25, 1e-6);
  EXPECT_NEAR(b.eigenvalues[1], 1.25, 1e-6);
  EXPECT_NEAR(b.explained_share[0] + b.explained_share[1], 1.0, 1e-9);
  EXPECT_NEAR(b.mean[2], 2.0, 1e-12);
}

TEST(Pca, Deterministic) {
  synthetic::Rng rng(2);
  std::vector<float> v(8 * 8 * 16);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  const EmbeddingGrid g({8, 8, 16}, v);
  const auto a = fit_pca(g, 3), b = fit_pca(g, 3);
  EXPECT_EQ(a.directions, b.directions);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < 16; ++k) d += a.directions[i][k] * a.directions[j][k];
      EXPECT_NEAR(d, i == j ? 1.0 : 0.0, 1e-8);
    }
  EXPECT_GE(a.eigenvalues[0], a.eigenvalues[1]);
  EXPECT_GE(a.eigenvalues[1], a.eigenvalues[2]);
}

TEST(Pca, RankDeficiency) {
  try {
    fit_pca(planar_grid(), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::rank_deficient);
  }
  EXPECT_EQ(fit_pca_up_to(planar_grid(), 3).directions.size(), 2u);
  EXPECT_THROW(fit_pca(EmbeddingGrid({3, 3, 4}, 1.0f), 1), Error);
  EXPECT_THROW(fit_pca_up_to(EmbeddingGrid({3, 3, 4}, 1.0f), 3), Error);
}

TEST(Pca, RgbRenderingScalesEachChannel) {
  const auto g = planar_grid();
  const auto img = pca_rgb(g, fit_pca_up_to(g, 3));
  EXPECT_EQ(img.size, (ImageSize{4, 4}));
  std::uint8_t lo = 255, hi = 0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      lo = std::min(lo, img.pixel(r, c)[0]);
      hi = std::max(hi, img.pixel(r, c)[0]);
      EXPECT_EQ(img.pixel(r, c)[2], 0);
    }
  EXPECT_EQ(lo, 0);
  EXPECT_EQ(hi, 255);
}

TEST(SemanticQuery, RanksSameClassFirst) {
  const auto fx = synthetic::cluster_fixture();
  const auto& post = fx.pair.grids[1];
  const auto& props = fx.pair.proposals[1];
  const auto top = semantic_query(post, props, 0, 2);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ((std::set<std::int64_t>{top[0].record.id, top[1].record.id}), (std::set<std::int64_t>{1, 2}));
  EXPECT_GT(top[1].similarity, 0.99);

  // Against the pre image's proposals pooled on the post grid: same footprints, same class.
  const auto cross = semantic_query(post, props, 3, 3, &post, fx.pair.proposals[0]);
  ASSERT_EQ(cross.size(), 3u);
  std::set<std::int64_t> got;
  for (const auto& r : cross) got.insert(r.record.id);
  EXPECT_EQ(got, (std::set<std::int64_t>{13, 14, 15}));
  EXPECT_THROW(semantic_query(post, props, 99, 3), Error);
}

}  // namespace
}  // namespace latchange
