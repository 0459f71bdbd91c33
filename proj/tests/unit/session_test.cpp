#include <gtest/gtest.h>

#include <cmath>

#include "latchange/session.hpp"
#include "latchange/synthetic.hpp"
#include "test_util.hpp"

namespace latchange {
namespace {

synthetic::Pair demodulated_pair(GridShape shape, ImageSize image, std::uint64_t seed) {
  synthetic::Rng rng(seed);
  synthetic::Pair pair;
  pair.image_size = image;
  for (auto& g : pair.grids) {
    std::vector<float> v(shape.scalars());
    for (auto& x : v) x = static_cast<float>(rng.normal());
    g = EmbeddingGrid(shape, std::move(v));
    synthetic::demodulate_grid(g);
  }
  pair.demodulated = true;
  ProposalRecord p;
  p.id = 1;
  p.mask = synthetic::rect_mask(image, {{0, 0, 8, 8}});
  pair.proposals[0] = {p};
  p.source_time = Time::t1;
  pair.proposals[1] = {p};
  return pair;
}

TEST(Session, LoadsMatchingGrids) {
  testutil::TempDir dir("session_ok");
  const auto pair = demodulated_pair({64, 64, 256}, {256, 256}, 1);
  pair.write(dir.path(), "pair");
  const Session s = load_session(dir / "pair.json");
  EXPECT_EQ(s.channels(), 256);
  EXPECT_EQ(s.grid_shape(), (GridShape{64, 64, 256}));
  EXPECT_EQ(s.proposals(Time::t0).size(), 1u);
  EXPECT_TRUE(s.warnings().empty());
  EXPECT_EQ(s.grid(Time::t1), pair.grids[1]);
}

TEST(Session, RejectsShapeMismatch) {
  testutil::TempDir dir("session_mismatch");
  auto pair = demodulated_pair({64, 64, 256}, {256, 256}, 2);
  pair.write(dir.path(), "pair");
  write_tensor_archive(EmbeddingGrid({32, 32, 256}, 1.0f), dir / "pair.post.act");
  try {
    load_session(dir / "pair.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape_mismatch);
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos);
  }
}

TEST(Session, DemodulationViolationWarnsOrFails) {
  testutil::TempDir dir("session_demod");
  auto pair = demodulated_pair({4, 4, 16}, {16, 16}, 3);
  // Double one position vector: norm becomes 2·√d_m.
  for (auto& x : pair.grids[0].at(2, 1)) x *= 2.0f;
  pair.write(dir.path(), "pair");

  const Session s = load_session(dir / "pair.json");
  ASSERT_EQ(s.warnings().size(), 1u);
  EXPECT_NE(s.warnings()[0].find("1 of 16"), std::string::npos);

  LoadOptions strict;
  strict.strict_demodulation = true;
  EXPECT_THROW(load_session(dir / "pair.json", strict), Error);

  const auto rep = check_demodulation(pair.grids[0]);
  EXPECT_EQ(rep.violations, 1u);
  EXPECT_NEAR(rep.max_norm_deviation, 4.0, 1e-4);  // 2√16 − √16
  EXPECT_EQ(check_demodulation(pair.grids[1]).violations, 0u);
}

TEST(Session, NonDemodulatedGridsSkipTheCheck) {
  testutil::TempDir dir("session_dino");
  auto pair = demodulated_pair({4, 4, 8}, {16, 16}, 4);
  for (auto& g : pair.grids)
    for (auto& x : g.values()) x *= 3.0f;
  pair.demodulated = false;
  pair.write(dir.path(), "pair");
  EXPECT_TRUE(load_session(dir / "pair.json").warnings().empty());
}

TEST(Session, ProposalFileValidation) {
  testutil::TempDir dir("session_props");
  const auto pair = demodulated_pair({4, 4, 8}, {16, 16}, 5);
  pair.write(dir.path(), "pair");

  const auto mask = synthetic::rect_mask({16, 16}, {{0, 0, 2, 2}});
  ProposalRecord a{1, mask, 0.9, 0.9, Time::t0, std::nullopt};
  write_file_bytes(dir / "pair.pre.jsonl", format_proposals({a, a}));
  EXPECT_THROW(load_session(dir / "pair.json"), Error);  // duplicate id

  ProposalRecord wrong{2, synthetic::rect_mask({8, 8}, {{0, 0, 2, 2}}), 0.9, 0.9, Time::t0, std::nullopt};
  write_file_bytes(dir / "pair.pre.jsonl", format_proposals({wrong}));
  EXPECT_THROW(load_session(dir / "pair.json"), Error);  // size

  ProposalRecord tagged{3, mask, 0.9, 0.9, Time::t1, std::nullopt};
  write_file_bytes(dir / "pair.pre.jsonl", format_proposals({tagged}));
  EXPECT_THROW(load_session(dir / "pair.json"), Error);  // listed as pre, tagged T1

  write_file_bytes(dir / "pair.pre.jsonl", "{not json}\n");
  EXPECT_THROW(load_session(dir / "pair.json"), Error);

  std::filesystem::remove(dir / "pair.pre.jsonl");
  EXPECT_THROW(load_session(dir / "pair.json"), Error);
}

TEST(Session, ColumnMajorProposalFilesConvert) {
  testutil::TempDir dir("session_colmajor");
  auto pair = demodulated_pair({4, 4, 8}, {16, 16}, 6);
  pair.proposals[0][0].mask = synthetic::rect_mask({16, 16}, {{1, 2, 5, 9}});
  pair.write(dir.path(), "pair");
  write_file_bytes(dir / "pair.pre.jsonl", format_proposals(pair.proposals[0], ScanOrder::column_major));
  LoadOptions opts;
  opts.rle_order = ScanOrder::column_major;
  const Session s = load_session(dir / "pair.json", opts);
  EXPECT_EQ(s.proposals(Time::t0)[0].mask, pair.proposals[0][0].mask);
}

TEST(Session, LoadTimeFilterUsesConfiguredThresholds) {
  testutil::TempDir dir("session_filter");
  auto pair = demodulated_pair({4, 4, 8}, {16, 16}, 7);
  const auto m1 = synthetic::rect_mask({16, 16}, {{0, 0, 4, 4}});
  const auto m2 = synthetic::rect_mask({16, 16}, {{8, 8, 12, 12}});
  pair.proposals[0] = {
      {1, m1, 0.9, 0.90, Time::t0, std::nullopt},
      {2, m2, 0.9, 0.97, Time::t0, std::nullopt},
      {3, m2, 0.4, 0.99, Time::t0, std::nullopt},
  };
  pair.write(dir.path(), "pair");

  LoadOptions opts;
  opts.filter = ProposalFilter{};
  EXPECT_EQ(load_session(dir / "pair.json", opts).proposals(Time::t0).size(), 2u);

  opts.filter->quality.min_stability = 0.95;  // xView2-style override
  const Session strict = load_session(dir / "pair.json", opts);
  ASSERT_EQ(strict.proposals(Time::t0).size(), 1u);
  EXPECT_EQ(strict.proposals(Time::t0)[0].id, 2);
}

TEST(Session, SwapExchangesTimes) {
  auto pair = demodulated_pair({4, 4, 8}, {16, 16}, 8);
  pair.proposals[1][0].id = 9;
  const Session s = pair.session();
  const Session w = s.swapped();
  EXPECT_EQ(w.grid(Time::t0), s.grid(Time::t1));
  EXPECT_EQ(w.proposals(Time::t0)[0].id, 9);
  EXPECT_EQ(w.proposals(Time::t0)[0].source_time, Time::t0);
}

}  // namespace
}  // namespace latchange
