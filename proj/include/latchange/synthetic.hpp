#pragma once

// Synthetic bitemporal pairs with known structure, used by tests, the acceptance harness and
// the `synth` subcommand.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "latchange/grid.hpp"
#include "latchange/image_io.hpp"
#include "latchange/matching.hpp"
#include "latchange/records.hpp"
#include "latchange/rle.hpp"
#include "latchange/session.hpp"

namespace latchange::synthetic {

/// Platform-independent draws on top of mt19937_64 (the standard distributions are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct Rect {
  int y0, x0, y1, x1;  // half-open
};

inline BinaryRaster rect_raster(ImageSize size, const std::vector<Rect>& rects) {
  BinaryRaster m(size, 0);
  for (const auto& r : rects)
    for (int y = std::max(0, r.y0); y < std::min(size.height, r.y1); ++y)
      for (int x = std::max(0, r.x0); x < std::min(size.width, r.x1); ++x) m.at(y, x) = 1;
  return m;
}

inline RleMask rect_mask(ImageSize size, const std::vector<Rect>& rects) {
  return encode_rle(rect_raster(size, rects));
}

/// Zero-mean, norm-√d rescaling of one position vector, as a demodulated encoder produces.
inline void demodulate_vector(std::span<float> v) {
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double sq = 0.0;
  for (float x : v) sq += (x - mean) * (x - mean);
  const double scale = sq > 0.0 ? std::sqrt(static_cast<double>(v.size()) / sq) : 0.0;
  for (auto& x : v) x = static_cast<float>((x - mean) * scale);
}

inline void demodulate_grid(EmbeddingGrid& g) {
  for (int r = 0; r < g.height(); ++r)
    for (int c = 0; c < g.width(); ++c) demodulate_vector(g.at(r, c));
  g.set_demodulated(true);
}

/// In-memory pair.
struct Pair {
  ImageSize image_size{};
  std::array<EmbeddingGrid, 2> grids;
  std::array<std::vector<ProposalRecord>, 2> proposals;
  bool demodulated = false;

  SessionManifest manifest() const {
    SessionManifest m;
    m.image_size = image_size;
    m.embedding_height = grids[0].height();
    m.embedding_width = grids[0].width();
    m.channels = grids[0].channels();
    m.demodulated = demodulated;
    return m;
  }
  Session session() const { return Session(manifest(), grids, proposals); }
  SessionManifest write(const std::filesystem::path& dir, const std::string& stem) const {
    return write_session(dir, stem, grids, proposals, image_size, demodulated);
  }
};

struct RandomPairParams {
  int min_image = 16;
  int max_image = 128;
  int max_grid = 32;
  int channels = 16;
  int max_proposals = 50;
  bool demodulated = true;
  double duplicate_mask_rate = 0.15;  // T1 proposals copying a T0 mask, producing score ties
};

/// Random pair: a random pre grid, a post grid with random regions re-drawn, and random
/// rectangle-union proposals with shuffled unique ids on both sides.
inline Pair random_pair(Rng& rng, const RandomPairParams& p = {}) {
  Pair pair;
  const int h = rng.integer(p.min_image, p.max_image);
  const int w = rng.integer(p.min_image, p.max_image);
  pair.image_size = {h, w};
  const int gh = rng.integer(2, std::min(p.max_grid, h));
  const int gw = rng.integer(2, std::min(p.max_grid, w));
  const GridShape shape{gh, gw, p.channels};

  std::vector<float> pre(shape.scalars());
  for (auto& v : pre) v = static_cast<float>(rng.normal());
  std::vector<float> post = pre;
  const int regions = rng.integer(0, 4);
  for (int k = 0; k < regions; ++k) {
    const int r0 = rng.integer(0, gh - 1), c0 = rng.integer(0, gw - 1);
    const int r1 = std::min(gh, r0 + rng.integer(1, std::max(1, gh / 2)));
    const int c1 = std::min(gw, c0 + rng.integer(1, std::max(1, gw / 2)));
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c)
        for (int ch = 0; ch < p.channels; ++ch)
          post[(static_cast<std::size_t>(r) * gw + c) * p.channels + ch] = static_cast<float>(rng.normal());
  }
  for (auto& v : post) v += static_cast<float>(0.05 * rng.normal());
  pair.grids = {EmbeddingGrid(shape, std::move(pre)), EmbeddingGrid(shape, std::move(post))};
  if (p.demodulated) {
    demodulate_grid(pair.grids[0]);
    demodulate_grid(pair.grids[1]);
  }
  pair.demodulated = p.demodulated;

  auto random_rect = [&]() {
    const int y0 = rng.integer(0, h - 1), x0 = rng.integer(0, w - 1);
    return Rect{y0, x0, std::min(h, y0 + rng.integer(1, std::max(1, h / 3))),
                std::min(w, x0 + rng.integer(1, std::max(1, w / 3)))};
  };
  for (Time t : {Time::t0, Time::t1}) {
    const int n = rng.integer(0, p.max_proposals);
    std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i * 3 + (t == Time::t1 ? 1 : 0);
    for (int i = n - 1; i > 0; --i) std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(rng.integer(0, i))]);
    auto& list = pair.proposals[index_of(t)];
    for (int i = 0; i < n; ++i) {
      ProposalRecord rec;
      rec.id = ids[static_cast<std::size_t>(i)];
      rec.source_time = t;
      const auto& pre_list = pair.proposals[0];
      if (t == Time::t1 && !pre_list.empty() && rng.uniform() < p.duplicate_mask_rate) {
        rec.mask = pre_list[static_cast<std::size_t>(rng.integer(0, static_cast<int>(pre_list.size()) - 1))].mask;
      } else {
        std::vector<Rect> rects{random_rect()};
        if (rng.uniform() < 0.3) rects.push_back(random_rect());
        rec.mask = rect_mask(pair.image_size, rects);
      }
      rec.predicted_iou = rng.uniform(0.3, 1.0);
      rec.stability_score = rng.uniform(0.6, 1.0);
      list.push_back(std::move(rec));
    }
  }
  return pair;
}

/// Two orthogonal semantic classes (A, B) on an unchanged background C.
///
/// Image 64×64 px, grid 16×16 (4 px cells), d_m = 16. Objects of class A and B appear at T1 over
/// regions whose T0 embedding is the antipode (−A, −B), so every object change sits near 180°.
/// Background proposals are identical at both times (0°). Proposal ids:
///   T1: A objects 0..2, B objects 3..5, background 6..7
///   T0: the same object footprints as ids 10..15, background 16..17
struct ClusterFixture {
  Pair pair;
  std::vector<Rect> a_rects;
  std::vector<Rect> b_rects;
  std::vector<std::int64_t> a_ids;  // change ids of class A, both times
  std::vector<std::int64_t> b_ids;
  std::vector<QueryPoint> a_points;  // one point inside each A object, at T1
};

inline ClusterFixture cluster_fixture(std::uint64_t seed = 7) {
  Rng rng(seed);
  ClusterFixture fx;
  const ImageSize size{64, 64};
  const GridShape shape{16, 16, 16};
  fx.pair.image_size = size;
  fx.a_rects = {{4, 4, 16, 16}, {4, 24, 12, 40}, {40, 8, 52, 20}};
  fx.b_rects = {{24, 24, 36, 36}, {44, 40, 60, 56}, {4, 48, 16, 60}};
  const std::vector<Rect> background = {{20, 0, 32, 12}, {56, 0, 64, 32}};

  constexpr int kA = 0, kB = 1, kC = 2;
  auto basis = [&](int axis, float sign) {
    std::vector<float> v(16, 0.0f);
    v[static_cast<std::size_t>(axis)] = sign * 4.0f;
    for (std::size_t k = 3; k < v.size(); ++k) v[k] = static_cast<float>(0.02 * rng.normal());
    return v;
  };
  EmbeddingGrid pre(shape), post(shape);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      const auto bg = basis(kC, 1.0f);
      std::copy(bg.begin(), bg.end(), pre.at(r, c).begin());
      std::copy(bg.begin(), bg.end(), post.at(r, c).begin());
    }
  auto paint = [&](const Rect& px_rect, int axis) {
    for (int r = px_rect.y0 / 4; r < px_rect.y1 / 4; ++r)
      for (int c = px_rect.x0 / 4; c < px_rect.x1 / 4; ++c) {
        const auto now = basis(axis, 1.0f);
        const auto before = basis(axis, -1.0f);
        std::copy(now.begin(), now.end(), post.at(r, c).begin());
        std::copy(before.begin(), before.end(), pre.at(r, c).begin());
      }
  };
  for (const auto& r : fx.a_rects) paint(r, kA);
  for (const auto& r : fx.b_rects) paint(r, kB);
  fx.pair.grids = {std::move(pre), std::move(post)};

  auto add = [&](Time t, std::int64_t id, const Rect& r) {
    ProposalRecord rec;
    rec.id = id;
    rec.source_time = t;
    rec.mask = rect_mask(size, {r});
    rec.predicted_iou = 0.95;
    rec.stability_score = 0.97;
    fx.pair.proposals[index_of(t)].push_back(std::move(rec));
  };
  for (std::int64_t base : {0, 10}) {
    const Time t = base == 0 ? Time::t1 : Time::t0;
    for (std::size_t i = 0; i < 3; ++i) {
      add(t, base + static_cast<std::int64_t>(i), fx.a_rects[i]);
      fx.a_ids.push_back(base + static_cast<std::int64_t>(i));
    }
    for (std::size_t i = 0; i < 3; ++i) {
      add(t, base + 3 + static_cast<std::int64_t>(i), fx.b_rects[i]);
      fx.b_ids.push_back(base + 3 + static_cast<std::int64_t>(i));
    }
    add(t, base + 6, background[0]);
    add(t, base + 7, background[1]);
  }
  for (const auto& r : fx.a_rects) {
    fx.a_points.push_back({(r.x0 + r.x1) / 2.0, (r.y0 + r.y1) / 2.0, Time::t1});
  }
  return fx;
}

/// Pair whose two times are identical: no change anywhere.
inline Pair no_change_pair(std::uint64_t seed = 11) {
  Rng rng(seed);
  RandomPairParams p;
  p.min_image = 64;
  p.max_image = 64;
  p.max_grid = 16;
  Pair pair = random_pair(rng, p);
  pair.grids[1] = pair.grids[0];
  return pair;
}

/// Simple RGB rendering of a grid's first three channels, nearest-upsampled to the image size;
/// gives fixtures something to draw overlays on.
inline RgbImage grid_preview(const EmbeddingGrid& g, ImageSize size) {
  RgbImage img(size, 0);
  for (int y = 0; y < size.height; ++y)
    for (int x = 0; x < size.width; ++x) {
      const int r = std::min(g.height() - 1, y * g.height() / size.height);
      const int c = std::min(g.width() - 1, x * g.width() / size.width);
      const auto v = g.at(r, c);
      for (int k = 0; k < 3; ++k) {
        const float val = k < g.channels() ? v[static_cast<std::size_t>(k)] : 0.0f;
        img.pixel(y, x)[k] = static_cast<std::uint8_t>(std::clamp(128.0f + 24.0f * val, 0.0f, 255.0f));
      }
    }
  return img;
}

/// Writes a pair with preview images; returns the manifest path.
inline std::filesystem::path write_with_images(const Pair& pair, const std::filesystem::path& dir,
                                               const std::string& stem) {
  SessionManifest m = pair.write(dir, stem);
  m.images = {stem + ".pre.png", stem + ".post.png"};
  write_rgb_png(grid_preview(pair.grids[0], pair.image_size), dir / m.images[0]);
  write_rgb_png(grid_preview(pair.grids[1], pair.image_size), dir / m.images[1]);
  const auto path = dir / (stem + ".json");
  write_file_bytes(path, to_json(m).dump(2) + "\n");
  return path;
}

}  // namespace latchange::synthetic
