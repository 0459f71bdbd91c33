#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "latchange/error.hpp"
#include "latchange/grid.hpp"
#include "latchange/matching.hpp"
#include "latchange/otsu.hpp"
#include "latchange/parallel.hpp"
#include "latchange/proposal_ops.hpp"
#include "latchange/raster.hpp"
#include "latchange/session.hpp"

namespace latchange {

/// Per-pixel change intensity (ℓ2 norm of the feature difference).
using IntensityMap = Raster<double>;

inline IntensityMap difference_norm(const EmbeddingGrid& pre, const EmbeddingGrid& post) {
  if (pre.shape() != post.shape()) {
    throw Error(ErrorKind::shape_mismatch, "CVA on grids " + to_string(pre.shape()) + " and " + to_string(post.shape()));
  }
  IntensityMap out({pre.height(), pre.width()}, 0.0);
  for (int r = 0; r < pre.height(); ++r) {
    for (int c = 0; c < pre.width(); ++c) {
      const auto a = pre.at(r, c);
      const auto b = post.at(r, c);
      double s = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        s += d * d;
      }
      out.at(r, c) = std::sqrt(s);
    }
  }
  return out;
}

/// Bilinear resize with half-pixel centres (edges clamp).
inline IntensityMap bilinear_upsample(const IntensityMap& src, ImageSize size) {
  IntensityMap out(size, 0.0);
  const int hin = src.height(), win = src.width();
  const double sy = static_cast<double>(hin) / size.height;
  const double sx = static_cast<double>(win) / size.width;
  for (int y = 0; y < size.height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), hin - 1);
    const int y1 = std::min(y0 + 1, hin - 1);
    const double ly = fy - y0;
    for (int x = 0; x < size.width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), win - 1);
      const int x1 = std::min(x0 + 1, win - 1);
      const double lx = fx - x0;
      const double top = src.at(y0, x0) * (1.0 - lx) + src.at(y0, x1) * lx;
      const double bot = src.at(y1, x0) * (1.0 - lx) + src.at(y1, x1) * lx;
      out.at(y, x) = top * (1.0 - ly) + bot * ly;
    }
  }
  return out;
}

struct CvaResult {
  IntensityMap intensity;
  ChangeMap change;
  std::optional<double> threshold;  // nullopt: intensities carried no contrast
};

/// Change vector analysis: difference norm, bilinear upsampling to image size, thresholding at
/// `threshold` or, when absent, at the Otsu threshold of the upsampled intensities.
/// Pixels with intensity ≥ threshold are flagged. Constant intensity yields an empty map.
inline CvaResult cva_change_map(const EmbeddingGrid& pre, const EmbeddingGrid& post, ImageSize image_size,
                                std::optional<double> threshold = std::nullopt) {
  CvaResult res;
  res.intensity = bilinear_upsample(difference_norm(pre, post), image_size);
  res.change = ChangeMap(image_size, 0);
  const auto vals = res.intensity.pixels();
  if (threshold) {
    res.threshold = threshold;
  } else {
    std::vector<double> v(vals.begin(), vals.end());
    try {
      res.threshold = otsu_threshold(v);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate) throw;
      return res;
    }
  }
  auto out = res.change.pixels();
  for (std::size_t i = 0; i < vals.size(); ++i) out[i] = vals[i] >= *res.threshold ? 1 : 0;
  return res;
}

/// Treats an RGB image as a 3-channel grid at full resolution, for pixel-space CVA.
inline EmbeddingGrid rgb_as_grid(const RgbImage& img) {
  std::vector<float> v(img.data.begin(), img.data.end());
  return EmbeddingGrid({img.size.height, img.size.width, 3}, std::move(v));
}

namespace detail {

inline double angle_from_score(double score) {
  return radians_to_degrees(std::acos(std::clamp(-score, -1.0, 1.0)));
}

}  // namespace detail

/// Geometric matching: a proposal is unchanged when some opposite-time proposal overlaps it
/// with IoU > `iou_threshold`. Unmatched proposals become changes scored 1 − max IoU.
inline std::vector<ChangeProposal> mask_match(const Session& session, double iou_threshold = 0.5) {
  std::vector<ChangeProposal> out;
  for (Time t : {Time::t0, Time::t1}) {
    for (const auto& p : session.proposals(t)) {
      double best = 0.0;
      for (const auto& q : session.proposals(other(t))) best = std::max(best, mask_iou(p.mask, q.mask));
      if (best > iou_threshold) continue;
      const double score = 1.0 - best;
      out.push_back({p.mask, t, score, detail::angle_from_score(score), p.id});
    }
  }
  sort_by_rank(out);
  return out;
}

/// Fraction of the mask's pixels flagged in `map`.
inline double flagged_fraction(const RleMask& mask, const ChangeMap& map) {
  std::size_t hit = 0, total = 0;
  for_each_row_segment(mask, [&](int row, int c0, int c1) {
    for (int x = c0; x < c1; ++x) hit += map.at(row, x);
    total += static_cast<std::size_t>(c1 - c0);
  });
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

/// Instance-level voting over a pixel change map: proposals with more than `vote_threshold`
/// of their pixels flagged become changes scored by that fraction.
inline std::vector<ChangeProposal> vote_on_map(const Session& session, const ChangeMap& map,
                                               double vote_threshold = 0.5, unsigned jobs = 1) {
  std::vector<const ProposalRecord*> all;
  for (Time t : {Time::t0, Time::t1})
    for (const auto& p : session.proposals(t)) all.push_back(&p);
  std::vector<double> frac(all.size());
  parallel_for(all.size(), jobs, [&](std::size_t i) { frac[i] = flagged_fraction(all[i]->mask, map); });
  std::vector<ChangeProposal> out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (frac[i] > vote_threshold) {
      out.push_back({all[i]->mask, all[i]->source_time, frac[i], detail::angle_from_score(frac[i]), all[i]->id});
    }
  }
  sort_by_rank(out);
  return out;
}

/// CVA on the session's own grids (Otsu threshold) followed by instance-level voting.
inline std::vector<ChangeProposal> cva_match(const Session& session, double vote_threshold = 0.5,
                                             unsigned jobs = 1) {
  const CvaResult cva = cva_change_map(session.grid(Time::t0), session.grid(Time::t1), session.image_size());
  return vote_on_map(session, cva.change, vote_threshold, jobs);
}

}  // namespace latchange
