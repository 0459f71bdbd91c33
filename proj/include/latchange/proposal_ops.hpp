#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "latchange/error.hpp"
#include "latchange/grid.hpp"
#include "latchange/parallel.hpp"
#include "latchange/records.hpp"
#include "latchange/rle.hpp"

namespace latchange {

/// |a∩b| / |a∪b|.
inline double mask_iou(const RleMask& a, const RleMask& b) {
  if (a.size != b.size) throw Error(ErrorKind::shape_mismatch, "mask_iou on masks of different size");
  const std::size_t inter = intersection_area(a, b);
  const std::size_t uni = mask_area(a) + mask_area(b) - inter;
  if (uni == 0) throw Error(ErrorKind::empty_mask, "mask_iou of two empty masks");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct QualityThresholds {
  double min_predicted_iou = 0.5;
  double min_stability = 0.8;
};

/// Keeps proposals meeting both thresholds (inclusive); order preserved.
inline std::vector<ProposalRecord> quality_filter(std::span<const ProposalRecord> candidates,
                                                  QualityThresholds thresholds = {}) {
  if (!(thresholds.min_predicted_iou >= 0.0 && thresholds.min_predicted_iou <= 1.0) ||
      !(thresholds.min_stability >= 0.0 && thresholds.min_stability <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "quality thresholds must lie in [0, 1]");
  }
  std::vector<ProposalRecord> out;
  for (const auto& r : candidates) {
    if (r.predicted_iou >= thresholds.min_predicted_iou && r.stability_score >= thresholds.min_stability) {
      out.push_back(r);
    }
  }
  return out;
}

/// Greedy mask NMS keyed on predicted_iou (ties: lower id first). A proposal is dropped when
/// its IoU with an already-kept proposal exceeds `iou_threshold`. Output is in ranking order.
inline std::vector<ProposalRecord> nms(std::span<const ProposalRecord> proposals, double iou_threshold = 0.7) {
  std::vector<std::size_t> order(proposals.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (proposals[a].predicted_iou != proposals[b].predicted_iou)
      return proposals[a].predicted_iou > proposals[b].predicted_iou;
    return proposals[a].id < proposals[b].id;
  });
  std::vector<ProposalRecord> kept;
  for (std::size_t idx : order) {
    const auto& cand = proposals[idx];
    bool suppressed = false;
    for (const auto& k : kept) {
      if (mask_iou(cand.mask, k.mask) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

struct GridCell {
  int row = 0;
  int col = 0;
  friend bool operator==(const GridCell&, const GridCell&) = default;
  friend auto operator<=>(const GridCell&, const GridCell&) = default;
};

/// Cells of the embedding grid that a full-resolution mask occupies.
struct GridFootprint {
  std::vector<GridCell> cells;  // row-major order
  bool fallback_used = false;
};

/// A cell belongs to the footprint when the mask covers at least half of the image area the
/// cell spans. Cell extents need not align with pixel boundaries; coverage is computed exactly
/// in integer units scaled by the grid dimensions. Masks too thin to cover half of any cell
/// fall back to the cell containing the mask centroid.
inline GridFootprint project_mask_to_grid(const RleMask& mask, int grid_height, int grid_width) {
  if (grid_height <= 0 || grid_width <= 0) {
    throw Error(ErrorKind::invalid_argument, "grid dimensions must be positive");
  }
  const std::int64_t h = mask.size.height;
  const std::int64_t w = mask.size.width;
  const std::int64_t gh = grid_height;
  const std::int64_t gw = grid_width;
  if (mask_area(mask) == 0) throw Error(ErrorKind::empty_mask, "cannot project an empty mask");

  // In scaled units pixel row y spans [y*gh, (y+1)*gh) and cell row r spans [r*h, (r+1)*h).
  std::vector<std::int64_t> coverage(static_cast<std::size_t>(gh * gw), 0);
  std::vector<std::int64_t> row_cov(static_cast<std::size_t>(gw), 0);
  int last_row = -1;
  auto flush_row = [&](int y) {
    const std::int64_t y0 = y * gh, y1 = (y + 1) * gh;
    for (std::int64_t r = y0 / h; r <= (y1 - 1) / h && r < gh; ++r) {
      const std::int64_t oy = std::min(y1, (r + 1) * h) - std::max(y0, r * h);
      if (oy <= 0) continue;
      for (std::int64_t c = 0; c < gw; ++c) {
        if (row_cov[static_cast<std::size_t>(c)] != 0)
          coverage[static_cast<std::size_t>(r * gw + c)] += oy * row_cov[static_cast<std::size_t>(c)];
      }
    }
    std::fill(row_cov.begin(), row_cov.end(), 0);
  };
  for_each_row_segment(mask, [&](int y, int c0, int c1) {
    if (y != last_row) {
      if (last_row >= 0) flush_row(last_row);
      last_row = y;
    }
    const std::int64_t x0 = c0 * gw, x1 = c1 * gw;
    for (std::int64_t c = x0 / w; c <= (x1 - 1) / w && c < gw; ++c) {
      const std::int64_t ox = std::min(x1, (c + 1) * w) - std::max(x0, c * w);
      if (ox > 0) row_cov[static_cast<std::size_t>(c)] += ox;
    }
  });
  if (last_row >= 0) flush_row(last_row);

  GridFootprint fp;
  const std::int64_t cell_area = h * w;
  for (std::int64_t r = 0; r < gh; ++r)
    for (std::int64_t c = 0; c < gw; ++c)
      if (2 * coverage[static_cast<std::size_t>(r * gw + c)] >= cell_area)
        fp.cells.push_back({static_cast<int>(r), static_cast<int>(c)});

  if (fp.cells.empty()) {
    const Centroid ct = mask_centroid(mask);
    const int r = std::clamp(static_cast<int>(std::floor(ct.y * static_cast<double>(gh) / static_cast<double>(h))), 0,
                             grid_height - 1);
    const int c = std::clamp(static_cast<int>(std::floor(ct.x * static_cast<double>(gw) / static_cast<double>(w))), 0,
                             grid_width - 1);
    fp.cells.push_back({r, c});
    fp.fallback_used = true;
  }
  return fp;
}

inline GridFootprint project_mask_to_grid(const RleMask& mask, const GridShape& shape) {
  return project_mask_to_grid(mask, shape.height, shape.width);
}

/// Mean of grid vectors over the footprint cells, accumulated in double in cell order.
inline std::vector<double> pool_embedding(const EmbeddingGrid& grid, const GridFootprint& footprint) {
  if (footprint.cells.empty()) throw Error(ErrorKind::empty_mask, "empty footprint");
  std::vector<double> acc(static_cast<std::size_t>(grid.channels()), 0.0);
  for (const auto& cell : footprint.cells) {
    if (cell.row < 0 || cell.col < 0 || cell.row >= grid.height() || cell.col >= grid.width()) {
      throw Error(ErrorKind::invalid_argument, "footprint cell out of bounds");
    }
    const auto v = grid.at(cell.row, cell.col);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += static_cast<double>(v[k]);
  }
  const double n = static_cast<double>(footprint.cells.size());
  for (auto& a : acc) a /= n;
  return acc;
}

/// Pooled d_m-vector of a proposal footprint over one time's grid.
struct MaskEmbedding {
  std::vector<double> vector;
  std::int64_t proposal_id = 0;
  Time embedding_time = Time::t0;  // grid the vector was pooled from
  Time mask_time = Time::t0;       // proposal that supplied the footprint
  bool degenerate = false;         // zero norm
};

inline double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline MaskEmbedding mask_embedding(const EmbeddingGrid& grid, const GridFootprint& footprint,
                                    std::int64_t proposal_id = 0, Time embedding_time = Time::t0,
                                    Time mask_time = Time::t0) {
  MaskEmbedding e;
  e.vector = pool_embedding(grid, footprint);
  e.proposal_id = proposal_id;
  e.embedding_time = embedding_time;
  e.mask_time = mask_time;
  e.degenerate = squared_norm(e.vector) == 0.0;
  return e;
}

/// Footprints for a batch of proposals; slot i belongs to proposals[i].
inline std::vector<GridFootprint> project_all(std::span<const ProposalRecord> proposals, const GridShape& shape,
                                              unsigned jobs = 1) {
  std::vector<GridFootprint> out(proposals.size());
  parallel_for(proposals.size(), jobs,
               [&](std::size_t i) { out[i] = project_mask_to_grid(proposals[i].mask, shape); });
  return out;
}

}  // namespace latchange
