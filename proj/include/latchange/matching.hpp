#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latchange/error.hpp"
#include "latchange/otsu.hpp"
#include "latchange/parallel.hpp"
#include "latchange/proposal_ops.hpp"
#include "latchange/records.hpp"
#include "latchange/session.hpp"

namespace latchange {

enum class SelectionMode { topk, angle_threshold, auto_otsu };
enum class Scoring { cosine, eq1_raw };
enum class Direction { bidirectional, t0_to_t1, t1_to_t0 };

inline SelectionMode parse_selection_mode(std::string_view s) {
  if (s == "topk") return SelectionMode::topk;
  if (s == "threshold" || s == "angle_threshold" || s == "angle") return SelectionMode::angle_threshold;
  if (s == "auto" || s == "auto_otsu" || s == "otsu") return SelectionMode::auto_otsu;
  throw Error(ErrorKind::invalid_argument, "unknown selection mode '" + std::string(s) + "'");
}

inline Scoring parse_scoring(std::string_view s) {
  if (s == "cosine") return Scoring::cosine;
  if (s == "eq1_raw" || s == "raw") return Scoring::eq1_raw;
  throw Error(ErrorKind::invalid_argument, "unknown scoring '" + std::string(s) + "'");
}

inline Direction parse_direction(std::string_view s) {
  if (s == "bidirectional" || s == "bi") return Direction::bidirectional;
  if (s == "t_to_t1" || s == "t0_to_t1" || s == "forward") return Direction::t0_to_t1;
  if (s == "t1_to_t" || s == "t1_to_t0" || s == "backward") return Direction::t1_to_t0;
  throw Error(ErrorKind::invalid_argument, "unknown direction '" + std::string(s) + "'");
}

inline constexpr double kDefaultChangeAngle = 155.0;
inline constexpr int kAngleHistogramBins = 256;

struct MatchConfig {
  SelectionMode mode = SelectionMode::angle_threshold;
  int k = 100;
  double angle_threshold_deg = kDefaultChangeAngle;
  Scoring scoring = Scoring::cosine;
  Direction direction = Direction::bidirectional;
  std::optional<double> dedupe_iou;
  unsigned jobs = 1;

  /// Thresholds 0 and 180 are accepted as the two bounds: 0 keeps every candidate and 180
  /// keeps none.
  void validate() const {
    if (mode == SelectionMode::topk && k < 1) {
      throw Error(ErrorKind::invalid_argument, "k must be at least 1 for top-k selection");
    }
    if (!(angle_threshold_deg >= 0.0 && angle_threshold_deg <= 180.0)) {
      throw Error(ErrorKind::invalid_argument, "angle threshold must lie in [0, 180]");
    }
    if (dedupe_iou && !(*dedupe_iou >= 0.0 && *dedupe_iou <= 1.0)) {
      throw Error(ErrorKind::invalid_argument, "dedupe IoU must lie in [0, 1]");
    }
  }
};

struct ScoreAngle {
  double score = 0.0;
  double angle_deg = 0.0;
};

inline double radians_to_degrees(double r) { return r * 180.0 / std::numbers::pi; }

/// Angle between two vectors in degrees; 90 when either vector is zero.
inline double angle_between(std::span<const double> x, std::span<const double> y) {
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == 0.0 || ny == 0.0) return 90.0;
  const double cos = std::clamp(dot / std::sqrt(nx * ny), -1.0, 1.0);
  return radians_to_degrees(std::acos(cos));
}

/// Change confidence of two mask embeddings. Cosine scoring is the negative cosine similarity;
/// eq1_raw is −(x·y)/d_m, which coincides with it when both vectors have norm √d_m. The angle
/// always comes from the normalised cosine.
inline ScoreAngle change_score(std::span<const double> x, std::span<const double> y,
                               Scoring scoring = Scoring::cosine) {
  if (x.size() != y.size()) throw Error(ErrorKind::shape_mismatch, "embeddings differ in dimension");
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  const bool zero = nx == 0.0 || ny == 0.0;
  if (zero && scoring == Scoring::cosine) {
    throw Error(ErrorKind::degenerate, "zero-norm mask embedding under cosine scoring");
  }
  const double cos = zero ? 0.0 : std::clamp(dot / std::sqrt(nx * ny), -1.0, 1.0);
  ScoreAngle out;
  out.angle_deg = radians_to_degrees(std::acos(cos));
  out.score = scoring == Scoring::cosine ? -cos : -dot / static_cast<double>(x.size());
  return out;
}

inline ScoreAngle change_score(const MaskEmbedding& x, const MaskEmbedding& y, Scoring scoring = Scoring::cosine) {
  return change_score(x.vector, y.vector, scoring);
}

/// Ranking order: score descending, then T0 before T1, then ascending proposal id.
inline bool ranks_before(const ChangeProposal& a, const ChangeProposal& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.source_time != b.source_time) return a.source_time == Time::t0;
  return a.proposal_id < b.proposal_id;
}

inline void sort_by_rank(std::vector<ChangeProposal>& changes) {
  std::sort(changes.begin(), changes.end(), ranks_before);
}

/// A scored candidate together with the two pooled embeddings that produced it.
struct ScoredCandidate {
  ChangeProposal change;
  std::vector<double> own;    // pooled on the proposal's own-time grid
  std::vector<double> cross;  // pooled on the other-time grid, same footprint
};

/// Scores every proposal of the participating times against the opposite grid. Output order:
/// T0 proposals in stored order, then T1 proposals.
inline std::vector<ScoredCandidate> score_candidates(const Session& session, Scoring scoring = Scoring::cosine,
                                                     Direction direction = Direction::bidirectional,
                                                     unsigned jobs = 1) {
  struct Job {
    Time time;
    const ProposalRecord* record;
  };
  std::vector<Job> work;
  if (direction != Direction::t1_to_t0)
    for (const auto& p : session.proposals(Time::t0)) work.push_back({Time::t0, &p});
  if (direction != Direction::t0_to_t1)
    for (const auto& p : session.proposals(Time::t1)) work.push_back({Time::t1, &p});

  std::vector<ScoredCandidate> out(work.size());
  const GridShape shape = session.grid_shape();
  parallel_for(work.size(), jobs, [&](std::size_t i) {
    const auto& job = work[i];
    const GridFootprint fp = project_mask_to_grid(job.record->mask, shape);
    auto& c = out[i];
    c.own = pool_embedding(session.grid(job.time), fp);
    c.cross = pool_embedding(session.grid(other(job.time)), fp);
    const ScoreAngle sa = change_score(c.own, c.cross, scoring);
    c.change = ChangeProposal{job.record->mask, job.time, sa.score, sa.angle_deg, job.record->id};
  });
  return out;
}

inline std::vector<ChangeProposal> candidate_changes(const std::vector<ScoredCandidate>& scored) {
  std::vector<ChangeProposal> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.change);
  return out;
}

/// Greedy suppression over ranked change proposals: a proposal is dropped when its mask IoU
/// with an already-kept one exceeds `iou_threshold`.
inline std::vector<ChangeProposal> dedupe_changes(const std::vector<ChangeProposal>& ranked, double iou_threshold) {
  std::vector<ChangeProposal> kept;
  for (const auto& c : ranked) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (mask_iou(c.mask, k.mask) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

/// Otsu threshold over the candidate angles on a fixed [0°, 180°] histogram; nullopt when the
/// angles carry no contrast.
inline std::optional<double> auto_angle_threshold(const std::vector<ChangeProposal>& candidates) {
  std::vector<double> angles;
  angles.reserve(candidates.size());
  for (const auto& c : candidates) angles.push_back(c.angle_deg);
  try {
    return otsu_threshold(angles, kAngleHistogramBins, ValueRange{0.0, 180.0});
  } catch (const Error&) {
    return std::nullopt;
  }
}

struct Selection {
  std::vector<ChangeProposal> changes;  // ranked
  std::optional<double> threshold_deg;  // angle threshold applied, if any
};

inline std::vector<ChangeProposal> keep_above_angle(const std::vector<ChangeProposal>& ranked, double threshold) {
  std::vector<ChangeProposal> out;
  if (threshold >= 180.0) return out;
  for (const auto& c : ranked)
    if (threshold <= 0.0 || c.angle_deg >= threshold) out.push_back(c);
  return out;
}

/// Applies the configured selection to a candidate set.
inline Selection select_changes(std::vector<ChangeProposal> candidates, const MatchConfig& config) {
  config.validate();
  sort_by_rank(candidates);
  if (config.dedupe_iou) candidates = dedupe_changes(candidates, *config.dedupe_iou);

  Selection sel;
  switch (config.mode) {
    case SelectionMode::topk:
      if (candidates.size() > static_cast<std::size_t>(config.k)) candidates.resize(static_cast<std::size_t>(config.k));
      sel.changes = std::move(candidates);
      break;
    case SelectionMode::angle_threshold:
      sel.threshold_deg = config.angle_threshold_deg;
      sel.changes = keep_above_angle(candidates, config.angle_threshold_deg);
      break;
    case SelectionMode::auto_otsu:
      // No angle contrast (e.g. every candidate unchanged): fall back to the fixed threshold.
      sel.threshold_deg = auto_angle_threshold(candidates).value_or(config.angle_threshold_deg);
      sel.changes = keep_above_angle(candidates, *sel.threshold_deg);
      break;
  }
  return sel;
}

/// Bidirectional bitemporal latent matching followed by selection.
inline std::vector<ChangeProposal> bitemporal_latent_match(const Session& session, const MatchConfig& config) {
  config.validate();
  auto scored = score_candidates(session, config.scoring, config.direction, config.jobs);
  return select_changes(candidate_changes(scored), config).changes;
}

// ---------------------------------------------------------------------------------------------
// Point queries

struct QueryPoint {
  double x = 0.0;
  double y = 0.0;
  Time time = Time::t0;
};

inline constexpr double kDefaultSemanticAngle = 60.0;
inline constexpr double kPointResolveRadius = 50.0;

struct PointQuery {
  std::vector<QueryPoint> points;
  double semantic_angle_deg = kDefaultSemanticAngle;
};

/// Proposal a clicked point refers to: the smallest mask containing it, else the proposal with
/// the nearest centroid within `radius` pixels. Ties go to the lower id.
inline const ProposalRecord& resolve_point_to_proposal(const QueryPoint& point,
                                                       std::span<const ProposalRecord> proposals,
                                                       double radius = kPointResolveRadius) {
  const ProposalRecord* best = nullptr;
  std::size_t best_area = 0;
  const int px = static_cast<int>(std::floor(point.x));
  const int py = static_cast<int>(std::floor(point.y));
  for (const auto& p : proposals) {
    if (!mask_contains(p.mask, px, py)) continue;
    const std::size_t area = mask_area(p.mask);
    if (!best || area < best_area || (area == best_area && p.id < best->id)) {
      best = &p;
      best_area = area;
    }
  }
  if (best) return *best;

  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& p : proposals) {
    const Centroid c = mask_centroid(p.mask);
    const double d = std::hypot(c.x - point.x, c.y - point.y);
    if (d < best_dist || (d == best_dist && best && p.id < best->id)) {
      best = &p;
      best_dist = d;
    }
  }
  if (!best || best_dist > radius) {
    std::string msg = "no proposal contains (" + std::to_string(point.x) + ", " + std::to_string(point.y) +
                      ") at " + std::string(to_string(point.time));
    if (best) msg += "; nearest centroid is " + std::to_string(best_dist) + " px away";
    msg += " (radius " + std::to_string(radius) + " px)";
    throw Error(ErrorKind::unresolvable_point, msg);
  }
  return *best;
}

/// Mean of the query proposals' mask embeddings, each pooled on its own point's time grid.
inline std::vector<double> query_embedding(const PointQuery& query, const Session& session) {
  if (query.points.empty()) throw Error(ErrorKind::invalid_argument, "a point query needs at least one point");
  const ImageSize size = session.image_size();
  std::vector<double> sum(static_cast<std::size_t>(session.channels()), 0.0);
  for (const auto& pt : query.points) {
    if (!(pt.x >= 0.0 && pt.y >= 0.0 && pt.x < size.width && pt.y < size.height)) {
      throw Error(ErrorKind::invalid_argument, "query point (" + std::to_string(pt.x) + ", " +
                                                   std::to_string(pt.y) + ") lies outside the image");
    }
    const auto& rec = resolve_point_to_proposal(pt, session.proposals(pt.time));
    const auto v = pool_embedding(session.grid(pt.time), project_mask_to_grid(rec.mask, session.grid_shape()));
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += v[k];
  }
  const double n = static_cast<double>(query.points.size());
  for (auto& s : sum) s /= n;
  if (squared_norm(sum) == 0.0) throw Error(ErrorKind::degenerate, "query embedding has zero norm");
  return sum;
}

/// Keeps change proposals whose embedding at either time lies within the semantic angle of the
/// averaged query embedding. Order and scores are preserved.
inline std::vector<ChangeProposal> point_query_filter(const std::vector<ChangeProposal>& changes,
                                                      const PointQuery& query, const Session& session,
                                                      unsigned jobs = 1) {
  const std::vector<double> q = query_embedding(query, session);
  std::vector<char> keep(changes.size(), 0);
  parallel_for(changes.size(), jobs, [&](std::size_t i) {
    const GridFootprint fp = project_mask_to_grid(changes[i].mask, session.grid_shape());
    const double a0 = angle_between(q, pool_embedding(session.grid(Time::t0), fp));
    const double a1 = angle_between(q, pool_embedding(session.grid(Time::t1), fp));
    keep[i] = std::min(a0, a1) <= query.semantic_angle_deg ? 1 : 0;
  });
  std::vector<ChangeProposal> out;
  for (std::size_t i = 0; i < changes.size(); ++i)
    if (keep[i]) out.push_back(changes[i]);
  return out;
}

/// Pixel-level change map: union of the change masks.
inline ChangeMap rasterize_changes(const std::vector<ChangeProposal>& changes, ImageSize size) {
  ChangeMap map(size, 0);
  for (const auto& c : changes) {
    if (c.mask.size != size) throw Error(ErrorKind::shape_mismatch, "change mask size differs from map size");
    for_each_row_segment(c.mask, [&](int row, int c0, int c1) {
      for (int x = c0; x < c1; ++x) map.at(row, x) = 1;
    });
  }
  return map;
}

}  // namespace latchange
