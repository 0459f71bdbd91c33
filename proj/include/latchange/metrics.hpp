#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latchange/error.hpp"
#include "latchange/proposal_ops.hpp"
#include "latchange/raster.hpp"
#include "latchange/records.hpp"

namespace latchange {

struct PixelReport {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  /// Precision and recall with an empty denominator are 0, never NaN.
  static PixelReport from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
    PixelReport r{tp, fp, fn};
    r.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
  }
};

inline PixelReport pixel_prf(const ChangeMap& pred, const ChangeMap& gt) {
  if (pred.size() != gt.size()) throw Error(ErrorKind::shape_mismatch, "prediction and ground truth differ in size");
  std::uint64_t tp = 0, fp = 0, fn = 0;
  const auto p = pred.pixels();
  const auto g = gt.pixels();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pi = p[i] != 0, gi = g[i] != 0;
    tp += pi && gi;
    fp += pi && !gi;
    fn += !pi && gi;
  }
  return PixelReport::from_counts(tp, fp, fn);
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
inline std::array<double, 10> ar_iou_thresholds() {
  std::array<double, 10> t{};
  for (int i = 0; i < 10; ++i) t[static_cast<std::size_t>(i)] = (50 + 5 * i) / 100.0;
  return t;
}

struct InstanceReport {
  double ar = 0.0;
  std::vector<std::pair<double, double>> per_iou_recall;  // (threshold, recall)
  int max_dets = 1000;
};

/// COCO-style mask average recall. Predictions are ranked by descending score (stable) and
/// truncated to `max_dets`; at each IoU threshold every prediction in turn claims the unmatched
/// ground truth of highest IoU at or above the threshold.
inline InstanceReport mask_ar(std::vector<ChangeProposal> preds, const std::vector<RleMask>& gts,
                              int max_dets = 1000) {
  if (gts.empty()) throw Error(ErrorKind::invalid_argument, "mask AR needs at least one ground-truth mask");
  std::stable_sort(preds.begin(), preds.end(),
                   [](const ChangeProposal& a, const ChangeProposal& b) { return a.score > b.score; });
  if (preds.size() > static_cast<std::size_t>(std::max(0, max_dets))) preds.resize(static_cast<std::size_t>(std::max(0, max_dets)));

  std::vector<std::vector<double>> iou(preds.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t p = 0; p < preds.size(); ++p)
    for (std::size_t g = 0; g < gts.size(); ++g) iou[p][g] = mask_iou(preds[p].mask, gts[g]);

  InstanceReport rep;
  rep.max_dets = max_dets;
  double sum = 0.0;
  for (double tau : ar_iou_thresholds()) {
    std::vector<char> taken(gts.size(), 0);
    std::size_t matched = 0;
    for (std::size_t p = 0; p < preds.size(); ++p) {
      int best = -1;
      double best_iou = tau;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (taken[g]) continue;
        if (iou[p][g] >= best_iou && (best < 0 || iou[p][g] > best_iou)) {
          best = static_cast<int>(g);
          best_iou = iou[p][g];
        }
      }
      if (best >= 0) {
        taken[static_cast<std::size_t>(best)] = 1;
        ++matched;
      }
    }
    const double recall = static_cast<double>(matched) / static_cast<double>(gts.size());
    rep.per_iou_recall.emplace_back(tau, recall);
    sum += recall;
  }
  rep.ar = sum / static_cast<double>(rep.per_iou_recall.size());
  return rep;
}

/// Multi-class change labels to binary: nonzero → 1.
template <typename T>
ChangeMap binarize_gt(const Raster<T>& labels) {
  ChangeMap out(labels.size(), 0);
  const auto src = labels.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] != T{} ? 1 : 0;
  return out;
}

/// Dataset-level aggregation: pixel counts are summed before computing P/R/F1 (micro), and
/// per-pair scores are also averaged (macro). AR is macro-averaged over pairs.
class EvalAccumulator {
 public:
  void add_pixel(const PixelReport& r) {
    tp_ += r.tp;
    fp_ += r.fp;
    fn_ += r.fn;
    pixel_reports_.push_back(r);
  }
  void add_instance(const InstanceReport& r) { ars_.push_back(r.ar); }

  std::size_t pixel_pairs() const noexcept { return pixel_reports_.size(); }
  std::size_t instance_pairs() const noexcept { return ars_.size(); }

  PixelReport micro() const { return PixelReport::from_counts(tp_, fp_, fn_); }

  PixelReport macro() const {
    PixelReport m;
    if (pixel_reports_.empty()) return m;
    for (const auto& r : pixel_reports_) {
      m.precision += r.precision;
      m.recall += r.recall;
      m.f1 += r.f1;
    }
    const double n = static_cast<double>(pixel_reports_.size());
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
    m.tp = tp_;
    m.fp = fp_;
    m.fn = fn_;
    return m;
  }

  double mean_ar() const {
    if (ars_.empty()) return 0.0;
    return std::accumulate(ars_.begin(), ars_.end(), 0.0) / static_cast<double>(ars_.size());
  }

 private:
  std::uint64_t tp_ = 0, fp_ = 0, fn_ = 0;
  std::vector<PixelReport> pixel_reports_;
  std::vector<double> ars_;
};

inline nlohmann::ordered_json to_json(const PixelReport& r) {
  return {{"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
}

/// Aligned table with the columns F1, Prec., Rec., mask AR (percentages, one decimal).
/// Missing values print as "-".
struct TableRow {
  std::string method;
  std::optional<PixelReport> pixel;
  std::optional<double> ar;
};

inline std::string format_table(const std::vector<TableRow>& rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.method.size());
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.insert(s.begin(), w - s.size(), ' ');
    return s;
  };
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
    return std::string(buf);
  };
  std::string out;
  std::string head = "Method";
  head.resize(width, ' ');
  out += head + " | " + pad("F1", 6) + " | " + pad("Prec.", 6) + " | " + pad("Rec.", 6) + " | " + pad("mask AR", 7) + "\n";
  out += std::string(width, '-') + "-+-" + std::string(6, '-') + "-+-" + std::string(6, '-') + "-+-" +
         std::string(6, '-') + "-+-" + std::string(7, '-') + "\n";
  for (const auto& r : rows) {
    std::string name = r.method;
    name.resize(width, ' ');
    out += name + " | " + pad(r.pixel ? pct(r.pixel->f1) : "-", 6) + " | " +
           pad(r.pixel ? pct(r.pixel->precision) : "-", 6) + " | " + pad(r.pixel ? pct(r.pixel->recall) : "-", 6) +
           " | " + pad(r.ar ? pct(*r.ar) : "-", 7) + "\n";
  }
  return out;
}

}  // namespace latchange
