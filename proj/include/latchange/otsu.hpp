#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "latchange/error.hpp"

namespace latchange {

struct ValueRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Histogram bin of v over [lo, hi) split into `bins` equal bins; out-of-range values clamp.
inline int histogram_bin(double v, ValueRange range, int bins) {
  const double t = (v - range.lo) / (range.hi - range.lo) * bins;
  if (!(t > 0.0)) return 0;
  return std::min(bins - 1, static_cast<int>(t));
}

struct OtsuResult {
  double threshold = 0.0;  // upper edge of the last background bin
  int split = 0;           // background = bins [0, split)
};

/// Otsu's threshold over a `bins`-bin histogram. Returns the lowest split maximising the
/// between-class variance; values ≥ threshold form the foreground class. When no range is given
/// the observed [min, max] is used.
inline OtsuResult otsu(std::span<const double> values, int bins = 256,
                       std::optional<ValueRange> range = std::nullopt) {
  if (bins < 2) throw Error(ErrorKind::invalid_argument, "otsu needs at least 2 bins");
  if (values.empty()) throw Error(ErrorKind::degenerate, "otsu on an empty value set");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  if (*mn == *mx) throw Error(ErrorKind::degenerate, "otsu on identical values");
  const ValueRange r = range.value_or(ValueRange{*mn, *mx});
  if (!(r.hi > r.lo)) throw Error(ErrorKind::invalid_argument, "otsu range must be non-empty");

  std::vector<std::int64_t> hist(static_cast<std::size_t>(bins), 0);
  for (double v : values) ++hist[static_cast<std::size_t>(histogram_bin(v, r, bins))];

  // Bin indices stand in for bin centres; between-class variance is affine-invariant up to a
  // constant factor, and integer moments make the comparison exact.
  std::int64_t n_total = 0, s_total = 0;
  for (int b = 0; b < bins; ++b) {
    n_total += hist[static_cast<std::size_t>(b)];
    s_total += hist[static_cast<std::size_t>(b)] * b;
  }
  std::int64_t n0 = 0, s0 = 0;
  double best = -1.0;
  int best_split = -1;
  for (int t = 1; t < bins; ++t) {
    n0 += hist[static_cast<std::size_t>(t - 1)];
    s0 += hist[static_cast<std::size_t>(t - 1)] * (t - 1);
    const std::int64_t n1 = n_total - n0;
    const std::int64_t s1 = s_total - s0;
    if (n0 == 0 || n1 == 0) continue;
    const double diff = static_cast<double>(n1 * s0 - n0 * s1);
    const double score = diff * diff / (static_cast<double>(n0) * static_cast<double>(n1));
    if (score > best) {
      best = score;
      best_split = t;
    }
  }
  if (best_split < 0) throw Error(ErrorKind::degenerate, "all values fall into a single histogram bin");
  return {r.lo + (r.hi - r.lo) * best_split / bins, best_split};
}

inline double otsu_threshold(std::span<const double> values, int bins = 256,
                             std::optional<ValueRange> range = std::nullopt) {
  return otsu(values, bins, range).threshold;
}

}  // namespace latchange
