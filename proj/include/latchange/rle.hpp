#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "latchange/error.hpp"
#include "latchange/raster.hpp"

namespace latchange {

/// Run-length encoded binary mask. Runs follow a row-major scan and
/// alternate background/foreground, starting with a (possibly empty)
/// background run.
struct RleMask {
  ImageSize size{};
  std::vector<std::uint32_t> counts;

  friend bool operator==(const RleMask&, const RleMask&) = default;
};

enum class ScanOrder { row_major, column_major };

namespace detail {

inline std::vector<std::uint32_t> encode_scan(ImageSize size, auto&& value_at) {
  std::vector<std::uint32_t> counts;
  const std::size_t n = size.area();
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t v = value_at(i) ? 1 : 0;
    if (v != current) {
      counts.push_back(run);
      run = 0;
      current = v;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

}  // namespace detail

/// Checks that the runs tile the mask exactly.
inline void validate_rle(const RleMask& rle) {
  std::uint64_t total = 0;
  for (auto c : rle.counts) total += c;
  if (total > rle.size.area()) {
    throw Error(ErrorKind::format, "rle counts overflow the mask size (" + std::to_string(total) +
                                       " > " + std::to_string(rle.size.area()) + ")");
  }
  if (total < rle.size.area()) {
    throw Error(ErrorKind::format, "rle counts do not cover the mask size (" +
                                       std::to_string(total) + " < " +
                                       std::to_string(rle.size.area()) + ")");
  }
}

inline RleMask encode_rle(const BinaryRaster& mask) {
  auto px = mask.pixels();
  return RleMask{mask.size(), detail::encode_scan(mask.size(), [&](std::size_t i) { return px[i]; })};
}

inline BinaryRaster decode_rle(const RleMask& rle) {
  validate_rle(rle);
  BinaryRaster out(rle.size, 0);
  auto px = out.pixels();
  std::size_t pos = 0;
  std::uint8_t v = 0;
  for (auto c : rle.counts) {
    if (v) std::fill_n(px.begin() + static_cast<std::ptrdiff_t>(pos), c, std::uint8_t{1});
    pos += c;
    v ^= 1;
  }
  return out;
}

/// Calls fn(begin, length) for every foreground run, in flat row-major indices.
template <typename Fn>
void for_each_foreground_run(const RleMask& rle, Fn&& fn) {
  std::size_t pos = 0;
  bool fg = false;
  for (auto c : rle.counts) {
    if (fg && c > 0) fn(pos, static_cast<std::size_t>(c));
    pos += c;
    fg = !fg;
  }
}

/// Calls fn(row, col_begin, col_end) for every foreground segment, split at row ends.
template <typename Fn>
void for_each_row_segment(const RleMask& rle, Fn&& fn) {
  const std::size_t w = static_cast<std::size_t>(rle.size.width);
  if (w == 0) return;
  for_each_foreground_run(rle, [&](std::size_t begin, std::size_t len) {
    std::size_t pos = begin;
    const std::size_t end = begin + len;
    while (pos < end) {
      const std::size_t row = pos / w;
      const std::size_t col = pos % w;
      const std::size_t stop = std::min(end, (row + 1) * w);
      fn(static_cast<int>(row), static_cast<int>(col), static_cast<int>(col + (stop - pos)));
      pos = stop;
    }
  });
}

inline std::size_t mask_area(const RleMask& rle) {
  std::size_t a = 0;
  for (std::size_t i = 1; i < rle.counts.size(); i += 2) a += rle.counts[i];
  return a;
}

/// |a ∩ b| by merging the two run sequences.
inline std::size_t intersection_area(const RleMask& a, const RleMask& b) {
  std::size_t ia = 0, ib = 0;
  std::size_t ra = a.counts.empty() ? 0 : a.counts[0];
  std::size_t rb = b.counts.empty() ? 0 : b.counts[0];
  bool fa = false, fb = false;
  std::size_t inter = 0;
  while (ia < a.counts.size() && ib < b.counts.size()) {
    const std::size_t step = std::min(ra, rb);
    if (fa && fb) inter += step;
    ra -= step;
    rb -= step;
    while (ra == 0 && ++ia < a.counts.size()) {
      ra = a.counts[ia];
      fa = !fa;
    }
    while (rb == 0 && ++ib < b.counts.size()) {
      rb = b.counts[ib];
      fb = !fb;
    }
  }
  return inter;
}

inline bool mask_contains(const RleMask& rle, int x, int y) {
  if (x < 0 || y < 0 || x >= rle.size.width || y >= rle.size.height) return false;
  const std::size_t target = static_cast<std::size_t>(y) * rle.size.width + x;
  std::size_t pos = 0;
  bool fg = false;
  for (auto c : rle.counts) {
    if (target < pos + c) return fg;
    pos += c;
    fg = !fg;
  }
  return false;
}

struct Centroid {
  double x = 0.0;
  double y = 0.0;
};

/// Mean of foreground pixel centres, in pixel coordinates (centre of pixel (0,0) is (0.5, 0.5)).
inline Centroid mask_centroid(const RleMask& rle) {
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for_each_row_segment(rle, [&](int row, int c0, int c1) {
    const std::size_t len = static_cast<std::size_t>(c1 - c0);
    sy += (row + 0.5) * static_cast<double>(len);
    // sum of (c + 0.5) for c in [c0, c1)
    sx += (static_cast<double>(c0) + static_cast<double>(c1)) * 0.5 * static_cast<double>(len);
    n += len;
  });
  if (n == 0) throw Error(ErrorKind::empty_mask, "centroid of an empty mask");
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

/// Re-encodes counts given in column-major scan order as a row-major mask.
inline RleMask from_column_major(ImageSize size, const std::vector<std::uint32_t>& counts) {
  RleMask col{ImageSize{size.width, size.height}, counts};
  // A column-major scan of an h×w mask is the row-major scan of its w×h transpose.
  const BinaryRaster transposed = decode_rle(col);
  BinaryRaster out(size, 0);
  for (int r = 0; r < size.height; ++r)
    for (int c = 0; c < size.width; ++c) out.at(r, c) = transposed.at(c, r);
  return encode_rle(out);
}

inline std::vector<std::uint32_t> to_column_major(const RleMask& rle) {
  const BinaryRaster dense = decode_rle(rle);
  const ImageSize size = rle.size;
  return detail::encode_scan(size, [&](std::size_t i) {
    const int c = static_cast<int>(i / static_cast<std::size_t>(size.height));
    const int r = static_cast<int>(i % static_cast<std::size_t>(size.height));
    return dense.at(r, c);
  });
}

}  // namespace latchange
