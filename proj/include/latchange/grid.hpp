#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latchange/error.hpp"

namespace latchange {

/// Acquisition time of a bitemporal pair.
enum class Time { t0 = 0, t1 = 1 };

constexpr Time other(Time t) noexcept { return t == Time::t0 ? Time::t1 : Time::t0; }
constexpr std::size_t index_of(Time t) noexcept { return static_cast<std::size_t>(t); }

constexpr std::string_view to_string(Time t) noexcept { return t == Time::t0 ? "T0" : "T1"; }

inline Time parse_time(std::string_view s) {
  if (s == "T0" || s == "t0" || s == "0" || s == "pre") return Time::t0;
  if (s == "T1" || s == "t1" || s == "1" || s == "post") return Time::t1;
  throw Error(ErrorKind::invalid_argument, "unknown time '" + std::string(s) + "' (expected T0 or T1)");
}

struct GridShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t cells() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  std::size_t scalars() const noexcept { return cells() * static_cast<std::size_t>(channels); }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

inline std::string to_string(const GridShape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

/// Per-position feature field of one image, stored row-major as (height, width, channels).
class EmbeddingGrid {
 public:
  EmbeddingGrid() = default;
  EmbeddingGrid(GridShape shape, std::vector<float> values, bool demodulated = false)
      : shape_(shape), values_(std::move(values)), demodulated_(demodulated) {
    if (shape_.height <= 0 || shape_.width <= 0 || shape_.channels < 1) {
      throw Error(ErrorKind::invalid_argument, "grid dimensions must be positive, got " + to_string(shape_));
    }
    if (values_.size() != shape_.scalars()) {
      throw Error(ErrorKind::shape_mismatch, "grid payload does not match shape " + to_string(shape_));
    }
  }
  explicit EmbeddingGrid(GridShape shape, float fill = 0.0f, bool demodulated = false)
      : EmbeddingGrid(shape, std::vector<float>(shape.scalars(), fill), demodulated) {}

  const GridShape& shape() const noexcept { return shape_; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }
  int channels() const noexcept { return shape_.channels; }
  bool demodulated() const noexcept { return demodulated_; }
  void set_demodulated(bool d) noexcept { demodulated_ = d; }

  std::span<const float> at(int row, int col) const {
    return {values_.data() + offset(row, col), static_cast<std::size_t>(shape_.channels)};
  }
  std::span<float> at(int row, int col) {
    return {values_.data() + offset(row, col), static_cast<std::size_t>(shape_.channels)};
  }

  std::span<const float> values() const noexcept { return values_; }
  std::span<float> values() noexcept { return values_; }

  bool all_finite() const noexcept {
    for (float v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const EmbeddingGrid&, const EmbeddingGrid&) = default;

 private:
  std::size_t offset(int row, int col) const noexcept {
    return (static_cast<std::size_t>(row) * static_cast<std::size_t>(shape_.width) +
            static_cast<std::size_t>(col)) *
           static_cast<std::size_t>(shape_.channels);
  }

  GridShape shape_{};
  std::vector<float> values_;
  bool demodulated_ = false;
};

}  // namespace latchange
