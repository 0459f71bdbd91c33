#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "latchange/error.hpp"

namespace latchange {

struct ImageSize {
  int height = 0;
  int width = 0;

  std::size_t area() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

// Single-channel row-major raster.
template <typename T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(ImageSize size, T fill = T{}) : size_(size), data_(checked_area(size), fill) {}
  Raster(ImageSize size, std::vector<T> data) : size_(size), data_(std::move(data)) {
    if (data_.size() != checked_area(size)) {
      throw Error(ErrorKind::shape_mismatch, "raster data does not match its declared size");
    }
  }

  ImageSize size() const noexcept { return size_; }
  int height() const noexcept { return size_.height; }
  int width() const noexcept { return size_.width; }

  T& at(int row, int col) { return data_[index(row, col)]; }
  const T& at(int row, int col) const { return data_[index(row, col)]; }

  std::span<T> pixels() noexcept { return data_; }
  std::span<const T> pixels() const noexcept { return data_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  static std::size_t checked_area(ImageSize size) {
    if (size.height < 0 || size.width < 0) {
      throw Error(ErrorKind::invalid_argument, "negative raster dimension");
    }
    return size.area();
  }
  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(size_.width) +
           static_cast<std::size_t>(col);
  }

  ImageSize size_{};
  std::vector<T> data_;
};

/// Binary raster; values are 0 or 1.
using BinaryRaster = Raster<std::uint8_t>;
using LabelRaster = Raster<std::uint16_t>;

/// Pixel-level change map C: 1 marks a changed pixel.
using ChangeMap = BinaryRaster;

/// Interleaved 8-bit RGB image.
struct RgbImage {
  ImageSize size{};
  std::vector<std::uint8_t> data;  // size.area() * 3

  RgbImage() = default;
  explicit RgbImage(ImageSize s, std::uint8_t fill = 0) : size(s), data(s.area() * 3, fill) {}

  std::uint8_t* pixel(int row, int col) {
    return data.data() + (static_cast<std::size_t>(row) * size.width + col) * 3;
  }
  const std::uint8_t* pixel(int row, int col) const {
    return data.data() + (static_cast<std::size_t>(row) * size.width + col) * 3;
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

}  // namespace latchange
