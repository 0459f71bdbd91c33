#pragma once

// PNG/JPEG pixel I/O: 8-bit RGB images, 8-bit label rasters and 1-bit change maps.

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "latchange/error.hpp"
#include "latchange/raster.hpp"

namespace latchange {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorKind::io, "cannot open " + path.string());
  return f;
}

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}

inline void png_warn(png_structp, png_const_charp) {}

inline void png_append(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

inline void png_flush_noop(png_structp) {}

// Encodes rows to PNG bytes. channels: 1 (gray) or 3 (rgb); bit_depth 1 or 8.
inline std::string encode_png(int width, int height, int channels, int bit_depth,
                              const std::vector<std::vector<png_byte>>& rows) {
  std::string bytes;
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (!png) throw Error(ErrorKind::io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::io, "png encoding failed: " + err);
  }
  png_set_write_fn(png, &bytes, png_append, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (const auto& row : rows) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return bytes;
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  FilePtr f = open_file(path, "wb");
  if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
    throw Error(ErrorKind::io, "write failed for " + path.string());
  }
}

struct DecodedImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3 after normalisation
  std::vector<std::uint8_t> data;
};

inline DecodedImage read_png(const std::filesystem::path& path, bool want_rgb) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorKind::format, path.string() + " is not a PNG file");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (!png) throw Error(ErrorKind::io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  DecodedImage img;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::format, "png read failed for " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const bool is_gray = (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA);
  if (want_rgb && is_gray) png_set_gray_to_rgb(png);
  if (!want_rgb && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  img.data.resize(stride * static_cast<std::size_t>(img.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = img.data.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_fail(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, mgr->message);
  std::longjmp(mgr->jump, 1);
}

inline DecodedImage read_jpeg(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_fail;
  DecodedImage img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorKind::format, "jpeg read failed for " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = static_cast<int>(cinfo.output_width);
  img.height = static_cast<int>(cinfo.output_height);
  img.channels = 3;
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.data.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

inline bool has_jpeg_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".jpg" || ext == ".jpeg";
}

}  // namespace detail

/// Reads an 8-bit RGB image from PNG or JPEG (chosen by extension).
inline RgbImage read_rgb_image(const std::filesystem::path& path) {
  detail::DecodedImage d =
      detail::has_jpeg_extension(path) ? detail::read_jpeg(path) : detail::read_png(path, /*want_rgb=*/true);
  RgbImage img;
  img.size = {d.height, d.width};
  img.data = std::move(d.data);
  return img;
}

/// Reads a single-channel PNG (any bit depth up to 16 is reduced to 8 bits).
inline Raster<std::uint8_t> read_gray_png(const std::filesystem::path& path) {
  detail::DecodedImage d = detail::read_png(path, /*want_rgb=*/false);
  return Raster<std::uint8_t>({d.height, d.width}, std::move(d.data));
}

inline std::string encode_rgb_png(const RgbImage& img) {
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(img.size.height));
  const std::size_t stride = static_cast<std::size_t>(img.size.width) * 3;
  for (int y = 0; y < img.size.height; ++y) {
    rows[static_cast<std::size_t>(y)].assign(img.data.begin() + static_cast<std::ptrdiff_t>(stride * y),
                                             img.data.begin() + static_cast<std::ptrdiff_t>(stride * (y + 1)));
  }
  return detail::encode_png(img.size.width, img.size.height, 3, 8, rows);
}

inline void write_rgb_png(const RgbImage& img, const std::filesystem::path& path) {
  detail::write_bytes(path, encode_rgb_png(img));
}

/// 1-bit grayscale PNG of a change map (1 = white).
inline std::string encode_change_map_png(const ChangeMap& map) {
  const int w = map.width();
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(map.height()),
                                          std::vector<png_byte>(static_cast<std::size_t>((w + 7) / 8), 0));
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < w; ++x)
      if (map.at(y, x))
        rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x / 8)] |= static_cast<png_byte>(0x80u >> (x % 8));
  return detail::encode_png(w, map.height(), 1, 1, rows);
}

inline void write_change_map_png(const ChangeMap& map, const std::filesystem::path& path) {
  detail::write_bytes(path, encode_change_map_png(map));
}

/// Reads a change map or label PNG and binarizes it (nonzero → 1).
inline ChangeMap read_change_map_png(const std::filesystem::path& path) {
  auto gray = read_gray_png(path);
  ChangeMap out(gray.size(), 0);
  auto src = gray.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] != 0 ? 1 : 0;
  return out;
}

}  // namespace latchange
