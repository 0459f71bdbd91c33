#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "latchange/synthetic.hpp"
#include "latchange/tensor_archive.hpp"

namespace latchange {
namespace {

TEST(TensorArchive, ZeroGridLayout) {
  const EmbeddingGrid g({1, 1, 4});
  const std::string bytes = encode_tensor_archive(g);
  ASSERT_EQ(bytes.substr(0, 8), "ACTENSR1");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t header_len = p[8] | (p[9] << 8) | (p[10] << 16) | (p[11] << 24);
  EXPECT_EQ(bytes.size(), 8u + 4u + header_len + 16u);
  const std::string header = bytes.substr(12, header_len);
  EXPECT_NE(header.find("\"shape\":[1,1,4]"), std::string::npos);
  EXPECT_NE(header.find("\"dtype\":\"f32\""), std::string::npos);
  for (std::size_t i = 12 + header_len; i < bytes.size(); ++i) EXPECT_EQ(bytes[i], '\0');
}

TEST(TensorArchive, PayloadOffsetsFollowRowMajorIndexing) {
  // Enumerate every position of a 2x3x2 grid holding distinct values and locate each one.
  EmbeddingGrid g({2, 3, 2});
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 2; ++k) g.at(r, c)[static_cast<std::size_t>(k)] = static_cast<float>(100 * r + 10 * c + k + 1);
  g.at(1, 2)[1] = 7.0f;
  const std::string bytes = encode_tensor_archive(g);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t payload = 12 + (p[8] | (p[9] << 8) | (p[10] << 16) | (p[11] << 24));
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 2; ++k) {
        const std::size_t offset = static_cast<std::size_t>(((r * 3 + c) * 2 + k) * 4);
        float v;
        std::memcpy(&v, bytes.data() + payload + offset, 4);
        EXPECT_EQ(v, g.at(r, c)[static_cast<std::size_t>(k)]);
      }
  float seven;
  std::memcpy(&seven, bytes.data() + payload + 44, 4);
  EXPECT_EQ(seven, 7.0f);
}

TEST(TensorArchive, RandomRoundtripIsBitExact) {
  synthetic::Rng rng(3);
  const auto dir = std::filesystem::temp_directory_path() / "latchange_archive_test";
  std::filesystem::create_directories(dir);
  for (int trial = 0; trial < 1000; ++trial) {
    const GridShape shape{rng.integer(1, 6), rng.integer(1, 6), rng.integer(1, 9)};
    std::vector<float> v(shape.scalars());
    for (auto& x : v) x = static_cast<float>(rng.normal() * 1e3);
    const EmbeddingGrid g(shape, v);
    if (trial % 100 == 0) {
      write_tensor_archive(g, dir / "g.act");
      ASSERT_EQ(read_tensor_archive(dir / "g.act"), g);
    } else {
      ASSERT_EQ(decode_tensor_archive(encode_tensor_archive(g)), g);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(TensorArchive, RejectsBadInput) {
  const std::string good = encode_tensor_archive(EmbeddingGrid({2, 2, 2}, 1.0f));

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  try {
    decode_tensor_archive(bad_magic);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
  }

  try {
    decode_tensor_archive(good.substr(0, good.size() - 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::truncated);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }

  std::string f64 = good;
  const auto pos = f64.find("f32");
  f64.replace(pos, 3, "f64");
  try {
    decode_tensor_archive(f64);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unsupported);
  }

  EmbeddingGrid nan_grid({1, 1, 1});
  nan_grid.at(0, 0)[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(encode_tensor_archive(nan_grid), Error);
  EXPECT_THROW(read_tensor_archive("/nonexistent/file.act"), Error);
}

}  // namespace
}  // namespace latchange
