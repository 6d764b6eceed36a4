#include <gtest/gtest.h>

#include <filesystem>

#include "align/image_io.hpp"
#include "test_support.hpp"

using namespace align;

TEST(Quantize, RoundsHalvesUp) {
  EXPECT_EQ(quantize_unit(0.0), 0);
  EXPECT_EQ(quantize_unit(1.0), 255);
  EXPECT_EQ(quantize_unit(0.5), 128);  // 127.5
  EXPECT_EQ(quantize_unit(0.25), 64);  // 63.75
  EXPECT_THROW(quantize_unit(1.01), std::domain_error);
  EXPECT_THROW(quantize_unit(-0.01), std::domain_error);
}

TEST(Pnm, GreyTwoByTwoBytes) {
  Tensor img = Tensor::from_data({1, 2, 2}, {0.0, 1.0, 0.5, 0.2});
  const std::vector<std::uint8_t> bytes = encode_pnm(img);
  const std::string header = "P5\n2 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
  EXPECT_EQ(bytes[header.size() + 0], 0);
  EXPECT_EQ(bytes[header.size() + 1], 255);
  EXPECT_EQ(bytes[header.size() + 2], 128);
  EXPECT_EQ(bytes[header.size() + 3], 51);
}

TEST(Pnm, ColourIsInterleaved) {
  Tensor img = Tensor::from_data({3, 1, 2}, {1.0, 0.0, 0.0, 1.0, 0.0, 0.0});
  const auto bytes = encode_pnm(img);
  const std::string header = "P6\n2 1\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 6);
  const std::vector<std::uint8_t> body(bytes.begin() + header.size(), bytes.end());
  EXPECT_EQ(body, (std::vector<std::uint8_t>{255, 0, 0, 0, 255, 0}));
}

TEST(Pnm, DecodeHandlesCommentsAndRoundTrips) {
  const std::string text = "P5\n# made by hand\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.push_back(0);
  bytes.push_back(255);
  Tensor t = decode_pnm(bytes);
  EXPECT_EQ(t.shape(), (Shape{1, 1, 2}));
  EXPECT_DOUBLE_EQ(t.data()[1], 1.0);

  std::mt19937_64 rng(1);
  Tensor img = align::testing::random_tensor({3, 5, 4}, rng, 0, 1);
  Tensor back = decode_pnm(encode_pnm(img));
  EXPECT_LE(align::testing::max_abs_diff(img, back), 0.5 / 255 + 1e-12);
  EXPECT_EQ(encode_pnm(back), encode_pnm(img));
}

TEST(Pnm, ReportsTruncationAndBadHeaders) {
  const std::string text = "P5\n2 2\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.push_back(1);
  try {
    decode_pnm(bytes);
    FAIL() << "expected PnmError";
  } catch (const PnmError& e) {
    EXPECT_EQ(e.offset(), text.size() + 1);
  }
  const std::string p3 = "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(decode_pnm(std::vector<std::uint8_t>(p3.begin(), p3.end())), PnmError);
  const std::string deep = "P5\n1 1\n65535\n\0\0";
  EXPECT_THROW(decode_pnm(std::vector<std::uint8_t>(deep.begin(), deep.end())), PnmError);
}

TEST(Pnm, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "align_unit_img.pgm";
  Tensor img = Tensor::from_data({1, 1, 3}, {0.0, 0.4, 1.0});
  write_pnm(path, img);
  Tensor back = read_pnm(path);
  EXPECT_EQ(encode_pnm(back), encode_pnm(img));
  EXPECT_ANY_THROW(read_pnm(path.string() + ".missing"));
}
