#include <gtest/gtest.h>

#include <sstream>

#include "metalens/errors.hpp"
#include "metalens/numerics/tensor_io.hpp"
#include "test_support.hpp"

using namespace metalens;
using namespace metalens::numerics;

TEST(TensorIo, RoundTripIsBitExactForEveryDtype) {
  const Tensor f64 = mltest::random_tensor({2, 3, 4}, 1);
  EXPECT_TRUE(bit_equal(decode_tensor(encode_tensor(f64)), f64));
  const Tensor f32 = f64.to(DType::F32);
  const Tensor back = decode_tensor(encode_tensor(f32));
  EXPECT_EQ(back.dtype(), DType::F32);
  EXPECT_TRUE(bit_equal(back, f32));
  std::vector<std::complex<double>> z{{1, -2}, {0.25, 3}};
  const Tensor c = Tensor::from_complex({2}, z);
  EXPECT_TRUE(bit_equal(decode_tensor(encode_tensor(c)), c));
}

TEST(TensorIo, HeaderLayout) {
  const std::string bytes = encode_tensor(Tensor({2, 3}, std::vector<double>(6, 1.0)));
  ASSERT_GE(bytes.size(), 4u + 2 + 1 + 1 + 16 + 48);
  EXPECT_EQ(bytes.substr(0, 4), "MLTN");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 1u);  // f64
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 2u);  // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 3u);
  EXPECT_EQ(bytes.size(), 4u + 2 + 1 + 1 + 16 + 48);
}

TEST(TensorIo, RejectsCorruptInput) {
  std::string bytes = encode_tensor(mltest::random_tensor({4}, 2));
  EXPECT_THROW(decode_tensor("XXXX" + bytes.substr(4)), FormatError);
  EXPECT_THROW(decode_tensor(bytes.substr(0, bytes.size() - 3)), FormatError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_tensor(bad_version), FormatError);
}

TEST(TensorIo, FileRoundTrip) {
  const auto dir = mltest::temp_dir("tensor_io");
  const Tensor t = mltest::random_tensor({3, 5}, 3);
  save_tensor(dir / "t.mltn", t);
  EXPECT_TRUE(bit_equal(load_tensor(dir / "t.mltn"), t));
  EXPECT_THROW(load_tensor(dir / "missing.mltn"), FormatError);
}
