#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <limits>

#include "otce/io.hpp"
#include "test_util.hpp"

using namespace otce;
using otce::testing::TempDir;

namespace {

std::vector<unsigned char> header(std::uint64_t n, std::uint64_t d, std::uint32_t c) {
  FeatureSet stub(Matrix(n, d), Labels(n, 0), c);
  auto bytes = io::encode_ftrs(stub);
  bytes.resize(io::kFtrsHeaderBytes);
  return bytes;
}

void append_i32(std::vector<unsigned char>& b, std::int32_t v) {
  for (int k = 0; k < 4; ++k) b.push_back(static_cast<unsigned char>((static_cast<std::uint32_t>(v) >> (8 * k)) & 0xFF));
}

void append_f32(std::vector<unsigned char>& b, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  append_i32(b, static_cast<std::int32_t>(bits));
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(Ftrs, MinimalFileLoads) {
  auto bytes = header(1, 1, 1);
  append_i32(bytes, 0);
  append_f32(bytes, 0.0f);
  const auto set = io::decode_ftrs(bytes);
  EXPECT_EQ(set.size(), 1u);
  EXPECT_EQ(set.dim(), 1u);
  EXPECT_EQ(set.class_count(), 1u);
  EXPECT_EQ(set.features()(0, 0), 0.0);
}

TEST(Ftrs, LabelOutOfRangeNamesRecord) {
  auto bytes = header(3, 1, 3);
  for (std::int32_t y : {0, 5, 1}) append_i32(bytes, y);
  for (int k = 0; k < 3; ++k) append_f32(bytes, 1.0f);
  try {
    io::decode_ftrs(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LabelOutOfRange);
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("byte offset 36"), std::string::npos);
  }
}

TEST(Ftrs, HeaderErrors) {
  auto good = header(1, 1, 1);
  append_i32(good, 0);
  append_f32(good, 1.0f);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of([&] { io::decode_ftrs(bad_magic); }), ErrorCode::MalformedHeader);

  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_EQ(code_of([&] { io::decode_ftrs(bad_version); }), ErrorCode::MalformedHeader);

  auto bad_dtype = good;
  bad_dtype[28] = 1;
  EXPECT_EQ(code_of([&] { io::decode_ftrs(bad_dtype); }), ErrorCode::MalformedHeader);

  std::vector<unsigned char> truncated(good.begin(), good.begin() + 20);
  EXPECT_EQ(code_of([&] { io::decode_ftrs(truncated); }), ErrorCode::MalformedHeader);

  auto short_payload = good;
  short_payload.pop_back();
  EXPECT_EQ(code_of([&] { io::decode_ftrs(short_payload); }), ErrorCode::DimensionMismatch);

  auto zero_classes = header(1, 1, 1);
  zero_classes[24] = 0;
  append_i32(zero_classes, 0);
  append_f32(zero_classes, 1.0f);
  EXPECT_EQ(code_of([&] { io::decode_ftrs(zero_classes); }), ErrorCode::MalformedHeader);
}

TEST(Ftrs, NonFinitePayloadRejected) {
  auto bytes = header(2, 1, 1);
  append_i32(bytes, 0);
  append_i32(bytes, 0);
  append_f32(bytes, 1.0f);
  append_f32(bytes, std::numeric_limits<float>::quiet_NaN());
  try {
    io::decode_ftrs(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteValue);
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos);
  }
}

TEST(Ftrs, WriteProducesMagicAndExactSize) {
  TempDir dir;
  const FeatureSet minimal(Matrix{{0.0}}, Labels{0}, 1);
  io::write_feature_file(minimal, dir / "min.ftrs");
  std::ifstream in(dir / "min.ftrs", std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "FTRS");
  EXPECT_EQ(std::filesystem::file_size(dir / "min.ftrs"), io::ftrs_file_size(1, 1));

  PhiloxStream rng(5);
  const FeatureSet big(otce::testing::random_f32_matrix(1000, 512, rng), otce::testing::random_labels(1000, 10, rng), 10);
  io::write_feature_file(big, dir / "big.ftrs");
  EXPECT_EQ(std::filesystem::file_size(dir / "big.ftrs"), 32u + 1000u * 4u + 1000u * 512u * 4u);
}

TEST(Ftrs, NanCannotReachTheWriter) {
  Matrix m{{1.0, std::numeric_limits<double>::quiet_NaN()}};
  EXPECT_EQ(code_of([&] { FeatureSet(m, Labels{0}, 1); }), ErrorCode::NonFiniteValue);
  // Finite in f64 but not in f32.
  const FeatureSet huge(Matrix{{1e300}}, Labels{0}, 1);
  EXPECT_EQ(code_of([&] { io::encode_ftrs(huge); }), ErrorCode::NonFiniteValue);
}

// write then read is the identity on f32-representable payloads, and read
// then write reproduces the exact bytes.
TEST(Ftrs, RoundTripIsBitExact) {
  TempDir dir;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PhiloxStream rng(seed);
    const FeatureSet set(otce::testing::random_f32_matrix(100, 16, rng), otce::testing::random_labels(100, 7, rng), 9);
    const auto path = dir / ("rt" + std::to_string(seed) + ".ftrs");
    io::write_feature_file(set, path);
    const auto back = io::read_feature_file(path);
    ASSERT_EQ(back.labels(), set.labels());
    ASSERT_EQ(back.class_count(), set.class_count());
    const auto a = set.features().data(), b = back.features().data();
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);

    const auto bytes = io::encode_ftrs(set);
    EXPECT_EQ(io::encode_ftrs(io::decode_ftrs(bytes)), bytes);
  }
}

TEST(Ftrs, MissingFileIsIoFailure) {
  EXPECT_EQ(code_of([] { io::read_feature_file("/nonexistent/nothing.ftrs"); }), ErrorCode::IoFailure);
}

TEST(Csv, BasicRows) {
  const auto set = io::parse_csv("0,1.5,2.5\n1,0.0,1.0", false);
  EXPECT_EQ(set.size(), 2u);
  EXPECT_EQ(set.dim(), 2u);
  EXPECT_EQ(set.class_count(), 2u);
  EXPECT_DOUBLE_EQ(set.features()(0, 1), 2.5);
  EXPECT_EQ(set.labels()[1], 1);
}

TEST(Csv, HeaderAndBlankLines) {
  const auto set = io::parse_csv("label,x,y\r\n\n2,1,2\r\n0,3,4\r\n", true);
  EXPECT_EQ(set.size(), 2u);
  EXPECT_EQ(set.class_count(), 3u);
}

TEST(Csv, RaggedRow) {
  EXPECT_EQ(code_of([] { io::parse_csv("0,1,2\n1,1,2,3\n", false); }), ErrorCode::RaggedRow);
  EXPECT_EQ(code_of([] { io::parse_csv("0,1,2\n1,1\n", false); }), ErrorCode::RaggedRow);
}

TEST(Csv, SparseClassesAccepted) {
  const auto set = io::parse_csv("0,1\n4,2\n", false);
  EXPECT_EQ(set.class_count(), 5u);
  EXPECT_EQ(set.present_classes(), (std::vector<Label>{0, 4}));
}

TEST(Csv, FieldErrors) {
  EXPECT_EQ(code_of([] { io::parse_csv("0,abc\n", false); }), ErrorCode::NonNumericField);
  EXPECT_EQ(code_of([] { io::parse_csv("0.5,1\n", false); }), ErrorCode::NonNumericField);
  EXPECT_EQ(code_of([] { io::parse_csv("-1,1\n", false); }), ErrorCode::NegativeLabel);
  EXPECT_EQ(code_of([] { io::parse_csv("0,nan\n", false); }), ErrorCode::NonFiniteValue);
  EXPECT_EQ(code_of([] { io::parse_csv("0,1,\n", false); }), ErrorCode::NonNumericField);
}

TEST(FeatureSetValidation, RejectsBadShapes) {
  EXPECT_EQ(code_of([] { FeatureSet(Matrix(0, 2), Labels{}, 1); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([] { FeatureSet(Matrix(2, 0), Labels{0, 0}, 1); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([] { FeatureSet(Matrix(2, 1), Labels{0}, 1); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([] { FeatureSet(Matrix(1, 1), Labels{0}, 0); }), ErrorCode::LabelOutOfRange);
  EXPECT_EQ(code_of([] { FeatureSet(Matrix(1, 1), Labels{-1}, 2); }), ErrorCode::LabelOutOfRange);
}

TEST(FeatureSetValidation, StandardizeJointly) {
  const FeatureSet a(Matrix{{0.0, 5.0}, {2.0, 5.0}}, Labels{0, 1}, 2);
  const FeatureSet b(Matrix{{4.0, 5.0}, {6.0, 5.0}}, Labels{0, 1}, 2);
  const auto [sa, sb] = standardize_jointly(a, b);
  // Column 0 has mean 3 and population sd sqrt(5); column 1 is constant.
  EXPECT_NEAR(sa.features()(0, 0), -3.0 / std::sqrt(5.0), 1e-15);
  EXPECT_NEAR(sb.features()(1, 0), 3.0 / std::sqrt(5.0), 1e-15);
  EXPECT_EQ(sa.features()(0, 1), 0.0);
  EXPECT_EQ(sb.labels(), b.labels());
}
