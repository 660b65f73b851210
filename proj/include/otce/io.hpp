#pragma once

// FTRS binary feature files and label-first CSV ingestion.
//
// FTRS layout, little-endian throughout:
//   offset  0  magic "FTRS"
//   offset  4  u32 version (= 1)
//   offset  8  u64 n
//   offset 16  u64 d
//   offset 24  u32 C
//   offset 28  u32 dtype (0 = f32)
//   offset 32  n x i32 labels, then n*d x f32 features, row-major

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "otce/error.hpp"
#include "otce/feature_set.hpp"

namespace otce::io {

inline constexpr std::array<char, 4> kFtrsMagic{'F', 'T', 'R', 'S'};
inline constexpr std::uint32_t kFtrsVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;
inline constexpr std::size_t kFtrsHeaderBytes = 32;

/// Total FTRS file size for an n x d payload.
constexpr std::uint64_t ftrs_file_size(std::uint64_t n, std::uint64_t d) {
  return kFtrsHeaderBytes + n * 4 + n * d * 4;
}

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto bits = static_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xFFu));
}

template <typename T>
T get_le(const unsigned char* p) {
  using U = std::make_unsigned_t<T>;
  U bits = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<U>(static_cast<U>(p[b]) << (8 * b));
  return static_cast<T>(bits);
}

inline std::string at(std::size_t offset) { return "byte offset " + std::to_string(offset); }

}  // namespace detail

/// Serializes to the FTRS byte layout. Features narrow to f32; values that
/// overflow f32 are rejected.
inline std::vector<unsigned char> encode_ftrs(const FeatureSet& set) {
  const std::size_t n = set.size(), d = set.dim();
  std::vector<unsigned char> out;
  out.reserve(ftrs_file_size(n, d));
  out.insert(out.end(), kFtrsMagic.begin(), kFtrsMagic.end());
  detail::put_le<std::uint32_t>(out, kFtrsVersion);
  detail::put_le<std::uint64_t>(out, n);
  detail::put_le<std::uint64_t>(out, d);
  detail::put_le<std::uint32_t>(out, set.class_count());
  detail::put_le<std::uint32_t>(out, kDtypeF32);
  for (Label y : set.labels()) detail::put_le<std::int32_t>(out, y);
  const auto values = set.features().data();
  for (std::size_t k = 0; k < values.size(); ++k) {
    const auto f = static_cast<float>(values[k]);
    if (!std::isfinite(f))
      throw Error(ErrorCode::NonFiniteValue,
                  "record " + std::to_string(k / d) + ", column " + std::to_string(k % d) + " not representable as f32");
    detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline FeatureSet decode_ftrs(std::span<const unsigned char> bytes, std::string name = {}) {
  using detail::at;
  if (bytes.size() < kFtrsHeaderBytes)
    throw Error(ErrorCode::MalformedHeader, "file is " + std::to_string(bytes.size()) + " bytes, header needs 32");
  if (std::memcmp(bytes.data(), kFtrsMagic.data(), 4) != 0) throw Error(ErrorCode::MalformedHeader, at(0) + ": bad magic");
  const auto* p = bytes.data();
  if (const auto version = detail::get_le<std::uint32_t>(p + 4); version != kFtrsVersion)
    throw Error(ErrorCode::MalformedHeader, at(4) + ": unsupported version " + std::to_string(version));
  const auto n = detail::get_le<std::uint64_t>(p + 8);
  const auto d = detail::get_le<std::uint64_t>(p + 16);
  const auto c = detail::get_le<std::uint32_t>(p + 24);
  const auto dtype = detail::get_le<std::uint32_t>(p + 28);
  if (n == 0) throw Error(ErrorCode::MalformedHeader, at(8) + ": n must be positive");
  if (d == 0) throw Error(ErrorCode::MalformedHeader, at(16) + ": d must be positive");
  if (c == 0) throw Error(ErrorCode::MalformedHeader, at(24) + ": C must be positive");
  if (dtype != kDtypeF32) throw Error(ErrorCode::MalformedHeader, at(28) + ": unsupported dtype " + std::to_string(dtype));
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max() / 8;
  if (n > kMax || d > kMax / n)
    throw Error(ErrorCode::DimensionMismatch, at(8) + ": n*d overflows");
  const std::uint64_t expected = ftrs_file_size(n, d);
  if (bytes.size() != expected)
    throw Error(ErrorCode::DimensionMismatch, "payload is " + std::to_string(bytes.size()) + " bytes, header implies " +
                                                  std::to_string(expected));

  Labels labels(n);
  const unsigned char* lp = p + kFtrsHeaderBytes;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = detail::get_le<std::int32_t>(lp + 4 * i);
    if (labels[i] < 0 || static_cast<std::uint32_t>(labels[i]) >= c)
      throw Error(ErrorCode::LabelOutOfRange, "record " + std::to_string(i) + " (" + at(kFtrsHeaderBytes + 4 * i) +
                                                  "): label " + std::to_string(labels[i]) + " with C=" + std::to_string(c));
  }
  std::vector<double> values(n * d);
  const unsigned char* fp = lp + 4 * n;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const float f = std::bit_cast<float>(detail::get_le<std::uint32_t>(fp + 4 * k));
    if (!std::isfinite(f))
      throw Error(ErrorCode::NonFiniteValue, "record " + std::to_string(k / d) + " (" +
                                                 at(static_cast<std::size_t>(fp - p) + 4 * k) + ")");
    values[k] = f;
  }
  return FeatureSet(Matrix::from_data(n, d, std::move(values)), std::move(labels), c, std::move(name));
}

inline FeatureSet read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_ftrs(bytes, path.stem().string());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + std::string(e.what()).substr(to_string(e.code()).size() + 2));
  }
}

inline void write_feature_file(const FeatureSet& set, const std::filesystem::path& path) {
  const auto bytes = encode_ftrs(set);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace detail

/// Parses label-first CSV text. C is inferred as max label + 1.
inline FeatureSet parse_csv(std::string_view text, bool has_header, std::string name = {}) {
  Labels labels;
  std::vector<double> values;
  std::size_t d = 0;
  std::size_t line_no = 0;
  bool header_pending = has_header;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    const std::string_view line = detail::trim(text.substr(0, eol));
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (line.empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    const auto fields = detail::split_fields(line);
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() < 2) throw Error(ErrorCode::RaggedRow, where + ": need a label and at least one feature");
    if (d == 0) d = fields.size() - 1;
    if (fields.size() - 1 != d)
      throw Error(ErrorCode::RaggedRow,
                  where + ": " + std::to_string(fields.size() - 1) + " features, expected " + std::to_string(d));

    long long label = 0;
    const auto lf = fields[0];
    auto [lp, lec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (lec != std::errc{} || lp != lf.data() + lf.size())
      throw Error(ErrorCode::NonNumericField, where + ", field 1: '" + std::string(lf) + "' is not an integer label");
    if (label < 0) throw Error(ErrorCode::NegativeLabel, where + ": label " + std::to_string(label));
    if (label > std::numeric_limits<Label>::max() - 1)
      throw Error(ErrorCode::LabelOutOfRange, where + ": label " + std::to_string(label));
    labels.push_back(static_cast<Label>(label));

    for (std::size_t k = 1; k < fields.size(); ++k) {
      double v = 0.0;
      const auto f = fields[k];
      auto [fp, fec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (fec != std::errc{} || fp != f.data() + f.size() || f.empty())
        throw Error(ErrorCode::NonNumericField, where + ", field " + std::to_string(k + 1) + ": '" + std::string(f) + "'");
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, where + ", field " + std::to_string(k + 1));
      values.push_back(v);
    }
  }
  if (labels.empty()) throw Error(ErrorCode::DimensionMismatch, "csv has no data rows");
  Label max_label = 0;
  for (Label y : labels) max_label = std::max(max_label, y);
  const std::size_t n = labels.size();
  return FeatureSet(Matrix::from_data(n, d, std::move(values)), std::move(labels),
                    static_cast<std::uint32_t>(max_label) + 1, std::move(name));
}

inline FeatureSet read_csv(const std::filesystem::path& path, bool has_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_csv(text, has_header, path.stem().string());
}

}  // namespace otce::io
