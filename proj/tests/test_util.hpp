#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "otce/otce.hpp"

namespace otce::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, PhiloxStream& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

/// Entries exactly representable in f32, so FTRS round trips are bit-exact.
inline Matrix random_f32_matrix(std::size_t rows, std::size_t cols, PhiloxStream& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = static_cast<double>(static_cast<float>(rng.normal()));
  return m;
}

inline Labels random_labels(std::size_t n, std::uint32_t classes, PhiloxStream& rng) {
  Labels y(n);
  for (auto& v : y) v = static_cast<Label>(rng.uniform_int(classes));
  return y;
}

inline FeatureSet random_set(std::size_t n, std::size_t d, std::uint32_t classes, std::uint64_t seed) {
  PhiloxStream rng(seed, 99);
  return FeatureSet(random_matrix(n, d, rng), random_labels(n, classes, rng), classes);
}

/// Points on a grid with spacing `spacing`, all pairwise squared distances >= spacing^2.
inline Matrix separated_points(std::size_t n, double spacing) {
  Matrix m(n, 2);
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  for (std::size_t i = 0; i < n; ++i) {
    m(i, 0) = spacing * static_cast<double>(i % side);
    m(i, 1) = spacing * static_cast<double>(i / side);
  }
  return m;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("otce_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace otce::testing
