#pragma once

// Seeded synthetic source/target task pairs with controllable relatedness.
//
// Source: C isotropic unit-variance Gaussian clusters whose centroids are the
// vertices of a regular simplex with edge `centroid_separation`.
// Target: the same points moved by a domain shift of magnitude s, i.e. a
// rotation by s * kRotationDegreesPerUnitShift degrees (about the origin, in
// every plane of a random orthonormal frame) followed by a translation of
// norm s; then a fraction of target labels is redrawn uniformly.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <tuple>
#include <vector>

#include "otce/error.hpp"
#include "otce/feature_set.hpp"
#include "otce/rng.hpp"

namespace otce::synth {

inline constexpr double kRotationDegreesPerUnitShift = 10.0;

struct SyntheticTaskSpec {
  int classes = 2;
  int dim = 2;
  int samples_per_class = 50;
  double centroid_separation = 4.0;
  double domain_shift = 0.0;
  double label_permutation_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw Error(ErrorCode::InvalidArgument, "classes must be >= 2");
    if (dim < 1) throw Error(ErrorCode::InvalidArgument, "dim must be >= 1");
    if (samples_per_class < 1) throw Error(ErrorCode::InvalidArgument, "samples_per_class must be >= 1");
    if (!(centroid_separation > 0.0) || !std::isfinite(centroid_separation))
      throw Error(ErrorCode::InvalidArgument, "centroid_separation must be positive");
    if (!(domain_shift >= 0.0) || !std::isfinite(domain_shift))
      throw Error(ErrorCode::InvalidArgument, "domain_shift must be non-negative");
    if (!(label_permutation_fraction >= 0.0 && label_permutation_fraction <= 1.0))
      throw Error(ErrorCode::InvalidArgument, "label_permutation_fraction must lie in [0, 1]");
  }
};

struct TaskPair {
  FeatureSet source;
  FeatureSet target;
};

namespace detail {

// Independent streams per concern, so changing one knob never reshuffles the
// draws behind another.
enum Stream : std::uint64_t { kSourceSamples = 1, kDomainShift = 2, kLabelNoise = 3 };

/// C x dim centroids on a regular simplex of edge `separation`, via the
/// Helmert basis of the hyperplane orthogonal to (1, ..., 1).
inline Matrix simplex_centroids(int classes, int dim, double separation) {
  if (dim < classes - 1)
    throw Error(ErrorCode::InfeasibleSeparation, std::to_string(classes) + " equidistant centroids need dim >= " +
                                                     std::to_string(classes - 1) + ", got " + std::to_string(dim));
  const double scale = separation / std::numbers::sqrt2;
  Matrix out(static_cast<std::size_t>(classes), static_cast<std::size_t>(dim));
  for (int k = 0; k < classes; ++k)
    for (int j = 1; j < classes; ++j) {
      const double norm = std::sqrt(static_cast<double>(j) * (j + 1));
      const double coord = k < j ? 1.0 / norm : (k == j ? -static_cast<double>(j) / norm : 0.0);
      out(static_cast<std::size_t>(k), static_cast<std::size_t>(j - 1)) = scale * coord;
    }
  return out;
}

/// Random orthonormal frame (rows) by modified Gram-Schmidt on Gaussian vectors.
inline Matrix random_frame(int dim, PhiloxStream& rng) {
  const auto d = static_cast<std::size_t>(dim);
  Matrix q(d, d);
  for (std::size_t r = 0; r < d; ++r) {
    while (true) {
      for (std::size_t c = 0; c < d; ++c) q(r, c) = rng.normal();
      for (std::size_t p = 0; p < r; ++p) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += q(r, c) * q(p, c);
        for (std::size_t c = 0; c < d; ++c) q(r, c) -= dot * q(p, c);
      }
      double norm = 0.0;
      for (std::size_t c = 0; c < d; ++c) norm += q(r, c) * q(r, c);
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (std::size_t c = 0; c < d; ++c) q(r, c) /= norm;
        break;
      }
    }
  }
  return q;
}

/// R = F^T B F where B rotates each consecutive coordinate pair by `angle`.
inline Matrix shift_rotation(int dim, double angle, const Matrix& frame) {
  const auto d = static_cast<std::size_t>(dim);
  Matrix block(d, d);
  for (std::size_t k = 0; k < d; ++k) block(k, k) = 1.0;
  for (std::size_t k = 0; k + 1 < d; k += 2) {
    block(k, k) = std::cos(angle);
    block(k, k + 1) = -std::sin(angle);
    block(k + 1, k) = std::sin(angle);
    block(k + 1, k + 1) = std::cos(angle);
  }
  Matrix bf(d, d), r(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k) bf(i, j) += block(i, k) * frame(k, j);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k) r(i, j) += frame(k, i) * bf(k, j);
  return r;
}

}  // namespace detail

inline TaskPair generate_task_pair(const SyntheticTaskSpec& spec) {
  spec.validate();
  const Matrix centroids = detail::simplex_centroids(spec.classes, spec.dim, spec.centroid_separation);
  const auto d = static_cast<std::size_t>(spec.dim);
  const auto n = static_cast<std::size_t>(spec.classes) * static_cast<std::size_t>(spec.samples_per_class);

  PhiloxStream sample_rng(spec.seed, detail::kSourceSamples);
  Matrix xs(n, d);
  Labels ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = i / static_cast<std::size_t>(spec.samples_per_class);
    ys[i] = static_cast<Label>(c);
    for (std::size_t k = 0; k < d; ++k) xs(i, k) = centroids(c, k) + sample_rng.normal();
  }

  Matrix xt = xs;
  if (spec.domain_shift > 0.0) {
    PhiloxStream shift_rng(spec.seed, detail::kDomainShift);
    const Matrix frame = detail::random_frame(spec.dim, shift_rng);
    const double angle = spec.domain_shift * kRotationDegreesPerUnitShift * std::numbers::pi / 180.0;
    const Matrix rot = detail::shift_rotation(spec.dim, angle, frame);
    std::vector<double> direction(d);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : direction) {
        v = shift_rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-8);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < d; ++r) {
        double v = 0.0;
        for (std::size_t k = 0; k < d; ++k) v += rot(r, k) * xs(i, k);
        xt(i, r) = v + spec.domain_shift * direction[r] / norm;
      }
  }

  Labels yt = ys;
  const auto corrupted = static_cast<std::size_t>(std::llround(spec.label_permutation_fraction * static_cast<double>(n)));
  if (corrupted > 0) {
    PhiloxStream noise_rng(spec.seed, detail::kLabelNoise);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < corrupted; ++i) {
      const auto j = i + static_cast<std::size_t>(noise_rng.uniform_int(n - i));
      std::swap(idx[i], idx[j]);
      yt[idx[i]] = static_cast<Label>(noise_rng.uniform_int(static_cast<std::uint64_t>(spec.classes)));
    }
  }

  const auto c = static_cast<std::uint32_t>(spec.classes);
  return TaskPair{FeatureSet(std::move(xs), std::move(ys), c, "synth-source"),
                  FeatureSet(std::move(xt), std::move(yt), c, "synth-target")};
}

struct Fig3Toy {
  FeatureSet source_a;
  FeatureSet source_b;
  FeatureSet target;
};

/// Two 2-class sources that sample-level OT cannot tell apart, one of which
/// has class clouds aligned with the target's.
///
/// Every set holds 8 points in 2-D: x positions listed below, each repeated
/// at y = -0.5 and y = +0.5.
///   target    class 0: x in {0, 4}   class 1: x in {2, 6}
///   source A  class 0: x in {1, 7}   class 1: x in {3, 5}
///   source B  class 0: x in {1, 3}   class 1: x in {5, 7}
/// Both sources sit one unit from the target points, and the cheapest
/// matching sends half of every source class to each target class, so the
/// sample-only score is -ln 2 for both. Label distances for A depend only on
/// the target class, which leaves the joint coupling unchanged. For B they
/// favour 0->0 and 1->1 strongly enough that the joint cost aligns classes.
inline Fig3Toy make_fig3_toy() {
  auto build = [](std::vector<double> class0, std::vector<double> class1, std::string name) {
    std::vector<double> values;
    Labels labels;
    for (int c = 0; c < 2; ++c)
      for (double x : (c == 0 ? class0 : class1))
        for (double y : {-0.5, 0.5}) {
          values.push_back(x);
          values.push_back(y);
          labels.push_back(c);
        }
    const std::size_t n = labels.size();
    return FeatureSet(Matrix::from_data(n, 2, std::move(values)), std::move(labels), 2, std::move(name));
  };
  return Fig3Toy{build({1, 7}, {3, 5}, "toy-source-a"), build({1, 3}, {5, 7}, "toy-source-b"),
                 build({0, 4}, {2, 6}, "toy-target")};
}

}  // namespace otce::synth
