#pragma once

// Transferability scores built on an entropic OT coupling between source and
// target embeddings: the coupling induces a joint distribution over
// (source label, target label) whose negative conditional entropy
// -H(Yt | Ys) is the score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string_view>
#include <thread>
#include <vector>

#include "otce/error.hpp"
#include "otce/feature_set.hpp"
#include "otce/ot.hpp"

namespace otce {

enum class MetricId { FOtce, JcOtce, Nce };

constexpr std::string_view to_string(MetricId id) {
  switch (id) {
    case MetricId::FOtce: return "f-otce";
    case MetricId::JcOtce: return "jc-otce";
    case MetricId::Nce: return "nce";
  }
  return "unknown";
}

/// Empirical P(ys, yt), shape Cs x Ct.
class JointLabelDistribution {
 public:
  static constexpr double kMassTolerance = 1e-9;

  explicit JointLabelDistribution(Matrix values) : values_(std::move(values)) {
    for (double v : values_.data())
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "joint entry negative or non-finite");
    if (std::abs(values_.sum() - 1.0) > kMassTolerance)
      throw Error(ErrorCode::DegenerateInput, "joint label distribution does not sum to 1");
  }

  const Matrix& values() const noexcept { return values_; }
  double operator()(std::size_t a, std::size_t b) const { return values_(a, b); }
  std::size_t source_classes() const noexcept { return values_.rows(); }
  std::size_t target_classes() const noexcept { return values_.cols(); }

  /// P(ys) as row sums.
  std::vector<double> source_marginal() const {
    std::vector<double> out(values_.rows(), 0.0);
    for (std::size_t a = 0; a < values_.rows(); ++a)
      for (double v : values_.row(a)) out[a] += v;
    return out;
  }

 private:
  Matrix values_;
};

struct TransferabilityScore {
  MetricId metric = MetricId::FOtce;
  double value = 0.0;
  double lambda = 0.0;
  std::optional<double> gamma;
  int iterations_used = 0;
  bool converged = true;
};

struct MetricConfig {
  SinkhornConfig sinkhorn{};
  double gamma = 0.5;
  bool standardize_features = false;
  /// Worker threads for the class-pair solves inside jc_otce. Assembly order
  /// is fixed, so results do not depend on this.
  unsigned threads = 1;

  void validate() const {
    sinkhorn.validate();
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(ErrorCode::InvalidArgument, "gamma must lie in [0, 1]");
  }
};

/// Cs x Ct class-conditional Wasserstein distances. Rows or columns of absent
/// classes hold +infinity and are never read by jc_otce.
class LabelDistanceMatrix {
 public:
  explicit LabelDistanceMatrix(Matrix values) : values_(std::move(values)) {
    for (double v : values_.data())
      if (!(v >= 0.0)) throw Error(ErrorCode::NonFiniteValue, "label distance negative or NaN");
  }
  const Matrix& values() const noexcept { return values_; }
  double operator()(std::size_t a, std::size_t b) const { return values_(a, b); }

 private:
  Matrix values_;
};

/// P(ys, yt) = sum of coupling mass over pairs (i, j) with those labels.
inline JointLabelDistribution joint_label_distribution(const Coupling& coupling, std::span<const Label> ys,
                                                       std::span<const Label> yt, std::uint32_t source_classes,
                                                       std::uint32_t target_classes) {
  if (ys.size() != coupling.rows() || yt.size() != coupling.cols())
    throw Error(ErrorCode::DimensionMismatch, "label counts do not match coupling shape");
  auto check = [](std::span<const Label> labels, std::uint32_t classes, const char* side) {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || static_cast<std::uint32_t>(labels[i]) >= classes)
        throw Error(ErrorCode::LabelOutOfRange,
                    std::string(side) + " label " + std::to_string(labels[i]) + " at index " + std::to_string(i));
  };
  check(ys, source_classes, "source");
  check(yt, target_classes, "target");

  Matrix joint(source_classes, target_classes);
  for (std::size_t i = 0; i < coupling.rows(); ++i) {
    auto out = joint.row(static_cast<std::size_t>(ys[i]));
    const auto plan = coupling.values().row(i);
    for (std::size_t j = 0; j < plan.size(); ++j) out[static_cast<std::size_t>(yt[j])] += plan[j];
  }
  return JointLabelDistribution(std::move(joint));
}

/// sum_{a,b} P(a,b) log(P(a,b) / P(a)), with 0 log 0 = 0. Always <= 0.
inline double negative_conditional_entropy(const JointLabelDistribution& joint) {
  const auto marginal = joint.source_marginal();
  double value = 0.0;
  for (std::size_t a = 0; a < joint.source_classes(); ++a) {
    if (marginal[a] <= 0.0) continue;
    for (std::size_t b = 0; b < joint.target_classes(); ++b) {
      const double p = joint(a, b);
      if (p > 0.0) value += p * std::log(p / marginal[a]);
    }
  }
  return value;
}

/// Everything produced along one metric evaluation, for diagnostics.
struct MetricEvaluation {
  TransferabilityScore score;
  JointLabelDistribution joint;
  SinkhornResult transport;
};

namespace detail {

inline void require_same_dim(const FeatureSet& src, const FeatureSet& tgt) {
  if (src.dim() != tgt.dim())
    throw Error(ErrorCode::DimensionMismatch,
                "source dimension " + std::to_string(src.dim()) + " vs target " + std::to_string(tgt.dim()));
}

inline MetricEvaluation score_coupling(MetricId id, SinkhornResult transport, const FeatureSet& src,
                                       const FeatureSet& tgt, const MetricConfig& config) {
  auto joint = joint_label_distribution(transport.coupling, src.labels(), tgt.labels(), src.class_count(),
                                        tgt.class_count());
  TransferabilityScore score{id,
                             negative_conditional_entropy(joint),
                             config.sinkhorn.lambda,
                             id == MetricId::JcOtce ? std::optional<double>(config.gamma) : std::nullopt,
                             transport.iterations,
                             transport.converged};
  return MetricEvaluation{score, std::move(joint), std::move(transport)};
}

inline Matrix rows_of_class(const FeatureSet& set, Label c) {
  std::vector<double> values;
  std::size_t count = 0;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set.labels()[i] == c) {
      const auto r = set.features().row(i);
      values.insert(values.end(), r.begin(), r.end());
      ++count;
    }
  return Matrix::from_data(count, set.dim(), std::move(values));
}

}  // namespace detail

inline MetricEvaluation evaluate_f_otce(const FeatureSet& src, const FeatureSet& tgt, const MetricConfig& config = {}) {
  config.validate();
  detail::require_same_dim(src, tgt);
  if (config.standardize_features) {
    auto [s, t] = standardize_jointly(src, tgt);
    MetricConfig plain = config;
    plain.standardize_features = false;
    return evaluate_f_otce(s, t, plain);
  }
  auto transport = sinkhorn(squared_euclidean_cost(src.features(), tgt.features()), config.sinkhorn);
  return detail::score_coupling(MetricId::FOtce, std::move(transport), src, tgt, config);
}

inline TransferabilityScore f_otce(const FeatureSet& src, const FeatureSet& tgt, const MetricConfig& config = {}) {
  return evaluate_f_otce(src, tgt, config).score;
}

/// Entry (a, b) is the unregularized cost <C, P*> of the entropic plan between
/// the class-a source cloud and the class-b target cloud.
inline LabelDistanceMatrix label_distance_matrix(const FeatureSet& src, const FeatureSet& tgt,
                                                 const MetricConfig& config = {}) {
  config.validate();
  detail::require_same_dim(src, tgt);
  const auto src_present = src.present_classes();
  const auto tgt_present = tgt.present_classes();
  std::vector<Matrix> src_clouds, tgt_clouds;
  for (Label a : src_present) src_clouds.push_back(detail::rows_of_class(src, a));
  for (Label b : tgt_present) tgt_clouds.push_back(detail::rows_of_class(tgt, b));

  const std::size_t jobs = src_present.size() * tgt_present.size();
  std::vector<double> results(jobs, 0.0);
  auto solve = [&](std::size_t job) {
    const auto& a = src_clouds[job / tgt_present.size()];
    const auto& b = tgt_clouds[job % tgt_present.size()];
    results[job] = sinkhorn(squared_euclidean_cost(a, b), config.sinkhorn).transport_cost;
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(config.threads, static_cast<unsigned>(jobs)));
  if (workers == 1) {
    for (std::size_t job = 0; job < jobs; ++job) solve(job);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          try {
            for (std::size_t job = w; job < jobs; job += workers) solve(job);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  Matrix out(src.class_count(), tgt.class_count(), std::numeric_limits<double>::infinity());
  for (std::size_t p = 0; p < src_present.size(); ++p)
    for (std::size_t q = 0; q < tgt_present.size(); ++q)
      out(static_cast<std::size_t>(src_present[p]), static_cast<std::size_t>(tgt_present[q])) =
          results[p * tgt_present.size() + q];
  return LabelDistanceMatrix(std::move(out));
}

/// Joint sample + label ground cost: gamma |xs - xt|^2 + (1 - gamma) W(ys, yt).
inline CostMatrix joint_ground_cost(const FeatureSet& src, const FeatureSet& tgt, const LabelDistanceMatrix& labels,
                                    double gamma) {
  const CostMatrix sample = squared_euclidean_cost(src.features(), tgt.features());
  Matrix out(src.size(), tgt.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto a = static_cast<std::size_t>(src.labels()[i]);
    for (std::size_t j = 0; j < tgt.size(); ++j)
      out(i, j) = gamma * sample(i, j) + (1.0 - gamma) * labels(a, static_cast<std::size_t>(tgt.labels()[j]));
  }
  return CostMatrix(std::move(out));
}

inline MetricEvaluation evaluate_jc_otce(const FeatureSet& src, const FeatureSet& tgt, const MetricConfig& config = {}) {
  config.validate();
  detail::require_same_dim(src, tgt);
  if (config.standardize_features) {
    auto [s, t] = standardize_jointly(src, tgt);
    MetricConfig plain = config;
    plain.standardize_features = false;
    return evaluate_jc_otce(s, t, plain);
  }
  CostMatrix cost = [&] {
    // gamma = 1 reduces to the plain sample cost; skip the class-pair solves.
    if (config.gamma == 1.0) return squared_euclidean_cost(src.features(), tgt.features());
    return joint_ground_cost(src, tgt, label_distance_matrix(src, tgt, config), config.gamma);
  }();
  auto transport = sinkhorn(cost, config.sinkhorn);
  return detail::score_coupling(MetricId::JcOtce, std::move(transport), src, tgt, config);
}

inline TransferabilityScore jc_otce(const FeatureSet& src, const FeatureSet& tgt, const MetricConfig& config = {}) {
  return evaluate_jc_otce(src, tgt, config).score;
}

/// -H(Yt | Ys) over paired labels of the same n instances.
inline double nce_paired(std::span<const Label> ys, std::span<const Label> yt) {
  if (ys.size() != yt.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(ys.size()) + " vs " + std::to_string(yt.size()) + " labels");
  if (ys.empty()) throw Error(ErrorCode::EmptyInput, "no labels");
  Label max_s = 0, max_t = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (ys[i] < 0 || yt[i] < 0) throw Error(ErrorCode::LabelOutOfRange, "negative label at index " + std::to_string(i));
    max_s = std::max(max_s, ys[i]);
    max_t = std::max(max_t, yt[i]);
  }
  Matrix counts(static_cast<std::size_t>(max_s) + 1, static_cast<std::size_t>(max_t) + 1);
  for (std::size_t i = 0; i < ys.size(); ++i) counts(static_cast<std::size_t>(ys[i]), static_cast<std::size_t>(yt[i])) += 1.0;
  const double n = static_cast<double>(ys.size());
  for (double& v : counts.data()) v /= n;
  return negative_conditional_entropy(JointLabelDistribution(std::move(counts)));
}

inline TransferabilityScore nce(const FeatureSet& src, const FeatureSet& tgt) {
  return TransferabilityScore{MetricId::Nce, nce_paired(src.labels(), tgt.labels()), 0.0, std::nullopt, 0, true};
}

}  // namespace otce
