#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "otce/error.hpp"
#include "otce/matrix.hpp"

namespace otce {

using Label = std::int32_t;
using Labels = std::vector<Label>;

/// Embedded samples of one task: n x d features, n labels in [0, C), and C.
///
/// Construction validates everything; a FeatureSet that exists is valid.
class FeatureSet {
 public:
  FeatureSet(Matrix features, Labels labels, std::uint32_t class_count, std::string name = {})
      : features_(std::move(features)),
        labels_(std::move(labels)),
        class_count_(class_count),
        name_(std::move(name)) {
    validate();
  }

  const Matrix& features() const noexcept { return features_; }
  const Labels& labels() const noexcept { return labels_; }
  std::uint32_t class_count() const noexcept { return class_count_; }
  const std::string& name() const noexcept { return name_; }
  std::size_t size() const noexcept { return features_.rows(); }
  std::size_t dim() const noexcept { return features_.cols(); }

  /// Per-class sample counts, length C.
  std::vector<std::size_t> class_sizes() const {
    std::vector<std::size_t> counts(class_count_, 0);
    for (Label y : labels_) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }

  /// Classes with at least one sample, ascending.
  std::vector<Label> present_classes() const {
    std::vector<Label> out;
    const auto counts = class_sizes();
    for (std::size_t c = 0; c < counts.size(); ++c)
      if (counts[c] > 0) out.push_back(static_cast<Label>(c));
    return out;
  }

  FeatureSet with_features(Matrix features) const {
    return FeatureSet(std::move(features), labels_, class_count_, name_);
  }

  FeatureSet with_name(std::string name) const {
    return FeatureSet(features_, labels_, class_count_, std::move(name));
  }

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;

 private:
  void validate() const {
    const std::size_t n = features_.rows();
    if (n == 0) throw Error(ErrorCode::DimensionMismatch, "feature set has no samples");
    if (features_.cols() == 0) throw Error(ErrorCode::DimensionMismatch, "feature dimension is zero");
    if (class_count_ == 0) throw Error(ErrorCode::LabelOutOfRange, "class count is zero");
    if (labels_.size() != n)
      throw Error(ErrorCode::DimensionMismatch,
                  std::to_string(labels_.size()) + " labels for " + std::to_string(n) + " samples");
    for (std::size_t i = 0; i < n; ++i) {
      const Label y = labels_[i];
      if (y < 0 || static_cast<std::uint32_t>(y) >= class_count_)
        throw Error(ErrorCode::LabelOutOfRange, "record " + std::to_string(i) + ": label " + std::to_string(y) +
                                                    " outside [0, " + std::to_string(class_count_) + ")");
    }
    const auto values = features_.data();
    for (std::size_t k = 0; k < values.size(); ++k)
      if (!std::isfinite(values[k]))
        throw Error(ErrorCode::NonFiniteValue, "record " + std::to_string(k / features_.cols()) + ", column " +
                                                   std::to_string(k % features_.cols()));
  }

  Matrix features_;
  Labels labels_;
  std::uint32_t class_count_;
  std::string name_;
};

/// Standardizes every column to zero mean and unit variance using statistics
/// pooled over both sets, so relative geometry between the sets is kept.
/// Constant columns are centered only.
inline std::pair<FeatureSet, FeatureSet> standardize_jointly(const FeatureSet& a, const FeatureSet& b) {
  if (a.dim() != b.dim()) throw Error(ErrorCode::DimensionMismatch, "feature dimensions differ");
  const std::size_t d = a.dim();
  const double total = static_cast<double>(a.size() + b.size());
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (const FeatureSet* s : {&a, &b})
    for (std::size_t i = 0; i < s->size(); ++i)
      for (std::size_t k = 0; k < d; ++k) mean[k] += s->features()(i, k);
  for (double& m : mean) m /= total;
  for (const FeatureSet* s : {&a, &b})
    for (std::size_t i = 0; i < s->size(); ++i)
      for (std::size_t k = 0; k < d; ++k) {
        const double z = s->features()(i, k) - mean[k];
        var[k] += z * z;
      }
  std::vector<double> scale(d);
  for (std::size_t k = 0; k < d; ++k) {
    const double sd = std::sqrt(var[k] / total);
    scale[k] = sd > 0.0 ? 1.0 / sd : 1.0;
  }
  auto apply = [&](const FeatureSet& s) {
    Matrix out = s.features();
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t k = 0; k < d; ++k) out(i, k) = (out(i, k) - mean[k]) * scale[k];
    return s.with_features(std::move(out));
  };
  return {apply(a), apply(b)};
}

}  // namespace otce
