#pragma once

// Gradient ascent on F-OTCE with respect to target embeddings.
//
// The score is differentiated through exactly K log-domain Sinkhorn updates
// (no early stopping), in reverse mode:
//
//   X_t -> C -> (f1, g1) -> ... -> (fK, gK) -> P -> P(ys, yt) -> score
//
// With S_ij the column softmax used to form g and R_ij the row softmax used
// to form f, the adjoints are
//   d score / d P_ij = log(P(a_i, b_j) / P(a_i))
//   g_j = lambda log nu_j - lambda LSE_i((f_i - C_ij) / lambda):
//       f_bar_i -= sum_j g_bar_j S_ij,   C_bar_ij += g_bar_j S_ij
//   f_i = lambda log mu_i - lambda LSE_j((g_j - C_ij) / lambda):
//       g_bar_j -= sum_i f_bar_i R_ij,   C_bar_ij += f_bar_i R_ij
//   C_ij = |xs_i - xt_j|^2:  xt_bar_j = sum_i 2 C_bar_ij (xt_j - xs_i)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "otce/error.hpp"
#include "otce/feature_set.hpp"
#include "otce/metrics.hpp"
#include "otce/ot.hpp"
#include "otce/rng.hpp"

namespace otce::guidance {

struct GradConfig {
  double lambda = 0.1;
  int unroll_iterations = 100;
  double learning_rate = 0.01;
  int steps = 200;
  int source_batch = 256;
  int target_batch = 25;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "lambda must be positive");
    if (unroll_iterations < 1) throw Error(ErrorCode::InvalidArgument, "unroll_iterations must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw Error(ErrorCode::InvalidArgument, "learning_rate must be non-negative");
    if (steps < 0) throw Error(ErrorCode::InvalidArgument, "steps must be non-negative");
    if (source_batch < 1 || target_batch < 1) throw Error(ErrorCode::InvalidArgument, "batch sizes must be positive");
  }

  /// The Sinkhorn configuration whose forward pass the gradient replays.
  SinkhornConfig sinkhorn() const {
    return SinkhornConfig{lambda, unroll_iterations, 1e-9, true, false};
  }
};

struct ValueAndGrad {
  double value = 0.0;
  Matrix grad;  // n x d, d score / d X_t
};

inline ValueAndGrad f_otce_value_and_grad(const Matrix& xs, std::span<const Label> ys, std::uint32_t source_classes,
                                          const Matrix& xt, std::span<const Label> yt, std::uint32_t target_classes,
                                          double lambda, int unroll_iterations) {
  if (xs.cols() != xt.cols()) throw Error(ErrorCode::DimensionMismatch, "feature dimensions differ");
  if (ys.size() != xs.rows() || yt.size() != xt.rows())
    throw Error(ErrorCode::DimensionMismatch, "label counts do not match feature rows");
  if (!(lambda > 0.0) || unroll_iterations < 1) throw Error(ErrorCode::InvalidArgument, "bad lambda or K");
  const std::size_t m = xs.rows(), n = xt.rows(), d = xs.cols();
  const int K = unroll_iterations;

  // Forward, identical in operation order to sinkhorn() with max_iterations = K.
  const CostMatrix cost = squared_euclidean_cost(xs, xt);
  const Matrix& c = cost.values();
  const detail::LogSinkhornKernels kern{c, lambda, 1.0 / lambda};
  const auto mu = uniform_marginal(m), nu = uniform_marginal(n);
  const auto log_mu = detail::log_of(mu), log_nu = detail::log_of(nu);
  std::vector<std::vector<double>> f(K + 1, std::vector<double>(m, 0.0)), g(K + 1, std::vector<double>(n, 0.0));
  std::vector<double> lse_row(m), lse_col(n), scratch;
  for (int t = 1; t <= K; ++t) {
    kern.row_lse(g[t - 1], lse_row);
    kern.update_f(log_mu, lse_row, f[t]);
    kern.col_lse(f[t], lse_col, scratch);
    kern.update_f(log_nu, lse_col, g[t]);
  }
  const Matrix plan = kern.plan(f[K], g[K]);
  const auto joint = joint_label_distribution(Coupling(plan, mu, nu), ys, yt, source_classes, target_classes);
  const double value = negative_conditional_entropy(joint);
  const auto source_marginal = joint.source_marginal();

  // d score / d P, then through P = exp((f + g - C) / lambda).
  Matrix c_bar(m, n);
  std::vector<double> f_bar(m, 0.0), g_bar(n, 0.0), g_prev_bar(n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto a = static_cast<std::size_t>(ys[i]);
    for (std::size_t j = 0; j < n; ++j) {
      const double p_ab = joint(a, static_cast<std::size_t>(yt[j]));
      if (p_ab <= 0.0) continue;
      const double w = std::log(p_ab / source_marginal[a]) * plan(i, j) * kern.inv_lambda;
      f_bar[i] += w;
      g_bar[j] += w;
      c_bar(i, j) -= w;
    }
  }

  for (int t = K; t >= 1; --t) {
    const auto& ft = f[t];
    const auto& gt = g[t];
    const auto& gp = g[t - 1];
    // Through g^t = g(f^t, C).
    for (std::size_t i = 0; i < m; ++i) {
      const double* ci = c.row(i).data();
      double* cb = c_bar.row(i).data();
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double s = std::exp((ft[i] + gt[j] - ci[j]) * kern.inv_lambda - log_nu[j]);
        acc += g_bar[j] * s;
        cb[j] += g_bar[j] * s;
      }
      f_bar[i] -= acc;
    }
    // Through f^t = f(g^{t-1}, C).
    std::fill(g_prev_bar.begin(), g_prev_bar.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double* ci = c.row(i).data();
      double* cb = c_bar.row(i).data();
      const double fb = f_bar[i];
      for (std::size_t j = 0; j < n; ++j) {
        const double r = std::exp((ft[i] + gp[j] - ci[j]) * kern.inv_lambda - log_mu[i]);
        g_prev_bar[j] -= fb * r;
        cb[j] += fb * r;
      }
    }
    std::swap(g_bar, g_prev_bar);
    std::fill(f_bar.begin(), f_bar.end(), 0.0);
  }

  Matrix grad(n, d);
  for (std::size_t i = 0; i < m; ++i) {
    const auto a = xs.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double w = 2.0 * c_bar(i, j);
      if (w == 0.0) continue;
      auto out = grad.row(j);
      const auto b = xt.row(j);
      for (std::size_t k = 0; k < d; ++k) out[k] += w * (b[k] - a[k]);
    }
  }
  for (double v : grad.data())
    if (!std::isfinite(v))
      throw Error(ErrorCode::NonFiniteGradient, "gradient is not finite; lambda may be too small for this instance");
  return ValueAndGrad{value, std::move(grad)};
}

inline ValueAndGrad f_otce_value_and_grad(const FeatureSet& src, const FeatureSet& tgt, const GradConfig& cfg) {
  cfg.validate();
  return f_otce_value_and_grad(src.features(), src.labels(), src.class_count(), tgt.features(), tgt.labels(),
                               tgt.class_count(), cfg.lambda, cfg.unroll_iterations);
}

struct TraceRow {
  int step = 0;
  double f_otce = 0.0;     // full-set K-iteration score before the update
  double grad_norm = 0.0;  // Frobenius norm of the mini-batch gradient
};

/// F-OTCE after exactly K log-domain iterations, the quantity the gradient
/// differentiates.
inline double unrolled_f_otce(const FeatureSet& src, const FeatureSet& tgt, double lambda, int unroll_iterations) {
  const auto transport = sinkhorn(squared_euclidean_cost(src.features(), tgt.features()),
                                  SinkhornConfig{lambda, unroll_iterations, 1e-9, true, false});
  return negative_conditional_entropy(
      joint_label_distribution(transport.coupling, src.labels(), tgt.labels(), src.class_count(), tgt.class_count()));
}

struct OptimizationResult {
  FeatureSet target;
  std::vector<TraceRow> trace;
};

/// Consecutive trace decreases tolerated before declaring divergence, and the
/// total drop over that run that triggers it.
inline constexpr int kDivergenceWindow = 10;
inline constexpr double kDivergenceDrop = 0.1;

namespace detail {

inline void shuffle(std::vector<std::size_t>& idx, PhiloxStream& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
}

inline Matrix gather(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(x.row(rows[r]).data(), x.cols(), out.row(r).data());
  return out;
}

inline Labels gather(const Labels& y, std::span<const std::size_t> rows) {
  Labels out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = y[rows[r]];
  return out;
}

}  // namespace detail

/// Plain gradient ascent on the target embedding matrix with the source
/// frozen. Each epoch visits the target in shuffled mini-batches; each step
/// draws a fresh source mini-batch without replacement. Divergence means
/// kDivergenceWindow consecutive drops of the traced score totalling more
/// than kDivergenceDrop.
inline OptimizationResult optimize_target_embeddings(const FeatureSet& src, const FeatureSet& tgt,
                                                     const GradConfig& cfg) {
  cfg.validate();
  if (src.dim() != tgt.dim()) throw Error(ErrorCode::DimensionMismatch, "feature dimensions differ");
  Matrix xt = tgt.features();
  std::vector<TraceRow> trace;
  trace.reserve(static_cast<std::size_t>(cfg.steps));

  PhiloxStream target_rng(cfg.seed, 1), source_rng(cfg.seed, 2);
  std::vector<std::size_t> target_order(tgt.size()), source_pool(src.size());
  std::iota(source_pool.begin(), source_pool.end(), std::size_t{0});
  const std::size_t tb = std::min<std::size_t>(static_cast<std::size_t>(cfg.target_batch), tgt.size());
  const std::size_t sb = std::min<std::size_t>(static_cast<std::size_t>(cfg.source_batch), src.size());

  std::size_t cursor = tgt.size();
  int decreasing = 0;
  double run_start = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    if (cursor >= tgt.size()) {
      std::iota(target_order.begin(), target_order.end(), std::size_t{0});
      detail::shuffle(target_order, target_rng);
      cursor = 0;
    }
    const std::size_t count = std::min(tb, tgt.size() - cursor);
    const std::span<const std::size_t> batch(target_order.data() + cursor, count);
    cursor += count;

    std::span<const std::size_t> source_rows(source_pool);
    if (sb < src.size()) {
      // Partial Fisher-Yates: the first sb entries become a uniform sample.
      for (std::size_t i = 0; i < sb; ++i) std::swap(source_pool[i], source_pool[i + source_rng.uniform_int(src.size() - i)]);
      source_rows = source_rows.first(sb);
    }

    const double full_score =
        unrolled_f_otce(src, FeatureSet(xt, tgt.labels(), tgt.class_count()), cfg.lambda, cfg.unroll_iterations);

    const Matrix bs = detail::gather(src.features(), source_rows);
    const Labels bys = detail::gather(src.labels(), source_rows);
    const Matrix bt = detail::gather(xt, batch);
    const Labels byt = detail::gather(tgt.labels(), batch);
    const auto vg = f_otce_value_and_grad(bs, bys, src.class_count(), bt, byt, tgt.class_count(), cfg.lambda,
                                          cfg.unroll_iterations);

    double norm2 = 0.0;
    for (double v : vg.grad.data()) norm2 += v * v;
    for (std::size_t r = 0; r < batch.size(); ++r) {
      auto row = xt.row(batch[r]);
      const auto gr = vg.grad.row(r);
      for (std::size_t k = 0; k < row.size(); ++k) row[k] += cfg.learning_rate * gr[k];
    }

    if (!trace.empty() && full_score < trace.back().f_otce) {
      if (decreasing == 0) run_start = trace.back().f_otce;
      ++decreasing;
      if (decreasing >= kDivergenceWindow && run_start - full_score > kDivergenceDrop)
        throw Error(ErrorCode::DivergenceDetected, "score fell by " + std::to_string(run_start - full_score) +
                                                       " over " + std::to_string(decreasing) + " consecutive steps");
    } else {
      decreasing = 0;
    }
    if (!std::isfinite(norm2)) throw Error(ErrorCode::NonFiniteGradient, "gradient norm is not finite");
    trace.push_back(TraceRow{step, full_score, std::sqrt(norm2)});
  }
  for (double v : xt.data())
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteGradient, "optimized embeddings are not finite");
  return OptimizationResult{tgt.with_features(std::move(xt)), std::move(trace)};
}

/// Accuracy of a nearest-class-centroid classifier fit on `train` and
/// evaluated on `test`. Equal distances go to the smaller class index.
inline double nearest_centroid_probe(const FeatureSet& train, const FeatureSet& test) {
  if (train.dim() != test.dim()) throw Error(ErrorCode::DimensionMismatch, "feature dimensions differ");
  const auto sizes = train.class_sizes();
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto y = static_cast<std::size_t>(test.labels()[i]);
    if (y >= sizes.size() || sizes[y] == 0)
      throw Error(ErrorCode::MissingClass, "test class " + std::to_string(y) + " has no training samples");
  }
  const std::size_t d = train.dim();
  Matrix centroids(sizes.size(), d);
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto row = centroids.row(static_cast<std::size_t>(train.labels()[i]));
    const auto x = train.features().row(i);
    for (std::size_t k = 0; k < d; ++k) row[k] += x[k];
  }
  for (std::size_t c = 0; c < sizes.size(); ++c)
    if (sizes[c] > 0)
      for (double& v : centroids.row(c)) v /= static_cast<double>(sizes[c]);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto x = test.features().row(i);
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      if (sizes[c] == 0) continue;
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) dist += (x[k] - centroids(c, k)) * (x[k] - centroids(c, k));
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    if (static_cast<Label>(best) == test.labels()[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace otce::guidance
