#pragma once

// Entropic optimal transport between two empirical measures.
//
// The solver minimizes <C, P> - lambda * H(P) over couplings P with
// prescribed marginals, H(P) = -sum P log P. It runs Sinkhorn updates on
// the dual potentials (f, g), in which P_ij = exp((f_i + g_j - C_ij) / lambda).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "otce/error.hpp"
#include "otce/matrix.hpp"

namespace otce {

/// Dense non-negative ground-cost matrix.
class CostMatrix {
 public:
  explicit CostMatrix(Matrix values) : values_(std::move(values)) {
    const auto v = values_.data();
    for (std::size_t k = 0; k < v.size(); ++k)
      if (!(v[k] >= 0.0) || !std::isfinite(v[k]))
        throw Error(ErrorCode::NonFiniteValue, "cost entry (" + std::to_string(k / values_.cols()) + ", " +
                                                   std::to_string(k % values_.cols()) + ") is negative or non-finite");
  }

  const Matrix& values() const noexcept { return values_; }
  std::size_t rows() const noexcept { return values_.rows(); }
  std::size_t cols() const noexcept { return values_.cols(); }
  double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }

 private:
  Matrix values_;
};

/// Transport plan together with the marginals it was solved for.
class Coupling {
 public:
  static constexpr double kMassTolerance = 1e-9;

  Coupling(Matrix values, std::vector<double> row_marginal, std::vector<double> col_marginal)
      : values_(std::move(values)), row_marginal_(std::move(row_marginal)), col_marginal_(std::move(col_marginal)) {
    if (row_marginal_.size() != values_.rows() || col_marginal_.size() != values_.cols())
      throw Error(ErrorCode::DimensionMismatch, "marginal lengths do not match coupling shape");
    for (double v : values_.data())
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "coupling entry negative or non-finite");
    if (std::abs(values_.sum() - 1.0) > kMassTolerance)
      throw Error(ErrorCode::DegenerateInput, "coupling mass " + std::to_string(values_.sum()) + " is not 1");
  }

  /// Coupling whose marginals are read off the plan itself.
  static Coupling from_plan(Matrix values) {
    std::vector<double> rows(values.rows(), 0.0), cols(values.cols(), 0.0);
    for (std::size_t i = 0; i < values.rows(); ++i)
      for (std::size_t j = 0; j < values.cols(); ++j) {
        rows[i] += values(i, j);
        cols[j] += values(i, j);
      }
    return Coupling(std::move(values), std::move(rows), std::move(cols));
  }

  const Matrix& values() const noexcept { return values_; }
  const std::vector<double>& row_marginal() const noexcept { return row_marginal_; }
  const std::vector<double>& col_marginal() const noexcept { return col_marginal_; }
  std::size_t rows() const noexcept { return values_.rows(); }
  std::size_t cols() const noexcept { return values_.cols(); }
  double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }

  /// L-infinity distance between the plan's row/column sums and the marginals.
  double marginal_violation() const {
    std::vector<double> cols(cols_count(), 0.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < rows(); ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < cols_count(); ++j) {
        r += values_(i, j);
        cols[j] += values_(i, j);
      }
      worst = std::max(worst, std::abs(r - row_marginal_[i]));
    }
    for (std::size_t j = 0; j < cols_count(); ++j) worst = std::max(worst, std::abs(cols[j] - col_marginal_[j]));
    return worst;
  }

  /// Shannon entropy -sum P log P with 0 log 0 = 0.
  double entropy() const {
    double h = 0.0;
    for (double p : values_.data())
      if (p > 0.0) h -= p * std::log(p);
    return h;
  }

 private:
  std::size_t cols_count() const noexcept { return values_.cols(); }

  Matrix values_;
  std::vector<double> row_marginal_;
  std::vector<double> col_marginal_;
};

struct SinkhornConfig {
  double lambda = 0.1;
  int max_iterations = 1000;
  double marginal_tolerance = 1e-9;
  bool log_domain = true;
  /// When false, exactly max_iterations update pairs run regardless of the
  /// marginal error (the unrolled-gradient setting).
  bool early_stop = true;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "lambda must be positive");
    if (max_iterations < 1) throw Error(ErrorCode::InvalidArgument, "max_iterations must be positive");
    if (!(marginal_tolerance > 0.0)) throw Error(ErrorCode::InvalidArgument, "marginal_tolerance must be positive");
  }
};

struct SinkhornResult {
  Coupling coupling;
  int iterations = 0;
  double final_marginal_error = 0.0;
  bool converged = false;
  double transport_cost = 0.0;
};

inline std::vector<double> uniform_marginal(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

/// values(i, j) = |a_i - b_j|^2. Each entry is accumulated from the
/// coordinate differences, so cost(a, b) is exactly the transpose of cost(b, a).
inline CostMatrix squared_euclidean_cost(const Matrix& source, const Matrix& target) {
  if (source.cols() != target.cols())
    throw Error(ErrorCode::DimensionMismatch, "feature dimensions " + std::to_string(source.cols()) + " and " +
                                                  std::to_string(target.cols()) + " differ");
  const std::size_t m = source.rows(), n = target.rows(), d = source.cols();
  Matrix out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = source.row(i).data();
    for (std::size_t j = 0; j < n; ++j) {
      const double* b = target.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a[k] - b[k];
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  return CostMatrix(std::move(out));
}

inline double transport_cost(const Coupling& coupling, const CostMatrix& cost) {
  if (coupling.rows() != cost.rows() || coupling.cols() != cost.cols())
    throw Error(ErrorCode::DimensionMismatch, "coupling and cost shapes differ");
  const auto p = coupling.values().data();
  const auto c = cost.values().data();
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += p[k] * c[k];
  return s;
}

namespace detail {

inline void check_marginal(std::span<const double> w, std::size_t expected, const char* which) {
  if (w.size() != expected)
    throw Error(ErrorCode::DimensionMismatch, std::string(which) + " marginal has length " + std::to_string(w.size()) +
                                                  ", expected " + std::to_string(expected));
  double s = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, std::string(which) + " marginal has a negative entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-12) throw Error(ErrorCode::InvalidArgument, std::string(which) + " marginal does not sum to 1");
}

/// Log-domain Sinkhorn kernels. The unrolled gradient replays exactly these
/// operations, so any change here must be mirrored in its backward pass.
struct LogSinkhornKernels {
  /// Scaled exponents below this, relative to the running maximum, are
  /// skipped: e^-60 summed over fewer than 1e8 terms stays under half an ulp
  /// of a sum that contains e^0.
  static constexpr double kNegligibleExponent = -60.0;

  const Matrix& cost;
  double lambda;
  double inv_lambda;

  /// out_i = logsumexp_j ((g_j - C_ij) / lambda).
  void row_lse(std::span<const double> g, std::span<double> out) const {
    const std::size_t n = cost.cols();
    for (std::size_t i = 0; i < cost.rows(); ++i) {
      const double* c = cost.row(i).data();
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, g[j] - c[j]);
      if (mx == -std::numeric_limits<double>::infinity()) {
        out[i] = mx;
        continue;
      }
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double z = (g[j] - c[j] - mx) * inv_lambda;
        if (z > kNegligibleExponent) s += std::exp(z);
      }
      out[i] = mx * inv_lambda + std::log(s);
    }
  }

  /// out_j = logsumexp_i ((f_i - C_ij) / lambda), accumulated row by row.
  void col_lse(std::span<const double> f, std::span<double> out, std::vector<double>& scratch) const {
    const std::size_t m = cost.rows(), n = cost.cols();
    scratch.assign(n, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < m; ++i) {
      const double* c = cost.row(i).data();
      const double fi = f[i];
      for (std::size_t j = 0; j < n; ++j) scratch[j] = std::max(scratch[j], fi - c[j]);
    }
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double* c = cost.row(i).data();
      const double fi = f[i];
      if (fi == -std::numeric_limits<double>::infinity()) continue;
      for (std::size_t j = 0; j < n; ++j) {
        const double z = (fi - c[j] - scratch[j]) * inv_lambda;
        if (z > kNegligibleExponent) out[j] += std::exp(z);
      }
    }
    for (std::size_t j = 0; j < n; ++j)
      out[j] = scratch[j] == -std::numeric_limits<double>::infinity() ? scratch[j]
                                                                       : scratch[j] * inv_lambda + std::log(out[j]);
  }

  /// f_i = lambda (log mu_i - row_lse_i).
  void update_f(std::span<const double> log_mu, std::span<const double> lse, std::span<double> f) const {
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = lambda * (log_mu[i] - lse[i]);
  }

  Matrix plan(std::span<const double> f, std::span<const double> g) const {
    Matrix p(cost.rows(), cost.cols());
    for (std::size_t i = 0; i < cost.rows(); ++i) {
      const double* c = cost.row(i).data();
      double* out = p.row(i).data();
      for (std::size_t j = 0; j < cost.cols(); ++j) out[j] = std::exp((f[i] + g[j] - c[j]) * inv_lambda);
    }
    return p;
  }
};

inline std::vector<double> log_of(std::span<const double> w) {
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = std::log(w[i]);
  return out;
}

inline double column_violation(const Matrix& plan, std::span<const double> nu) {
  std::vector<double> cols(plan.cols(), 0.0);
  for (std::size_t i = 0; i < plan.rows(); ++i)
    for (std::size_t j = 0; j < plan.cols(); ++j) cols[j] += plan(i, j);
  double worst = 0.0;
  for (std::size_t j = 0; j < cols.size(); ++j) worst = std::max(worst, std::abs(cols[j] - nu[j]));
  return worst;
}

inline double row_violation(const Matrix& plan, std::span<const double> mu) {
  double worst = 0.0;
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    double r = 0.0;
    for (double v : plan.row(i)) r += v;
    worst = std::max(worst, std::abs(r - mu[i]));
  }
  return worst;
}

inline SinkhornResult sinkhorn_log(const CostMatrix& cost, std::span<const double> mu, std::span<const double> nu,
                                   const SinkhornConfig& config) {
  const std::size_t m = cost.rows(), n = cost.cols();
  const LogSinkhornKernels k{cost.values(), config.lambda, 1.0 / config.lambda};
  const auto log_mu = log_of(mu);
  const auto log_nu = log_of(nu);
  std::vector<double> f(m, 0.0), g(n, 0.0), lse_row(m), lse_col(n), scratch;

  int iterations = 0;
  double row_error = std::numeric_limits<double>::infinity();
  bool converged = false;
  while (true) {
    k.row_lse(g, lse_row);
    if (iterations > 0 && config.early_stop) {
      // Row sums of the current plan are exp(f_i / lambda + lse_row_i).
      row_error = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        row_error = std::max(row_error, std::abs(std::exp(f[i] * k.inv_lambda + lse_row[i]) - mu[i]));
      if (!std::isfinite(row_error)) throw Error(ErrorCode::NumericalOverflow, "log-domain potentials became non-finite");
      if (row_error <= config.marginal_tolerance) {
        converged = true;
        break;
      }
    }
    if (iterations == config.max_iterations) break;
    k.update_f(log_mu, lse_row, f);
    k.col_lse(f, lse_col, scratch);
    k.update_f(log_nu, lse_col, g);
    ++iterations;
  }

  Matrix plan = k.plan(f, g);
  const double error = std::max(row_violation(plan, mu), column_violation(plan, nu));
  const double tcost = [&] {
    double s = 0.0;
    const auto p = plan.data();
    const auto c = cost.values().data();
    for (std::size_t q = 0; q < p.size(); ++q) s += p[q] * c[q];
    return s;
  }();
  return SinkhornResult{Coupling(std::move(plan), {mu.begin(), mu.end()}, {nu.begin(), nu.end()}), iterations, error,
                        converged && error <= config.marginal_tolerance, tcost};
}

inline SinkhornResult sinkhorn_scaling(const CostMatrix& cost, std::span<const double> mu, std::span<const double> nu,
                                       const SinkhornConfig& config) {
  const std::size_t m = cost.rows(), n = cost.cols();
  Matrix kernel(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) kernel(i, j) = std::exp(-cost(i, j) / config.lambda);

  std::vector<double> u(m, 1.0), v(n, 1.0), kv(m), ktu(n);
  auto overflow = [] {
    return Error(ErrorCode::NumericalOverflow, "scaling iterations under/overflowed; retry in the log domain");
  };
  int iterations = 0;
  bool converged = false;
  while (true) {
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += kernel(i, j) * v[j];
      kv[i] = s;
    }
    if (iterations > 0 && config.early_stop) {
      double row_error = 0.0;
      for (std::size_t i = 0; i < m; ++i) row_error = std::max(row_error, std::abs(u[i] * kv[i] - mu[i]));
      if (!std::isfinite(row_error)) throw overflow();
      if (row_error <= config.marginal_tolerance) {
        converged = true;
        break;
      }
    }
    if (iterations == config.max_iterations) break;
    for (std::size_t i = 0; i < m; ++i) {
      if (!(kv[i] > 0.0) && mu[i] > 0.0) throw overflow();
      u[i] = mu[i] > 0.0 ? mu[i] / kv[i] : 0.0;
      if (!std::isfinite(u[i])) throw overflow();
    }
    std::fill(ktu.begin(), ktu.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ktu[j] += kernel(i, j) * u[i];
    for (std::size_t j = 0; j < n; ++j) {
      if (!(ktu[j] > 0.0) && nu[j] > 0.0) throw overflow();
      v[j] = nu[j] > 0.0 ? nu[j] / ktu[j] : 0.0;
      if (!std::isfinite(v[j])) throw overflow();
    }
    ++iterations;
  }

  Matrix plan(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) plan(i, j) = u[i] * kernel(i, j) * v[j];
  const double error = std::max(row_violation(plan, mu), column_violation(plan, nu));
  double tcost = 0.0;
  for (std::size_t q = 0; q < plan.size(); ++q) tcost += plan.data()[q] * cost.values().data()[q];
  return SinkhornResult{Coupling(std::move(plan), {mu.begin(), mu.end()}, {nu.begin(), nu.end()}), iterations, error,
                        converged && error <= config.marginal_tolerance, tcost};
}

}  // namespace detail

/// Entropic OT plan. Hitting max_iterations is not an error: the result
/// reports converged = false.
inline SinkhornResult sinkhorn(const CostMatrix& cost, std::span<const double> mu, std::span<const double> nu,
                               const SinkhornConfig& config = {}) {
  config.validate();
  if (cost.rows() == 0 || cost.cols() == 0) throw Error(ErrorCode::DimensionMismatch, "empty cost matrix");
  detail::check_marginal(mu, cost.rows(), "row");
  detail::check_marginal(nu, cost.cols(), "column");
  return config.log_domain ? detail::sinkhorn_log(cost, mu, nu, config)
                           : detail::sinkhorn_scaling(cost, mu, nu, config);
}

/// Uniform-marginal convenience overload.
inline SinkhornResult sinkhorn(const CostMatrix& cost, const SinkhornConfig& config = {}) {
  const auto mu = uniform_marginal(cost.rows());
  const auto nu = uniform_marginal(cost.cols());
  return sinkhorn(cost, mu, nu, config);
}

struct ExactAssignment {
  double value = 0.0;
  std::vector<std::size_t> permutation;
};

inline constexpr std::size_t kBruteForceLimit = 8;

/// Unregularized OT with uniform marginals on a square cost, by enumerating
/// all n! permutations: value = min_sigma (1/n) sum_i cost(i, sigma(i)).
/// The first minimizer in lexicographic order is returned.
inline ExactAssignment exact_ot_bruteforce(const CostMatrix& cost) {
  const std::size_t n = cost.rows();
  if (n != cost.cols()) throw Error(ErrorCode::DimensionMismatch, "brute-force OT needs a square cost");
  if (n == 0) throw Error(ErrorCode::DimensionMismatch, "empty cost matrix");
  if (n > kBruteForceLimit)
    throw Error(ErrorCode::TooLarge, "n = " + std::to_string(n) + " exceeds " + std::to_string(kBruteForceLimit));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  ExactAssignment best{std::numeric_limits<double>::infinity(), perm};
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += cost(i, perm[i]);
    s /= static_cast<double>(n);
    if (s < best.value) best = {s, perm};
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace otce
