#pragma once

// Rank correlation between transfer accuracies and transferability scores,
// and ordering of candidate sources by score.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "otce/error.hpp"

namespace otce {

struct ScoredPair {
  std::string task_id;
  double transferability = 0.0;
  std::optional<double> accuracy;
};

namespace detail {

inline void check_pair_inputs(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " values");
  if (a.size() < 2) throw Error(ErrorCode::DegenerateInput, "need at least two observations");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i]) || !std::isfinite(b[i]))
      throw Error(ErrorCode::DegenerateInput, "non-finite value at index " + std::to_string(i));
}

}  // namespace detail

/// 1-based ranks; tied values share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline bool has_ties(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

/// Spearman's rho. Tie-free input uses rho = 1 - 6 sum d^2 / (n (n^2 - 1));
/// with ties it is the Pearson correlation of average ranks.
inline double spearman_rho(std::span<const double> acc, std::span<const double> trf) {
  detail::check_pair_inputs(acc, trf);
  const auto ra = average_ranks(acc);
  const auto rt = average_ranks(trf);
  const auto n = static_cast<double>(acc.size());

  if (!has_ties(acc) && !has_ties(trf)) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) d2 += (ra[i] - rt[i]) * (ra[i] - rt[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
  }

  const double mean = (n + 1.0) / 2.0;  // average ranks always have this mean
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double x = ra[i] - mean, y = rt[i] - mean;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(ErrorCode::DegenerateInput, "a sequence has zero rank variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Kendall's tau-a: (2 / (n (n - 1))) sum_{i<j} sgn(dAcc) sgn(dTrf). Ties add
/// zero. Counted in O(n log n) via merge-sort inversions (Knight's method);
/// the integer numerator is exact, so the result equals the pairwise loop.
inline double kendall_tau(std::span<const double> acc, std::span<const double> trf) {
  detail::check_pair_inputs(acc, trf);
  const std::size_t n = acc.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return acc[a] < acc[b] || (acc[a] == acc[b] && trf[a] < trf[b]);
  });

  auto tied_pairs = [](std::int64_t run) { return run * (run - 1) / 2; };
  std::int64_t ties_acc = 0, ties_joint = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && acc[order[j + 1]] == acc[order[i]]) ++j;
    ties_acc += tied_pairs(static_cast<std::int64_t>(j - i + 1));
    for (std::size_t k = i; k <= j;) {
      std::size_t l = k;
      while (l + 1 <= j && trf[order[l + 1]] == trf[order[k]]) ++l;
      ties_joint += tied_pairs(static_cast<std::int64_t>(l - k + 1));
      k = l + 1;
    }
    i = j + 1;
  }

  // Stable merge sort on trf; each strict inversion is one discordant pair.
  std::vector<double> y(n), buffer(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = trf[order[i]];
  std::int64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t a = lo, b = mid, out = lo;
      while (a < mid && b < hi) {
        if (y[b] < y[a]) {
          swaps += static_cast<std::int64_t>(mid - a);
          buffer[out++] = y[b++];
        } else {
          buffer[out++] = y[a++];
        }
      }
      while (a < mid) buffer[out++] = y[a++];
      while (b < hi) buffer[out++] = y[b++];
    }
    std::swap(y, buffer);
  }
  std::int64_t ties_trf = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && y[j + 1] == y[i]) ++j;
    ties_trf += tied_pairs(static_cast<std::int64_t>(j - i + 1));
    i = j + 1;
  }

  const std::int64_t total = tied_pairs(static_cast<std::int64_t>(n));
  const std::int64_t concordant_minus_discordant = total - ties_acc - ties_trf + ties_joint - 2 * swaps;
  return 2.0 * static_cast<double>(concordant_minus_discordant) / (static_cast<double>(n) * static_cast<double>(n - 1));
}

/// Descending by transferability; equal scores fall back to task_id order.
inline std::vector<ScoredPair> rank_sources(std::vector<ScoredPair> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no sources to rank");
  for (const auto& p : pairs)
    if (std::isnan(p.transferability)) throw Error(ErrorCode::DegenerateInput, p.task_id + ": score is NaN");
  std::sort(pairs.begin(), pairs.end(), [](const ScoredPair& a, const ScoredPair& b) {
    if (a.transferability != b.transferability) return a.transferability > b.transferability;
    return a.task_id < b.task_id;
  });
  return pairs;
}

/// Reads "task_id,score,accuracy" rows. A first row whose score field is not
/// numeric is treated as a header.
inline std::vector<ScoredPair> parse_scored_pairs(std::string_view text) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  };
  auto number = [](std::string_view s) -> std::optional<double> {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || s.empty() || !std::isfinite(v)) return std::nullopt;
    return v;
  };

  std::vector<ScoredPair> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    const auto line = trim(text.substr(0, eol));
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    for (std::size_t start = 0;;) {
      const auto comma = line.find(',', start);
      fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() != 3) throw Error(ErrorCode::RaggedRow, where + ": expected task_id,score,accuracy");
    const auto score = number(fields[1]);
    if (!score) {
      if (out.empty() && line_no == 1) continue;
      throw Error(ErrorCode::NonNumericField, where + ": score '" + std::string(fields[1]) + "'");
    }
    ScoredPair pair{std::string(fields[0]), *score, std::nullopt};
    if (!fields[2].empty()) {
      const auto acc = number(fields[2]);
      if (!acc) throw Error(ErrorCode::NonNumericField, where + ": accuracy '" + std::string(fields[2]) + "'");
      if (*acc < 0.0 || *acc > 1.0) throw Error(ErrorCode::InvalidArgument, where + ": accuracy outside [0, 1]");
      pair.accuracy = *acc;
    }
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace otce
