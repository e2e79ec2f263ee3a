#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "kmrcd/types.hpp"

namespace kmrcd {

// ============================================================================
// Order statistics helpers
// ============================================================================

// Median with the midpoint convention for even length.
[[nodiscard]] inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sequence");
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + m, v.end());
  double med = v[m];
  if (v.size() % 2 == 0) {
    med = 0.5 * (med + *std::max_element(v.begin(), v.begin() + m));
  }
  return med;
}

[[nodiscard]] inline double median(const Vector& v) {
  return median(std::vector<double>(v.data(), v.data() + v.size()));
}

// MAD scale: 1.4826 * median |v_i - median(v)|.
[[nodiscard]] inline double mad_scale(const std::vector<double>& v) {
  const double med = median(v);
  std::vector<double> dev(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) dev[i] = std::abs(v[i] - med);
  return config::kMadConsistency * median(std::move(dev));
}

// ============================================================================
// Univariate minimum covariance determinant
// ============================================================================

// Consistency factor for the h/n coverage: alpha / P(chi2_3 <= q_alpha) with
// q_alpha the alpha quantile of chi2_1.
[[nodiscard]] inline double mcd_consistency_factor(double alpha) {
  if (alpha >= 1.0) return 1.0;
  const boost::math::chi_squared chi1(1.0);
  const boost::math::chi_squared chi3(3.0);
  const double q = boost::math::quantile(chi1, alpha);
  const double mass = boost::math::cdf(chi3, q);
  return alpha / mass;
}

namespace detail {

struct SortedValues {
  std::vector<double> value;
  std::vector<int> index;  // original position of each sorted value
};

[[nodiscard]] inline SortedValues sort_with_index(const std::vector<double>& v) {
  SortedValues s;
  s.index.resize(v.size());
  std::iota(s.index.begin(), s.index.end(), 0);
  std::stable_sort(s.index.begin(), s.index.end(),
                   [&](int a, int b) { return v[a] < v[b]; });
  s.value.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) s.value[i] = v[s.index[i]];
  return s;
}

}  // namespace detail

// Exhaustive scan of the n-h+1 contiguous windows of the sorted sample; the
// window with the smallest variance wins, ties by smallest starting index.
// scale = window standard deviation * sqrt(consistency factor).
[[nodiscard]] inline LocationScale univariate_mcd(const std::vector<double>& values, int h) {
  const int n = static_cast<int>(values.size());
  if (n < 2) throw std::invalid_argument("univariate mcd needs at least 2 values");
  if (h < 2 || h > n || h < n / 2) throw std::invalid_argument("univariate mcd h out of range");
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("univariate mcd input must be finite");
  }
  const detail::SortedValues s = detail::sort_with_index(values);

  int best_start = 0;
  double best_ss = std::numeric_limits<double>::infinity();
  double best_mean = 0.0;
  for (int start = 0; start + h <= n; ++start) {
    double mean = 0.0;
    for (int t = 0; t < h; ++t) mean += s.value[start + t];
    mean /= h;
    double ss = 0.0;
    for (int t = 0; t < h; ++t) {
      const double d = s.value[start + t] - mean;
      ss += d * d;
    }
    if (ss < best_ss) {
      best_ss = ss;
      best_start = start;
      best_mean = mean;
    }
  }

  LocationScale out;
  out.location = best_mean;
  out.scale = std::sqrt(best_ss / (h - 1)) *
              std::sqrt(mcd_consistency_factor(static_cast<double>(h) / n));
  out.support.assign(s.index.begin() + best_start, s.index.begin() + best_start + h);
  std::sort(out.support.begin(), out.support.end());
  return out;
}

// One reweighting pass at cutoff 2.5 on top of the h = floor(n/2)+1 raw
// estimate. The kept-sample standard deviation is divided by the standard
// deviation of the standard normal truncated to [-2.5, 2.5].
[[nodiscard]] inline LocationScale reweighted_univariate_mcd(const std::vector<double>& values) {
  const int n = static_cast<int>(values.size());
  if (n < 2) throw std::invalid_argument("reweighted mcd needs at least 2 values");
  const int h = n / 2 + 1;
  LocationScale raw = univariate_mcd(values, h);
  if (!(raw.scale > 0.0)) return raw;

  const double c = config::kReweightCutoff;
  std::vector<int> kept;
  for (int i = 0; i < n; ++i) {
    if (std::abs(values[i] - raw.location) / raw.scale <= c) kept.push_back(i);
  }
  if (kept.size() < 2) return raw;

  double mean = 0.0;
  for (int i : kept) mean += values[i];
  mean /= static_cast<double>(kept.size());
  double ss = 0.0;
  for (int i : kept) {
    const double d = values[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (static_cast<double>(kept.size()) - 1.0));

  const boost::math::normal z;
  const double mass = 2.0 * boost::math::cdf(z, c) - 1.0;
  const double trunc_var = 1.0 - 2.0 * c * boost::math::pdf(z, c) / mass;

  LocationScale out;
  out.location = mean;
  out.scale = sd / std::sqrt(trunc_var);
  out.support = std::move(kept);
  return out;
}

// ============================================================================
// Qn scale
// ============================================================================

namespace detail {

// Finite-sample Qn corrections; tabulated through n = 9, asymptotic after.
[[nodiscard]] inline double qn_correction(int n) {
  static constexpr double table[] = {0.399, 0.994, 0.512, 0.844, 0.611, 0.857, 0.669, 0.872};
  if (n <= 9) return table[n - 2];
  if (n % 2 == 1) return n / (n + 1.4);
  return n / (n + 3.8);
}

// k-th smallest (1-based) pairwise difference of a sorted sample, found by
// bit-level binary search on the value domain. Exact: the candidate set is
// the finite set of representable differences and count_le is monotone.
[[nodiscard]] inline double kth_pairwise_diff(const std::vector<double>& sorted, long long k) {
  const int n = static_cast<int>(sorted.size());
  const auto count_le = [&](double t) {
    long long count = 0;
    int i = 0;
    for (int j = 0; j < n; ++j) {
      while (sorted[j] - sorted[i] > t) ++i;
      count += j - i;
    }
    return count;
  };
  double lo = 0.0;
  double hi = sorted[n - 1] - sorted[0];
  if (count_le(lo) >= k) return lo;
  while (true) {
    const std::uint64_t blo = std::bit_cast<std::uint64_t>(lo);
    const std::uint64_t bhi = std::bit_cast<std::uint64_t>(hi);
    if (bhi - blo <= 1) return hi;
    const double mid = std::bit_cast<double>(blo + (bhi - blo) / 2);
    if (count_le(mid) >= k) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
}

[[nodiscard]] inline double kth_pairwise_diff_brute(const std::vector<double>& sorted,
                                                    long long k) {
  std::vector<double> diffs;
  diffs.reserve(sorted.size() * (sorted.size() - 1) / 2);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    for (std::size_t j = i + 1; j < sorted.size(); ++j) diffs.push_back(sorted[j] - sorted[i]);
  }
  std::nth_element(diffs.begin(), diffs.begin() + (k - 1), diffs.end());
  return diffs[static_cast<std::size_t>(k - 1)];
}

}  // namespace detail

// Qn = d * c(n) * {|v_i - v_j| : i < j}_(k) with k = C(floor(n/2)+1, 2) and
// d = 2.2219.
[[nodiscard]] inline double qn_scale(const std::vector<double>& values) {
  const int n = static_cast<int>(values.size());
  if (n < 2) throw std::invalid_argument("qn needs at least 2 values");
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("qn input must be finite");
  }
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const long long m = n / 2 + 1;
  const long long k = m * (m - 1) / 2;
  const double kth = (n <= 600) ? detail::kth_pairwise_diff_brute(sorted, k)
                                : detail::kth_pairwise_diff(sorted, k);
  return config::kQnConsistency * detail::qn_correction(n) * kth;
}

[[nodiscard]] inline double qn_scale(const Vector& v) {
  return qn_scale(std::vector<double>(v.data(), v.data() + v.size()));
}

// ============================================================================
// Columnwise robust standardization
// ============================================================================

struct StandardizeResult {
  DataMatrix data;                    // z-scores, standardized flag set
  std::vector<LocationScale> columns; // per-column reweighted estimates
};

[[nodiscard]] inline StandardizeResult robust_standardize(const DataMatrix& input) {
  input.validate();
  const Eigen::Index n = input.n();
  const Eigen::Index p = input.p();
  StandardizeResult out;
  out.data.rows.resize(n, p);
  out.data.standardized = true;
  out.columns.reserve(static_cast<std::size_t>(p));
  std::vector<double> column(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) column[static_cast<std::size_t>(i)] = input.rows(i, j);
    LocationScale ls = reweighted_univariate_mcd(column);
    if (!(ls.scale > 0.0)) {
      throw std::runtime_error("column " + std::to_string(j) + " has zero robust scale");
    }
    out.data.rows.col(j) = (input.rows.col(j).array() - ls.location) / ls.scale;
    out.columns.push_back(std::move(ls));
  }
  return out;
}

// Maps new points onto the scale of a previous standardization.
[[nodiscard]] inline Matrix apply_standardization(const Matrix& rows,
                                                  const std::vector<LocationScale>& columns) {
  if (rows.cols() != static_cast<Eigen::Index>(columns.size())) {
    throw std::invalid_argument("column count does not match the standardization");
  }
  Matrix out = rows;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const LocationScale& ls = columns[static_cast<std::size_t>(j)];
    out.col(j) = (out.col(j).array() - ls.location) / ls.scale;
  }
  return out;
}

}  // namespace kmrcd
