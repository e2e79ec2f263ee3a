#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kmrcd/robust_univariate.hpp"
#include "kmrcd/types.hpp"

namespace kmrcd {

// ============================================================================
// Subset selection from outlyingness scores
// ============================================================================

// h smallest scores win, ties by smallest index; the weight pair is the
// indicator of the selected subset.
[[nodiscard]] inline std::pair<HSubset, WeightPair> subset_from_scores(const Vector& scores, int h,
                                                                       StartOrigin origin) {
  const Eigen::Index n = scores.size();
  if (h < 1 || h > n) throw std::invalid_argument("subset size out of range");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores(a) != scores(b)) return scores(a) < scores(b);
    return a < b;
  });
  HSubset subset;
  subset.indices.assign(order.begin(), order.begin() + h);
  std::sort(subset.indices.begin(), subset.indices.end());
  WeightPair wp;
  wp.w = Vector::Zero(n);
  for (int i : subset.indices) wp.w(i) = 1.0;
  wp.u = wp.w;
  wp.origin = origin;
  return {std::move(subset), std::move(wp)};
}

// ============================================================================
// Spatial median (Weiszfeld iteration in feature space)
// ============================================================================

// Fixed 10-iteration Weiszfeld update on the raw Gram: the candidate median
// is m = sum_i gamma_i phi(x_i), and each step resets gamma_i proportional to
// 1 / ||phi(x_i) - m||, with the squared distance floored at 1e-12.
[[nodiscard]] inline Vector spatial_median_weights(const GramMatrix& gram) {
  const Matrix& k = gram.k;
  const Eigen::Index n = k.rows();
  if (n < 1) throw std::invalid_argument("empty Gram matrix");
  Vector gamma = Vector::Constant(n, 1.0 / static_cast<double>(n));
  for (int iter = 0; iter < config::kWeiszfeldIterations; ++iter) {
    const Vector kg = k * gamma;
    const double q = gamma.dot(kg);
    Vector next(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double d2 = k(i, i) - 2.0 * kg(i) + q;
      if (d2 <= config::kWeiszfeldFloor) d2 = config::kWeiszfeldFloor;
      next(i) = 1.0 / std::sqrt(d2);
    }
    gamma = next / next.sum();
  }
  return gamma;
}

// d_i = ||phi(x_i) - m|| for m = sum_j gamma_j phi(x_j).
[[nodiscard]] inline Vector distances_to_spatial_median(const GramMatrix& gram,
                                                        const Vector& gamma) {
  const Matrix& k = gram.k;
  const Eigen::Index n = k.rows();
  if (gamma.size() != n) throw std::invalid_argument("gamma length mismatch");
  const Vector kg = k * gamma;
  const double q = gamma.dot(kg);
  Vector d(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i) = std::sqrt(std::max(0.0, k(i, i) - 2.0 * kg(i) + q));
  }
  return d;
}

[[nodiscard]] inline std::pair<HSubset, WeightPair> spatial_median_start(const GramMatrix& gram,
                                                                         int h) {
  const Vector gamma = spatial_median_weights(gram);
  const Vector d = distances_to_spatial_median(gram, gamma);
  return subset_from_scores(d, h, StartOrigin::spatial_median);
}

// ============================================================================
// Stahel-Donoho outlyingness
// ============================================================================

// Directions are differences of two distinct sampled observations. Each
// direction's RNG derives from (seed, direction index), so the scan order
// and thread count cannot change the draws.
[[nodiscard]] inline std::vector<std::pair<int, int>> sdo_direction_pairs(Eigen::Index n,
                                                                          std::uint64_t seed,
                                                                          int directions) {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(directions));
  for (int q = 0; q < directions; ++q) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(q)));
    std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
    const int i = pick(rng);
    int j = pick(rng);
    while (j == i) j = pick(rng);
    pairs.emplace_back(i, j);
  }
  return pairs;
}

// eta_i = max over directions v = phi(x_a) - phi(x_b) of
// |proj_i - median(proj)| / mad(proj). Degenerate directions (zero length or
// zero mad) are skipped; all-skipped data is an error.
[[nodiscard]] inline std::pair<HSubset, WeightPair> sdo_weights(
    const GramMatrix& gram, int h, std::uint64_t seed,
    int directions = config::kSdoDirections,
    const std::vector<std::pair<int, int>>* pair_override = nullptr) {
  const Matrix& k = gram.k;
  const Eigen::Index n = k.rows();
  if (n < 2) throw std::invalid_argument("sdo needs at least 2 observations");
  const std::vector<std::pair<int, int>> pairs =
      pair_override ? *pair_override : sdo_direction_pairs(n, seed, directions);

  Vector eta = Vector::Zero(n);
  bool any_valid = false;
  std::vector<double> proj(static_cast<std::size_t>(n));
  for (const auto& [a, b] : pairs) {
    const double s = k(a, a) + k(b, b) - 2.0 * k(a, b);
    if (s <= config::kSdoDirectionFloor) continue;
    const double inv = 1.0 / std::sqrt(s);
    for (Eigen::Index t = 0; t < n; ++t) proj[static_cast<std::size_t>(t)] = (k(t, a) - k(t, b)) * inv;
    const double med = median(proj);
    const double mad = mad_scale(proj);
    if (mad == 0.0) continue;
    any_valid = true;
    for (Eigen::Index t = 0; t < n; ++t) {
      const double r = std::abs(proj[static_cast<std::size_t>(t)] - med) / mad;
      if (r > eta(t)) eta(t) = r;
    }
  }
  if (!any_valid) throw std::runtime_error("degenerate data for sdo");
  return subset_from_scores(eta, h, StartOrigin::sdo);
}

// ============================================================================
// Spatial rank
// ============================================================================

// R_i = (1/n) || sum_{j != i} (phi(x_i) - phi(x_j)) / ||phi(x_i) - phi(x_j)|| ||,
// expanded through the Gram matrix; pairs closer than the floor are excluded.
[[nodiscard]] inline Vector spatial_rank_scores(const GramMatrix& gram) {
  const Matrix& k = gram.k;
  const Eigen::Index n = k.rows();
  if (n < 2) throw std::invalid_argument("spatial rank needs at least 2 observations");
  Vector scores(n);
  Vector beta(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    beta.setZero();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double a2 = k(i, i) + k(j, j) - 2.0 * k(i, j);
      if (a2 <= config::kRankPairFloor) continue;
      beta(j) = 1.0 / std::sqrt(a2);
    }
    const double bs = beta.sum();
    const Vector kb = k * beta;
    const double norm2 = k(i, i) * bs * bs - 2.0 * bs * kb(i) + beta.dot(kb);
    scores(i) = std::sqrt(std::max(0.0, norm2)) / static_cast<double>(n);
  }
  return scores;
}

[[nodiscard]] inline std::pair<HSubset, WeightPair> spatial_rank_weights(const GramMatrix& gram,
                                                                         int h) {
  return subset_from_scores(spatial_rank_scores(gram), h, StartOrigin::spatial_rank);
}

// ============================================================================
// Spatial sign covariance weights
// ============================================================================

// Location weights are the spatial-median coefficients; covariance weights
// are inverse distances to the median, floored at 1e-10.
[[nodiscard]] inline WeightPair sscm_weights(const GramMatrix& gram) {
  WeightPair wp;
  wp.origin = StartOrigin::sscm;
  wp.w = spatial_median_weights(gram);
  const Vector d = distances_to_spatial_median(gram, wp.w);
  wp.u.resize(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    wp.u(i) = 1.0 / std::max(d(i), config::kSscmDistanceFloor);
  }
  return wp;
}

}  // namespace kmrcd
