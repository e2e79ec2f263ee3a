#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "kmrcd/types.hpp"

namespace kmrcd {

// ============================================================================
// Kernel specification
// ============================================================================

enum class KernelType { linear, rbf, polynomial, precomputed };

struct KernelSpec {
  KernelType type = KernelType::linear;
  double sigma = 0.0;   // rbf bandwidth; 0 requests the median heuristic
  int degree = 0;       // polynomial degree >= 1
  double offset = 0.0;  // polynomial offset >= 0

  [[nodiscard]] static KernelSpec linear() { return {KernelType::linear, 0.0, 0, 0.0}; }

  // sigma == 0 is a placeholder meaning "derive from data"; it must be
  // resolved before the kernel is evaluated.
  [[nodiscard]] static KernelSpec rbf(double sigma) {
    KernelSpec s{KernelType::rbf, sigma, 0, 0.0};
    s.validate();
    return s;
  }

  [[nodiscard]] static KernelSpec polynomial(int degree, double offset) {
    KernelSpec s{KernelType::polynomial, 0.0, degree, offset};
    s.validate();
    return s;
  }

  [[nodiscard]] static KernelSpec precomputed() { return {KernelType::precomputed, 0.0, 0, 0.0}; }

  void validate() const {
    switch (type) {
      case KernelType::rbf:
        if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
          throw std::invalid_argument("rbf kernel needs sigma >= 0");
        }
        break;
      case KernelType::polynomial:
        if (degree < 1) throw std::invalid_argument("polynomial kernel needs degree >= 1");
        if (!(offset >= 0.0) || !std::isfinite(offset)) {
          throw std::invalid_argument("polynomial kernel needs offset >= 0");
        }
        break;
      default:
        break;
    }
  }

  [[nodiscard]] const char* name() const {
    switch (type) {
      case KernelType::linear: return "linear";
      case KernelType::rbf: return "rbf";
      case KernelType::polynomial: return "polynomial";
      case KernelType::precomputed: return "precomputed";
    }
    return "unknown";
  }
};

// ============================================================================
// Kernel evaluation and Gram assembly
// ============================================================================

[[nodiscard]] inline double kernel_eval(const KernelSpec& spec, const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw std::invalid_argument("kernel arguments differ in dimension");
  switch (spec.type) {
    case KernelType::linear:
      return x.dot(y);
    case KernelType::rbf: {
      if (spec.sigma <= 0.0) throw std::invalid_argument("rbf bandwidth unresolved");
      const double d2 = (x - y).squaredNorm();
      return std::exp(-d2 / (2.0 * spec.sigma * spec.sigma));
    }
    case KernelType::polynomial: {
      spec.validate();
      return std::pow(x.dot(y) + spec.offset, spec.degree);
    }
    case KernelType::precomputed:
      throw std::invalid_argument("no kernel function available for precomputed Gram input");
  }
  throw std::invalid_argument("unknown kernel type");
}

[[nodiscard]] inline GramMatrix gram_matrix(const KernelSpec& spec, const DataMatrix& data) {
  data.validate();
  spec.validate();
  const Eigen::Index n = data.n();
  Matrix k(n, n);
  if (spec.type == KernelType::precomputed) {
    throw std::invalid_argument("no kernel function available for precomputed Gram input");
  }
  if (spec.type == KernelType::linear) {
    k.noalias() = data.rows * data.rows.transpose();
  } else if (spec.type == KernelType::polynomial) {
    k.noalias() = data.rows * data.rows.transpose();
    k = (k.array() + spec.offset).pow(spec.degree).matrix();
  } else {
    if (spec.sigma <= 0.0) throw std::invalid_argument("rbf bandwidth unresolved");
    const Vector sq = data.rows.rowwise().squaredNorm();
    Matrix d2 = -2.0 * (data.rows * data.rows.transpose());
    d2.colwise() += sq;
    d2.rowwise() += sq.transpose();
    d2 = d2.cwiseMax(0.0);
    k = (-d2.array() / (2.0 * spec.sigma * spec.sigma)).exp().matrix();
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = 0.5 * (k(i, j) + k(j, i));
      if (!std::isfinite(v)) {
        throw std::runtime_error("non-finite kernel value at pair (" + std::to_string(i) + ", " +
                                 std::to_string(j) + ")");
      }
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return GramMatrix{std::move(k), GramKind::raw};
}

// ============================================================================
// Centering
// ============================================================================

// Two-sided centering at the weighted mean sum_i w_i phi(x_i), w on the
// simplex: K~w = K - K w 1^T - 1 w^T K + (w^T K w) 1 1^T.
[[nodiscard]] inline GramMatrix center_gram_weighted(const GramMatrix& gram, const Vector& w) {
  const Matrix& k = gram.k;
  const Eigen::Index n = k.rows();
  if (w.size() != n) throw std::invalid_argument("weight vector length mismatch");
  if (w.minCoeff() < 0.0) throw std::invalid_argument("centering weights must be nonnegative");
  if (std::abs(w.sum() - 1.0) > config::kWeightSumTol) {
    throw std::invalid_argument("centering weights must sum to 1");
  }
  const Vector kw = k * w;
  const double wkw = w.dot(kw);
  Matrix c = k;
  c.colwise() -= kw;
  c.rowwise() -= kw.transpose();
  c.array() += wkw;
  return GramMatrix{std::move(c), GramKind::weighted_centered};
}

// K~ = K - 1nn K - K 1nn + 1nn K 1nn with 1nn the n x n matrix of 1/n.
// Delegates to the weighted form with uniform weights so the two agree
// exactly, not just to round-off.
[[nodiscard]] inline GramMatrix center_gram(const GramMatrix& gram) {
  const Eigen::Index n = gram.k.rows();
  if (n == 0 || gram.k.cols() != n) throw std::invalid_argument("Gram matrix must be square");
  GramMatrix c =
      center_gram_weighted(gram, Vector::Constant(n, 1.0 / static_cast<double>(n)));
  c.kind = GramKind::centered;
  return c;
}

// Row means and grand mean of the Gram restricted to an h-subset; reused for
// every cross-kernel column against that subset.
struct SubsetCentering {
  std::vector<int> indices;
  Vector row_mean;    // (1/h) sum_s K(t, s) for t in the subset
  double total_mean;  // (1/h^2) sum_{t,s} K(t, s)
};

[[nodiscard]] inline SubsetCentering make_subset_centering(const Matrix& k, const HSubset& subset) {
  subset.validate(k.rows());
  const int h = subset.h();
  Vector row_mean(h);
  for (int t = 0; t < h; ++t) {
    double acc = 0.0;
    for (int s = 0; s < h; ++s) acc += k(subset.indices[t], subset.indices[s]);
    row_mean(t) = acc / h;
  }
  const double total_mean = row_mean.mean();
  return SubsetCentering{subset.indices, std::move(row_mean), total_mean};
}

// k~(H, x)_t = k(x_t, x) - mean_s k(x_s, x) - mean_s k(x_s, x_t) + grand mean,
// the cross kernel against subset members, centered at the subset mean.
[[nodiscard]] inline Vector centered_cross_column(const Vector& k_sub, const SubsetCentering& c) {
  const double col_mean = k_sub.mean();
  return (k_sub.array() - col_mean - c.row_mean.array() + c.total_mean).matrix();
}

// Self term k~(x, x) = k(x, x) - 2 mean_s k(x_s, x) + grand mean.
[[nodiscard]] inline double centered_cross_self(double k_xx, const Vector& k_sub,
                                                const SubsetCentering& c) {
  return k_xx - 2.0 * k_sub.mean() + c.total_mean;
}

[[nodiscard]] inline Vector cross_kernel(const KernelSpec& spec, const Matrix& x_subset,
                                         const Vector& x, const SubsetCentering& centering) {
  const Eigen::Index h = x_subset.rows();
  Vector k_sub(h);
  for (Eigen::Index t = 0; t < h; ++t) k_sub(t) = kernel_eval(spec, x_subset.row(t), x);
  return centered_cross_column(k_sub, centering);
}

// Convenience form that rebuilds the subset Gram statistics on each call.
[[nodiscard]] inline Vector cross_kernel(const KernelSpec& spec, const Matrix& x_subset,
                                         const Vector& x) {
  const Eigen::Index h = x_subset.rows();
  if (h < 1) throw std::invalid_argument("cross kernel needs a nonempty subset");
  Matrix kh(h, h);
  for (Eigen::Index s = 0; s < h; ++s) {
    for (Eigen::Index t = 0; t <= s; ++t) {
      kh(s, t) = kernel_eval(spec, x_subset.row(s), x_subset.row(t));
      kh(t, s) = kh(s, t);
    }
  }
  HSubset all;
  all.indices.resize(static_cast<std::size_t>(h));
  for (Eigen::Index i = 0; i < h; ++i) all.indices[static_cast<std::size_t>(i)] = static_cast<int>(i);
  SubsetCentering c = make_subset_centering(kh, all);
  return cross_kernel(spec, x_subset, x, c);
}

// ============================================================================
// Bandwidth selection
// ============================================================================

// sigma^2 = median of all pairwise squared distances of the standardized data.
[[nodiscard]] inline double median_heuristic_bandwidth(const DataMatrix& data) {
  data.validate();
  if (!data.standardized) {
    throw std::invalid_argument("median heuristic expects standardized data");
  }
  const Eigen::Index n = data.n();
  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d2.push_back((data.rows.row(i) - data.rows.row(j)).squaredNorm());
    }
  }
  const std::size_t m = d2.size();
  std::nth_element(d2.begin(), d2.begin() + m / 2, d2.end());
  double med = d2[m / 2];
  if (m % 2 == 0) {
    const double lower = *std::max_element(d2.begin(), d2.begin() + m / 2);
    med = 0.5 * (med + lower);
  }
  if (med <= 0.0) throw std::runtime_error("degenerate data for bandwidth selection");
  return std::sqrt(med);
}

}  // namespace kmrcd
