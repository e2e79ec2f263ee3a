#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kmrcd/initial_estimators.hpp"
#include "kmrcd/kernel.hpp"
#include "kmrcd/robust_univariate.hpp"
#include "kmrcd/types.hpp"

namespace kmrcd {

struct RefineResult {
  HSubset subset;
  Vector dstar;        // refined squared distances for all n observations
  Vector gamma_star;   // spatial-median coefficients of the rescaled geometry
  int rank = 0;        // retained eigenvalue count
};

// Refines an initial weight pair into an h-subset:
//   1. normalize w and u; eigendecompose D^(1/2) K~w D^(1/2) and keep the
//      eigenvalues above 1e-9 * lambda_max;
//   2. project the uncentered data on the feature-space eigenvectors,
//      B = (K - K w 1^T) D^(1/2) V_r Lambda_r^(-1/2), and re-estimate each
//      spectrum entry as Qn(B_.j)^2, floored;
//   3. rebuild the Gram of the rescaled geometry, K* = B L^(-1) B^T, and run
//      the Weiszfeld iteration on it for a robust center;
//   4. score every observation by its squared distance in the rescaled
//      geometry and keep the h smallest.
[[nodiscard]] inline RefineResult refine(const GramMatrix& gram, const WeightPair& weights,
                                         int h) {
  const Matrix& k = gram.k;
  const Eigen::Index n = k.rows();
  if (h < 1 || h > n) throw std::invalid_argument("refinement subset size out of range");
  if (weights.w.size() != n || weights.u.size() != n) {
    throw std::invalid_argument("weight vector length mismatch");
  }
  const double wsum = weights.w.sum();
  const double usum = weights.u.sum();
  if (!(wsum > 0.0) || !(usum > 0.0)) {
    throw std::invalid_argument("weights must have positive sum");
  }
  if (weights.w.minCoeff() < 0.0 || weights.u.minCoeff() < 0.0) {
    throw std::invalid_argument("weights must be nonnegative");
  }
  const Vector w = weights.w / wsum;
  const Vector u = weights.u / usum;
  const Vector du = u.cwiseSqrt();

  // weighted centering at c_w = sum_i w_i phi(x_i), then D^(1/2) K~w D^(1/2)
  const GramMatrix kw = center_gram_weighted(gram, w);
  Matrix khat = du.asDiagonal() * kw.k * du.asDiagonal();

  Eigen::SelfAdjointEigenSolver<Matrix> eig(khat);
  if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const Vector& lambda = eig.eigenvalues();  // ascending
  const double lmax = lambda(n - 1);
  if (!(lmax > 0.0)) throw std::runtime_error("all variance in weighted center");
  int rank = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (lambda(j) > config::kRefineRankTol * lmax) ++rank;
  }
  if (rank == 0) throw std::runtime_error("all variance in weighted center");

  // columns of M span the retained feature-space eigenvectors:
  // M = D^(1/2) V_r Lambda_r^(-1/2), so that B = (K - K w 1^T) M
  Matrix m(n, rank);
  for (int c = 0; c < rank; ++c) {
    const Eigen::Index j = n - 1 - c;  // descending order
    m.col(c) = du.cwiseProduct(eig.eigenvectors().col(j)) / std::sqrt(lambda(j));
  }
  const Vector kwv = k * w;
  Matrix centered = k;
  centered.colwise() -= kwv;
  const Matrix b = centered * m;

  // robust spectrum: L_j = Qn(B_.j)^2 with the Qn floored
  Vector inv_sqrt_l(rank);
  for (int c = 0; c < rank; ++c) {
    const double qn = std::max(qn_scale(b.col(c)), config::kRefineQnFloor);
    inv_sqrt_l(c) = 1.0 / qn;
  }

  // K* = B L^(-1) B^T is the Gram of the rescaled geometry
  const Matrix bs = b * inv_sqrt_l.asDiagonal();
  GramMatrix kstar{bs * bs.transpose(), GramKind::raw};
  const Vector gamma_star = spatial_median_weights(kstar);

  // d*(x_i) = || L^(-1/2) M^T omega_i ||^2 where omega_i stacks
  // <phi(x_t) - c_w, phi(x_i) - c*> over t; the cross terms expand with a
  // plus on the double sum since both centers enter the inner product.
  const Vector kg = k * gamma_star;
  const double wkg = w.dot(kg);
  Matrix omega = k;
  omega.colwise() -= kg;
  omega.rowwise() -= kwv.transpose();
  omega.array() += wkg;
  const Matrix t = inv_sqrt_l.asDiagonal() * (m.transpose() * omega);
  Vector dstar = t.colwise().squaredNorm().transpose();

  auto [subset, wp] = subset_from_scores(dstar, h, weights.origin);
  (void)wp;
  RefineResult out;
  out.subset = std::move(subset);
  out.dstar = std::move(dstar);
  out.gamma_star = gamma_star;
  out.rank = rank;
  return out;
}

}  // namespace kmrcd
