#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "kmrcd/initial_estimators.hpp"
#include "kmrcd/kernel.hpp"
#include "kmrcd/parallel.hpp"
#include "kmrcd/refinement.hpp"
#include "kmrcd/robust_univariate.hpp"
#include "kmrcd/types.hpp"

namespace kmrcd {

// ============================================================================
// Regularization amount
// ============================================================================

// Condition number of (1-rho) K~ + (h-1) rho I given the eigenvalues of K~.
[[nodiscard]] inline double regularized_condition(const Vector& eigs, double rho, int h) {
  const double lmax = std::max(0.0, eigs.maxCoeff());
  const double lmin = std::max(0.0, eigs.minCoeff());
  const double num = (h - 1) * rho + (1.0 - rho) * lmax;
  const double den = (h - 1) * rho + (1.0 - rho) * lmin;
  return num / den;
}

// Smallest rho in (0, 1] with condition number at most kappa_max, from the
// closed-form root of
//   (h-1) rho + (1-rho) lmax = kappa_max [ (h-1) rho + (1-rho) lmin ],
// floored at 1e-6. A bisection at tolerance 1e-12 backs up the closed form
// if round-off pushes it out of range.
[[nodiscard]] inline double select_rho(const Vector& eigs, int h,
                                       double kappa_max = config::kKappaMax) {
  if (eigs.size() == 0) throw std::invalid_argument("select_rho needs eigenvalues");
  if (h < 2) throw std::invalid_argument("select_rho needs h >= 2");
  const double lmax = std::max(0.0, eigs.maxCoeff());
  const double lmin = std::max(0.0, eigs.minCoeff());
  const double a = lmax - kappa_max * lmin;
  if (a <= 0.0) return config::kRhoFloor;
  const double b = (kappa_max - 1.0) * (h - 1);
  double rho = a / (a + b);
  if (!(rho > 0.0 && rho <= 1.0) ||
      regularized_condition(eigs, rho, h) > kappa_max * (1.0 + config::kKappaSlack)) {
    double lo = 0.0;
    double hi = 1.0;
    while (hi - lo > config::kRhoBisectTol) {
      const double mid = 0.5 * (lo + hi);
      if (regularized_condition(eigs, mid, h) <= kappa_max) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    rho = hi;
  }
  return std::clamp(rho, config::kRhoFloor, 1.0);
}

// Combination rule over the four starts: take the max when every start asks
// for at most 0.1, otherwise the median (midpoint convention) floored at 0.1.
[[nodiscard]] inline double combine_rhos(const std::array<double, 4>& rhos) {
  std::array<double, 4> s = rhos;
  std::sort(s.begin(), s.end());
  const double maxr = s[3];
  if (maxr <= config::kRhoMedianGate) return maxr;
  const double med = 0.5 * (s[1] + s[2]);
  return std::max(config::kRhoMedianGate, med);
}

// ============================================================================
// Regularized subset Gram
// ============================================================================

[[nodiscard]] inline GramMatrix regularized_gram(const GramMatrix& centered, double rho, int h) {
  if (centered.kind != GramKind::centered && centered.kind != GramKind::weighted_centered) {
    throw std::invalid_argument("regularization expects a centered Gram");
  }
  if (centered.k.rows() != h) throw std::invalid_argument("subset Gram dimension mismatch");
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("rho out of (0, 1]");
  Matrix reg = (1.0 - rho) * centered.k;
  reg.diagonal().array() += (h - 1) * rho;
  return GramMatrix{std::move(reg), GramKind::regularized};
}

[[nodiscard]] inline Matrix subset_gram(const Matrix& k, const HSubset& subset) {
  const int h = subset.h();
  Matrix out(h, h);
  for (int a = 0; a < h; ++a) {
    for (int b = 0; b < h; ++b) out(a, b) = k(subset.indices[a], subset.indices[b]);
  }
  return out;
}

// Eigenvalues of the centered subset Gram, ascending, clamped at zero.
[[nodiscard]] inline Vector subset_centered_eigenvalues(const Matrix& k, const HSubset& subset) {
  const GramMatrix centered = center_gram(GramMatrix{subset_gram(k, subset), GramKind::raw});
  Eigen::SelfAdjointEigenSolver<Matrix> eig(centered.k, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  return eig.eigenvalues().cwiseMax(0.0);
}

// ============================================================================
// Objective
// ============================================================================

// log det of the regularized subset scatter through the Gram spectrum:
// sum_j log((1-rho) lambda_j + (h-1) rho) over all h eigenvalues.
[[nodiscard]] inline double objective_from_eigenvalues(const Vector& eigs, double rho, int h) {
  if (eigs.size() != h) throw std::invalid_argument("objective needs all h eigenvalues");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < eigs.size(); ++j) {
    acc += std::log((1.0 - rho) * std::max(0.0, eigs(j)) + (h - 1) * rho);
  }
  return acc;
}

[[nodiscard]] inline double objective(const GramMatrix& centered, double rho, int h) {
  if (centered.k.rows() != h) throw std::invalid_argument("subset Gram dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(centered.k, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  return objective_from_eigenvalues(eig.eigenvalues().cwiseMax(0.0), rho, h);
}

// ============================================================================
// Kernel Mahalanobis distances
// ============================================================================

namespace detail {

// Factorization and centering data of one subset, reused for every
// evaluation point.
struct SubsetModel {
  HSubset subset;
  SubsetCentering centering;
  Eigen::LLT<Matrix> llt;      // of the regularized centered subset Gram
  double log_det = 0.0;        // objective of the subset at this rho
  double rho = 0.0;
};

[[nodiscard]] inline SubsetModel make_subset_model(const Matrix& k, const HSubset& subset,
                                                   double rho) {
  SubsetModel model;
  model.subset = subset;
  model.rho = rho;
  model.centering = make_subset_centering(k, subset);
  const int h = subset.h();
  const GramMatrix centered = center_gram(GramMatrix{subset_gram(k, subset), GramKind::raw});
  const GramMatrix reg = regularized_gram(centered, rho, h);
  model.llt.compute(reg.k);
  if (model.llt.info() != Eigen::Success) {
    throw std::runtime_error("regularized subset Gram is not positive definite");
  }
  model.log_det = 2.0 * model.llt.matrixLLT().diagonal().array().log().sum();
  return model;
}

// Squared regularized distances of all n points to the subset model:
// md^2(x) = (1/rho) [ k~(x,x) - (1-rho) k~(H,x)^T (K~reg)^(-1) k~(H,x) ].
[[nodiscard]] inline Vector squared_distances(const Matrix& k, const SubsetModel& model) {
  const Eigen::Index n = k.rows();
  const int h = model.subset.h();
  Matrix cross(h, n);
  for (int t = 0; t < h; ++t) cross.row(t) = k.row(model.subset.indices[t]);
  const Eigen::RowVectorXd col_mean = cross.colwise().mean();
  cross.colwise() -= model.centering.row_mean;
  cross.rowwise() -= col_mean;
  cross.array() += model.centering.total_mean;

  const Matrix solved = model.llt.solve(cross);
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double self = k(i, i) - 2.0 * col_mean(i) + model.centering.total_mean;
    const double quad = cross.col(i).dot(solved.col(i));
    out(i) = std::max(0.0, (self - (1.0 - model.rho) * quad) / model.rho);
  }
  return out;
}

}  // namespace detail

// Regularized kernel Mahalanobis distance of every observation to the
// h-subset model; the h x h factorization is computed once and reused.
[[nodiscard]] inline Vector kernel_mahalanobis(const GramMatrix& gram, const HSubset& subset,
                                               double rho) {
  subset.validate(gram.k.rows());
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("rho out of (0, 1]");
  const detail::SubsetModel model = detail::make_subset_model(gram.k, subset, rho);
  return detail::squared_distances(gram.k, model).cwiseSqrt();
}

// ============================================================================
// Out-of-sample scoring
// ============================================================================

// Distance evaluator for arbitrary points, built from the subset's
// standardized coordinates. Factorizes the h x h model once.
class PointScorer {
 public:
  PointScorer(Matrix x_subset, KernelSpec spec, double rho)
      : x_subset_(std::move(x_subset)), spec_(std::move(spec)), rho_(rho) {
    spec_.validate();
    if (!(rho_ > 0.0 && rho_ <= 1.0)) throw std::invalid_argument("rho out of (0, 1]");
    const Eigen::Index h = x_subset_.rows();
    if (h < 2) throw std::invalid_argument("scorer needs at least two subset points");
    Matrix kh(h, h);
    for (Eigen::Index s = 0; s < h; ++s) {
      for (Eigen::Index t = 0; t <= s; ++t) {
        kh(s, t) = kernel_eval(spec_, x_subset_.row(s), x_subset_.row(t));
        kh(t, s) = kh(s, t);
      }
    }
    HSubset all;
    all.indices.resize(static_cast<std::size_t>(h));
    std::iota(all.indices.begin(), all.indices.end(), 0);
    centering_ = make_subset_centering(kh, all);
    const GramMatrix centered = center_gram(GramMatrix{kh, GramKind::raw});
    const GramMatrix reg = regularized_gram(centered, rho_, static_cast<int>(h));
    llt_.compute(reg.k);
    if (llt_.info() != Eigen::Success) {
      throw std::runtime_error("regularized subset Gram is not positive definite");
    }
  }

  // Regularized kernel Mahalanobis distances of the given points, which must
  // already be on the same (standardized) scale as the subset coordinates.
  [[nodiscard]] Vector distances(const Matrix& points) const {
    const Eigen::Index h = x_subset_.rows();
    const Eigen::Index m = points.rows();
    if (points.cols() != x_subset_.cols()) {
      throw std::invalid_argument("point dimension does not match the subset");
    }
    Matrix cross(h, m);
    Vector self(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vector x = points.row(i).transpose();
      Vector k_sub(h);
      for (Eigen::Index t = 0; t < h; ++t) k_sub(t) = kernel_eval(spec_, x_subset_.row(t), x);
      cross.col(i) = centered_cross_column(k_sub, centering_);
      self(i) = centered_cross_self(kernel_eval(spec_, x, x), k_sub, centering_);
    }
    const Matrix solved = llt_.solve(cross);
    Vector out(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double quad = cross.col(i).dot(solved.col(i));
      out(i) = std::sqrt(std::max(0.0, (self(i) - (1.0 - rho_) * quad) / rho_));
    }
    return out;
  }

 private:
  Matrix x_subset_;
  KernelSpec spec_;
  double rho_;
  SubsetCentering centering_;
  Eigen::LLT<Matrix> llt_;
};

// ============================================================================
// C-step
// ============================================================================

// One concentration step: score all points against the current subset and
// keep the h with the smallest distances (ties by smallest index).
[[nodiscard]] inline HSubset c_step(const GramMatrix& gram, const HSubset& subset, double rho) {
  subset.validate(gram.k.rows());
  const detail::SubsetModel model = detail::make_subset_model(gram.k, subset, rho);
  const Vector d2 = detail::squared_distances(gram.k, model);
  auto [next, wp] = subset_from_scores(d2, subset.h(), StartOrigin::spatial_median);
  (void)wp;
  return next;
}

// ============================================================================
// Outlier flagging
// ============================================================================

struct FlagResult {
  double cutoff = 0.0;
  std::vector<int> flags;  // 1 = outlier
};

// Fits a robust normal to log(0.1 + md) with the univariate MCD at the same
// h and cuts at the 0.995 normal quantile, mapped back through exp.
[[nodiscard]] inline FlagResult flag_outliers(const Vector& distances, int h) {
  const Eigen::Index n = distances.size();
  std::vector<double> ld(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    ld[static_cast<std::size_t>(i)] = std::log(config::kFlagLogOffset + distances(i));
  }
  const LocationScale ls = univariate_mcd(ld, h);
  const double sigma = std::max(ls.scale, config::kFlagSigmaFloor);
  static const double z995 = boost::math::quantile(boost::math::normal(), 0.995);
  FlagResult out;
  out.cutoff = std::exp(ls.location + z995 * sigma) - config::kFlagLogOffset;
  out.flags.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    out.flags[static_cast<std::size_t>(i)] = distances(i) > out.cutoff ? 1 : 0;
  }
  return out;
}

// ============================================================================
// Linear-kernel estimate in coordinate space
// ============================================================================

struct LinearEstimate {
  Vector center;
  Matrix covariance;  // (1-rho)/(h-1) X~_H^T X~_H + rho I
};

[[nodiscard]] inline LinearEstimate linear_covariance(const DataMatrix& data,
                                                      const HSubset& subset, double rho) {
  data.validate();
  subset.validate(data.n());
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("rho out of (0, 1]");
  const int h = subset.h();
  if (h < 2) throw std::invalid_argument("linear covariance needs h >= 2");
  const Eigen::Index p = data.p();
  Matrix xh(h, p);
  for (int t = 0; t < h; ++t) xh.row(t) = data.rows.row(subset.indices[t]);
  LinearEstimate out;
  out.center = xh.colwise().mean().transpose();
  xh.rowwise() -= out.center.transpose();
  out.covariance = ((1.0 - rho) / (h - 1)) * (xh.transpose() * xh);
  out.covariance.diagonal().array() += rho;
  return out;
}

// ============================================================================
// Fit
// ============================================================================

struct FitOptions {
  int h = 0;                 // absolute subset size; 0 defers to h_fraction
  double h_fraction = 0.0;   // 0 defers to the default rule
  std::uint64_t seed = config::kDefaultSeed;
  int sdo_directions = config::kSdoDirections;
  int max_c_steps = config::kMaxCSteps;
  unsigned threads = 0;      // 0 reads KMRCD_THREADS
  // test hook: fixed direction pairs make SDO permutation-covariant
  std::optional<std::vector<std::pair<int, int>>> sdo_pairs;
};

struct StartDiagnostics {
  StartOrigin origin = StartOrigin::spatial_median;
  double rho = 0.0;        // per-start regularization request
  double objective = 0.0;  // converged objective at the combined rho
  int c_steps = 0;
};

struct KmrcdFit {
  int n = 0;
  int h = 0;
  KernelSpec kernel;
  std::uint64_t seed = 0;
  HSubset subset;
  double rho = 0.0;
  std::array<double, 4> start_rhos{};
  double objective = 0.0;
  Vector distances;
  double cutoff = 0.0;
  std::vector<int> flags;
  Vector subset_eigenvalues;  // centered subset Gram spectrum, ascending
  std::array<StartDiagnostics, 4> starts{};
  StartOrigin winning_start = StartOrigin::spatial_median;
  std::vector<LocationScale> standardization;  // empty for Gram input
  std::optional<LinearEstimate> linear;        // linear kernel on coordinates
};

// Default subset size: floor(0.75 n), or floor(0.5 n) for the linear kernel
// in low dimension where the extra breakdown is affordable.
[[nodiscard]] inline int default_h(Eigen::Index n, const KernelSpec& kernel, Eigen::Index p) {
  const double fraction =
      (kernel.type == KernelType::linear && p > 0 && p <= 10) ? 0.5 : 0.75;
  return static_cast<int>(std::floor(fraction * static_cast<double>(n)));
}

[[nodiscard]] inline int resolve_h(const FitOptions& opts, Eigen::Index n,
                                   const KernelSpec& kernel, Eigen::Index p) {
  if (opts.h > 0 && opts.h_fraction > 0.0) {
    throw std::invalid_argument("set either h or h_fraction, not both");
  }
  int h = opts.h;
  if (h == 0) {
    if (opts.h_fraction > 0.0) {
      if (opts.h_fraction < 0.5 || opts.h_fraction >= 1.0) {
        throw std::invalid_argument("h_fraction must lie in [0.5, 1)");
      }
      h = static_cast<int>(std::floor(opts.h_fraction * static_cast<double>(n)));
    } else {
      h = default_h(n, kernel, p);
    }
  }
  if (h < static_cast<int>(n) / 2 || h >= static_cast<int>(n)) {
    throw std::invalid_argument("h must satisfy floor(n/2) <= h < n");
  }
  if (h < 2) throw std::invalid_argument("h must be at least 2");
  return h;
}

namespace detail {

struct CStepRun {
  HSubset subset;
  double objective = 0.0;
  int steps = 0;
};

// Iterates c-steps from a refined start until the subset repeats or the cap
// is reached. The objective at the combined rho is non-increasing.
[[nodiscard]] inline CStepRun run_c_steps(const Matrix& k, HSubset subset, double rho,
                                          int max_steps) {
  CStepRun run;
  const int h = subset.h();
  double objective = 0.0;
  bool converged = false;
  for (int step = 0; step < max_steps; ++step) {
    const SubsetModel model = make_subset_model(k, subset, rho);
    objective = model.log_det;
    const Vector d2 = squared_distances(k, model);
    auto [next, wp] = subset_from_scores(d2, h, StartOrigin::spatial_median);
    (void)wp;
    run.steps = step + 1;
    if (next.indices == subset.indices) {
      converged = true;
      break;
    }
    subset = std::move(next);
  }
  if (!converged) objective = make_subset_model(k, subset, rho).log_det;
  run.subset = std::move(subset);
  run.objective = objective;
  return run;
}

[[nodiscard]] inline KmrcdFit fit_gram_impl(const GramMatrix& gram, const FitOptions& opts,
                                            const KernelSpec& kernel, int h) {
  const Matrix& k = gram.k;
  const Eigen::Index n = k.rows();

  // four starting weight pairs
  std::array<WeightPair, 4> starts;
  {
    auto [hs, wp] = spatial_median_start(gram, h);
    (void)hs;
    starts[0] = std::move(wp);
  }
  {
    const std::vector<std::pair<int, int>>* pairs =
        opts.sdo_pairs ? &*opts.sdo_pairs : nullptr;
    auto [hs, wp] = sdo_weights(gram, h, opts.seed, opts.sdo_directions, pairs);
    (void)hs;
    starts[1] = std::move(wp);
  }
  {
    auto [hs, wp] = spatial_rank_weights(gram, h);
    (void)hs;
    starts[2] = std::move(wp);
  }
  starts[3] = sscm_weights(gram);

  // refinement and per-start regularization, then one combined rho
  std::array<HSubset, 4> refined;
  std::array<double, 4> rhos{};
  parallel_for(
      4,
      [&](std::size_t s) {
        refined[s] = refine(gram, starts[s], h).subset;
        rhos[s] = select_rho(subset_centered_eigenvalues(k, refined[s]), h);
      },
      opts.threads);
  const double rho = combine_rhos(rhos);

  // concentration from each refined start at the combined rho
  std::array<CStepRun, 4> runs;
  parallel_for(
      4, [&](std::size_t s) { runs[s] = run_c_steps(k, refined[s], rho, opts.max_c_steps); },
      opts.threads);

  int best = 0;
  for (int s = 1; s < 4; ++s) {
    if (runs[s].objective < runs[best].objective) best = s;
  }

  KmrcdFit fit;
  fit.n = static_cast<int>(n);
  fit.h = h;
  fit.kernel = kernel;
  fit.seed = opts.seed;
  fit.subset = runs[best].subset;
  fit.start_rhos = rhos;
  for (int s = 0; s < 4; ++s) {
    fit.starts[s].origin = starts[s].origin;
    fit.starts[s].rho = rhos[s];
    fit.starts[s].objective = runs[s].objective;
    fit.starts[s].c_steps = runs[s].steps;
  }
  fit.winning_start = starts[best].origin;

  // final spectrum, with a guard that keeps the regularized subset Gram
  // within the condition-number contract even if concentration moved the
  // subset away from the spectra that chose rho
  fit.subset_eigenvalues = subset_centered_eigenvalues(k, fit.subset);
  double rho_final = rho;
  if (regularized_condition(fit.subset_eigenvalues, rho_final, h) >
      config::kKappaMax * (1.0 + config::kKappaSlack)) {
    rho_final = std::max(rho_final, select_rho(fit.subset_eigenvalues, h));
  }
  fit.rho = rho_final;
  fit.objective = objective_from_eigenvalues(fit.subset_eigenvalues, rho_final, h);

  fit.distances = kernel_mahalanobis(gram, fit.subset, rho_final);
  FlagResult fr = flag_outliers(fit.distances, h);
  fit.cutoff = fr.cutoff;
  fit.flags = std::move(fr.flags);
  return fit;
}

}  // namespace detail

// Fit on a precomputed Gram matrix.
[[nodiscard]] inline KmrcdFit fit(const GramMatrix& gram, const FitOptions& opts = {}) {
  if (gram.kind != GramKind::raw) throw std::invalid_argument("fit expects a raw Gram matrix");
  if (gram.k.rows() != gram.k.cols()) throw std::invalid_argument("Gram matrix must be square");
  if (!gram.k.allFinite()) throw std::invalid_argument("Gram matrix has non-finite entries");
  const int h = resolve_h(opts, gram.n(), KernelSpec::precomputed(), 0);
  return detail::fit_gram_impl(gram, opts, KernelSpec::precomputed(), h);
}

// Fit on coordinates: robustly standardize, resolve the bandwidth if asked,
// build the Gram, and run the subset search. Input already marked as
// standardized is taken as is, with identity column transforms. The linear
// kernel additionally reports the coordinate-space center and regularized
// covariance of the standardized data.
[[nodiscard]] inline KmrcdFit fit(const DataMatrix& data, const KernelSpec& kernel,
                                  const FitOptions& opts = {}) {
  data.validate();
  kernel.validate();
  if (kernel.type == KernelType::precomputed) {
    throw std::invalid_argument("precomputed kernel needs a Gram matrix input");
  }
  StandardizeResult std_result;
  if (data.standardized) {
    std_result.data = data;
    std_result.columns.assign(static_cast<std::size_t>(data.p()), LocationScale{0.0, 1.0, {}});
  } else {
    std_result = robust_standardize(data);
  }
  KernelSpec resolved = kernel;
  if (resolved.type == KernelType::rbf && resolved.sigma == 0.0) {
    resolved.sigma = median_heuristic_bandwidth(std_result.data);
  }
  const int h = resolve_h(opts, data.n(), resolved, data.p());
  const GramMatrix gram = gram_matrix(resolved, std_result.data);
  KmrcdFit out = detail::fit_gram_impl(gram, opts, resolved, h);
  out.standardization = std::move(std_result.columns);
  if (resolved.type == KernelType::linear) {
    out.linear = linear_covariance(std_result.data, out.subset, out.rho);
  }
  return out;
}

}  // namespace kmrcd
