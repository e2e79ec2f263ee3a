#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "kmrcd/estimator.hpp"
#include "kmrcd/parallel.hpp"
#include "kmrcd/types.hpp"

namespace kmrcd::sim {

using Rng = std::mt19937_64;

// ============================================================================
// Covariance targets
// ============================================================================

// Haar-ish random orthogonal basis from the QR of a Gaussian matrix, with
// the sign convention that R has a positive diagonal.
[[nodiscard]] inline Matrix random_orthogonal(int p, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix g(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) g(i, j) = gauss(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(p, p);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < p; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

// Random correlation-like matrix with unit diagonal and pinned condition
// number: random orthogonal eigenvectors, eigenvalues uniform on [1, CN]
// with the extremes pinned, then alternate between rescaling to unit
// diagonal and re-pinning the spectrum range with an affine map until the
// condition number settles within 0.1 percent.
[[nodiscard]] inline Matrix generate_alyz_sigma(int p, Rng& rng,
                                                double cn = config::kAlyzConditionNumber) {
  if (p < 2) throw std::invalid_argument("alyz sigma needs p >= 2");
  if (!(cn > 1.0)) throw std::invalid_argument("alyz sigma needs condition number > 1");
  const Matrix q = random_orthogonal(p, rng);
  std::uniform_real_distribution<double> unif(1.0, cn);
  Vector lam(p);
  for (int j = 0; j < p; ++j) lam(j) = unif(rng);
  std::sort(lam.data(), lam.data() + p);
  lam(0) = 1.0;
  lam(p - 1) = cn;
  Matrix sigma = q * lam.asDiagonal() * q.transpose();

  for (int iter = 0; iter < config::kAlyzMaxIterations; ++iter) {
    const Vector d = sigma.diagonal().cwiseSqrt();
    if (!(d.minCoeff() > 0.0)) throw std::runtime_error("alyz iteration lost positivity");
    const Vector dinv = d.cwiseInverse();
    sigma = dinv.asDiagonal() * sigma * dinv.asDiagonal();
    sigma = 0.5 * (sigma + sigma.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
    if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    const Vector& m = eig.eigenvalues();
    const double mmin = m(0);
    const double mmax = m(p - 1);
    if (!(mmin > 0.0)) throw std::runtime_error("alyz iteration lost positivity");
    const double kappa = mmax / mmin;
    if (std::abs(kappa - cn) / cn < config::kAlyzKappaRelTol) return sigma;

    if (!(mmax > mmin)) throw std::runtime_error("alyz iteration degenerate spectrum");
    const double a = (mmax - mmax / cn) / (mmax - mmin);
    const double b = mmax - a * mmax;
    const Vector pinned = (a * m.array() + b).matrix();
    sigma = eig.eigenvectors() * pinned.asDiagonal() * eig.eigenvectors().transpose();
  }
  throw std::runtime_error("alyz sigma did not converge within the iteration cap");
}

// ============================================================================
// Contaminated samples
// ============================================================================

enum class Contamination { none, point, shift, cluster };

[[nodiscard]] inline const char* contamination_name(Contamination c) {
  switch (c) {
    case Contamination::none: return "none";
    case Contamination::point: return "point";
    case Contamination::shift: return "shift";
    case Contamination::cluster: return "cluster";
  }
  return "unknown";
}

struct Contaminated {
  DataMatrix data;
  std::vector<int> outliers;  // sorted replaced-row indices
};

namespace detail {

// Distinct indices by partial Fisher-Yates, then sorted.
[[nodiscard]] inline std::vector<int> sample_indices(int n, int count, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

// n draws from N(0, Sigma) with floor(eps n) uniformly chosen rows replaced
// by contamination placed at mu = 200 v, where v is the smallest-eigenvalue
// direction of Sigma rescaled so that v^T Sigma^(-1) v = p.
[[nodiscard]] inline Contaminated generate_contaminated(int n, const Matrix& sigma, double eps,
                                                        Contamination type, Rng& rng) {
  const int p = static_cast<int>(sigma.rows());
  if (n < 1 || sigma.cols() != p || p < 1) throw std::invalid_argument("bad contamination inputs");
  if (!(eps >= 0.0 && eps < 0.5)) throw std::invalid_argument("eps must lie in [0, 0.5)");
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("sigma must be positive definite");
  const Matrix l = llt.matrixL();

  std::normal_distribution<double> gauss(0.0, 1.0);
  Contaminated out;
  out.data.rows.resize(n, p);
  Vector g(p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) g(j) = gauss(rng);
    out.data.rows.row(i) = (l * g).transpose();
  }

  const int n_out = (type == Contamination::none) ? 0 : static_cast<int>(eps * n);
  if (n_out == 0) return out;
  out.outliers = detail::sample_indices(n, n_out, rng);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  Vector v = eig.eigenvectors().col(0);
  int peak = 0;
  v.cwiseAbs().maxCoeff(&peak);
  if (v(peak) < 0.0) v = -v;
  v *= std::sqrt(static_cast<double>(p) * eig.eigenvalues()(0));
  const Vector mu = config::kOutlierDistance * v;

  for (int idx : out.outliers) {
    switch (type) {
      case Contamination::point:
        out.data.rows.row(idx) = mu.transpose();
        break;
      case Contamination::shift: {
        for (int j = 0; j < p; ++j) g(j) = gauss(rng);
        out.data.rows.row(idx) = (mu + l * g).transpose();
        break;
      }
      case Contamination::cluster: {
        for (int j = 0; j < p; ++j) g(j) = gauss(rng);
        out.data.rows.row(idx) = (mu + config::kClusterSd * g).transpose();
        break;
      }
      case Contamination::none:
        break;
    }
  }
  return out;
}

// ============================================================================
// Copula and circle samples (bivariate)
// ============================================================================

namespace detail {

// Uniform draws on the unit square, rejected while they land within the
// radius of any clean point; the total draw budget is capped.
[[nodiscard]] inline Matrix rejection_outliers(const Matrix& clean, int count, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix out(count, 2);
  long draws = 0;
  for (int i = 0; i < count; ++i) {
    for (;;) {
      if (++draws > config::kRejectionDrawCap) {
        throw std::runtime_error("outlier rejection sampling exceeded the draw budget");
      }
      const double x = unif(rng);
      const double y = unif(rng);
      bool clear = true;
      for (Eigen::Index r = 0; r < clean.rows(); ++r) {
        const double dx = clean(r, 0) - x;
        const double dy = clean(r, 1) - y;
        if (dx * dx + dy * dy <
            config::kCopulaRejectRadius * config::kCopulaRejectRadius) {
          clear = false;
          break;
        }
      }
      if (clear) {
        out(i, 0) = x;
        out(i, 1) = y;
        break;
      }
    }
  }
  return out;
}

// Clean rows and outlier rows interleaved at random positions.
[[nodiscard]] inline Contaminated assemble(const Matrix& clean, const Matrix& outliers, int n,
                                           Rng& rng) {
  Contaminated out;
  out.data.rows.resize(n, clean.cols());
  const int n_out = static_cast<int>(outliers.rows());
  out.outliers = sample_indices(n, n_out, rng);
  std::vector<bool> is_out(static_cast<std::size_t>(n), false);
  for (int i : out.outliers) is_out[static_cast<std::size_t>(i)] = true;
  int ci = 0;
  int oi = 0;
  for (int i = 0; i < n; ++i) {
    if (is_out[static_cast<std::size_t>(i)]) {
      out.data.rows.row(i) = outliers.row(oi++);
    } else {
      out.data.rows.row(i) = clean.row(ci++);
    }
  }
  return out;
}

}  // namespace detail

// Bivariate t copula: correlated t_nu draws mapped through the univariate
// t_nu CDF onto the unit square, plus uniform background outliers kept at
// least 0.05 away from every clean point.
[[nodiscard]] inline Contaminated generate_t_copula(int n, double eps, Rng& rng,
                                                    double pearson = 0.1, double nu = 1.0) {
  if (n < 1) throw std::invalid_argument("sample size must be positive");
  if (!(eps >= 0.0 && eps < 0.5)) throw std::invalid_argument("eps must lie in [0, 0.5)");
  if (!(std::abs(pearson) < 1.0)) throw std::invalid_argument("correlation out of (-1, 1)");
  if (!(nu > 0.0)) throw std::invalid_argument("degrees of freedom must be positive");
  const int n_out = static_cast<int>(eps * n);
  const int n_clean = n - n_out;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::chi_squared_distribution<double> chi(nu);
  const boost::math::students_t tdist(nu);
  Matrix clean(n_clean, 2);
  const double mix = std::sqrt(1.0 - pearson * pearson);
  for (int i = 0; i < n_clean; ++i) {
    const double g1 = gauss(rng);
    const double g2 = gauss(rng);
    const double z2 = pearson * g1 + mix * g2;
    const double scale = std::sqrt(chi(rng) / nu);
    clean(i, 0) = boost::math::cdf(tdist, g1 / scale);
    clean(i, 1) = boost::math::cdf(tdist, z2 / scale);
  }
  const Matrix outliers = detail::rejection_outliers(clean, n_out, rng);
  return detail::assemble(clean, outliers, n, rng);
}

// Clayton dependence parameter for a Kendall rank correlation.
[[nodiscard]] inline double clayton_theta(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must lie in (0, 1)");
  return 2.0 * tau / (1.0 - tau);
}

// Bivariate Clayton copula with parameter theta = 2 tau / (1 - tau), sampled
// by conditional inversion, plus the same background outliers.
[[nodiscard]] inline Contaminated generate_clayton_copula(int n, double eps, Rng& rng,
                                                          double tau = 0.6) {
  if (n < 1) throw std::invalid_argument("sample size must be positive");
  if (!(eps >= 0.0 && eps < 0.5)) throw std::invalid_argument("eps must lie in [0, 0.5)");
  const double theta = clayton_theta(tau);
  const int n_out = static_cast<int>(eps * n);
  const int n_clean = n - n_out;
  std::uniform_real_distribution<double> unif(std::numeric_limits<double>::min(), 1.0);
  Matrix clean(n_clean, 2);
  for (int i = 0; i < n_clean; ++i) {
    const double u1 = unif(rng);
    const double w = unif(rng);
    const double u2 =
        std::pow(std::pow(u1, -theta) * (std::pow(w, -theta / (1.0 + theta)) - 1.0) + 1.0,
                 -1.0 / theta);
    clean(i, 0) = u1;
    clean(i, 1) = u2;
  }
  const Matrix outliers = detail::rejection_outliers(clean, n_out, rng);
  return detail::assemble(clean, outliers, n, rng);
}

// Points on the unit circle with a Gaussian blob at the origin as the
// contamination.
[[nodiscard]] inline Contaminated generate_circle(int n, double eps, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample size must be positive");
  if (!(eps >= 0.0 && eps < 0.5)) throw std::invalid_argument("eps must lie in [0, 0.5)");
  const int n_out = static_cast<int>(eps * n);
  const int n_clean = n - n_out;
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix clean(n_clean, 2);
  for (int i = 0; i < n_clean; ++i) {
    const double a = angle(rng);
    clean(i, 0) = std::cos(a);
    clean(i, 1) = std::sin(a);
  }
  Matrix outliers(n_out, 2);
  const double sd = std::sqrt(0.04);
  for (int i = 0; i < n_out; ++i) {
    outliers(i, 0) = sd * gauss(rng);
    outliers(i, 1) = sd * gauss(rng);
  }
  return detail::assemble(clean, outliers, n, rng);
}

// ============================================================================
// Metrics
// ============================================================================

// KL divergence between zero-mean Gaussians:
// trace(S_hat S^-1) - log det(S_hat S^-1) - p.
[[nodiscard]] inline double kl_divergence(const Matrix& sigma_hat, const Matrix& sigma) {
  const Eigen::Index p = sigma.rows();
  if (sigma_hat.rows() != p || sigma_hat.cols() != p || sigma.cols() != p) {
    throw std::invalid_argument("covariance dimension mismatch");
  }
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("sigma must be positive definite");
  Eigen::LLT<Matrix> llt_hat(sigma_hat);
  if (llt_hat.info() != Eigen::Success) {
    throw std::invalid_argument("sigma_hat must be positive definite");
  }
  const double trace = llt.solve(sigma_hat).trace();
  const double logdet_hat = 2.0 * llt_hat.matrixLLT().diagonal().array().log().sum();
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return trace - (logdet_hat - logdet) - static_cast<double>(p);
}

// Mean squared entrywise deviation, sum_ij (S_hat - S)_ij^2 / p^2.
[[nodiscard]] inline double mse_deviation(const Matrix& sigma_hat, const Matrix& sigma) {
  if (sigma_hat.rows() != sigma.rows() || sigma_hat.cols() != sigma.cols()) {
    throw std::invalid_argument("covariance dimension mismatch");
  }
  const double p = static_cast<double>(sigma.rows());
  return (sigma_hat - sigma).squaredNorm() / (p * p);
}

struct ContainmentCounts {
  int in_subset = 0;  // generated outliers inside the selected h-subset
  int in_top = 0;     // generated outliers among the n(1-eps) lowest distances
};

[[nodiscard]] inline ContainmentCounts count_outlier_containment(const KmrcdFit& fit,
                                                                 const std::vector<int>& outliers,
                                                                 double eps) {
  ContainmentCounts counts;
  std::vector<bool> is_out(static_cast<std::size_t>(fit.n), false);
  for (int i : outliers) is_out[static_cast<std::size_t>(i)] = true;
  for (int i : fit.subset.indices) {
    if (is_out[static_cast<std::size_t>(i)]) ++counts.in_subset;
  }
  const int keep = fit.n - static_cast<int>(eps * fit.n);
  std::vector<int> order(static_cast<std::size_t>(fit.n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (fit.distances(a) != fit.distances(b)) return fit.distances(a) < fit.distances(b);
    return a < b;
  });
  for (int r = 0; r < keep; ++r) {
    if (is_out[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])]) ++counts.in_top;
  }
  return counts;
}

// ============================================================================
// Scenario runner
// ============================================================================

enum class Generator { alyz, t_copula, clayton, circle };

[[nodiscard]] inline const char* generator_name(Generator g) {
  switch (g) {
    case Generator::alyz: return "alyz";
    case Generator::t_copula: return "tcopula";
    case Generator::clayton: return "clayton";
    case Generator::circle: return "circle";
  }
  return "unknown";
}

struct SimScenario {
  Generator generator = Generator::alyz;
  Contamination contamination = Contamination::shift;
  int n = 200;
  int p = 2;
  double eps = 0.0;
  KernelSpec kernel = KernelSpec::linear();
  int h = 0;
  double h_fraction = 0.0;
  int reps = 1;
  std::uint64_t seed = config::kDefaultSeed;
};

struct SimRow {
  int rep = 0;
  int h = 0;
  double rho = 0.0;
  double kl = std::numeric_limits<double>::quiet_NaN();
  double mse = std::numeric_limits<double>::quiet_NaN();
  int outliers_in_subset = 0;
  int outliers_in_top = 0;
  double runtime_s = 0.0;
};

// One replication: generate, fit, score. Each replication is a pure
// function of (scenario, rep, seed), so any thread count gives the same rows.
[[nodiscard]] inline SimRow run_replication(const SimScenario& sc, int rep) {
  Rng rng(mix_seed(sc.seed, static_cast<std::uint64_t>(rep)));
  Matrix sigma;
  Contaminated sample;
  switch (sc.generator) {
    case Generator::alyz:
      sigma = generate_alyz_sigma(sc.p, rng);
      sample = generate_contaminated(sc.n, sigma, sc.eps, sc.contamination, rng);
      break;
    case Generator::t_copula:
      sample = generate_t_copula(sc.n, sc.eps, rng);
      break;
    case Generator::clayton:
      sample = generate_clayton_copula(sc.n, sc.eps, rng);
      break;
    case Generator::circle:
      sample = generate_circle(sc.n, sc.eps, rng);
      break;
  }

  FitOptions opts;
  opts.h = sc.h;
  opts.h_fraction = sc.h_fraction;
  opts.seed = mix_seed(sc.seed, 0x9e3779b9ULL + static_cast<std::uint64_t>(rep));
  opts.threads = 1;

  const auto t0 = std::chrono::steady_clock::now();
  const KmrcdFit fit_result = fit(sample.data, sc.kernel, opts);
  const auto t1 = std::chrono::steady_clock::now();

  SimRow row;
  row.rep = rep;
  row.h = fit_result.h;
  row.rho = fit_result.rho;
  row.runtime_s = std::chrono::duration<double>(t1 - t0).count();
  const ContainmentCounts counts = count_outlier_containment(fit_result, sample.outliers, sc.eps);
  row.outliers_in_subset = counts.in_subset;
  row.outliers_in_top = counts.in_top;

  if (sc.generator == Generator::alyz && sc.kernel.type == KernelType::linear &&
      fit_result.linear) {
    Matrix sigma_hat = fit_result.linear->covariance;
    for (Eigen::Index i = 0; i < sigma_hat.rows(); ++i) {
      for (Eigen::Index j = 0; j < sigma_hat.cols(); ++j) {
        sigma_hat(i, j) *= fit_result.standardization[static_cast<std::size_t>(i)].scale *
                           fit_result.standardization[static_cast<std::size_t>(j)].scale;
      }
    }
    row.kl = kl_divergence(sigma_hat, sigma);
    row.mse = mse_deviation(sigma_hat, sigma);
  }
  return row;
}

[[nodiscard]] inline std::vector<SimRow> run_scenario(const SimScenario& sc,
                                                      unsigned threads = 0) {
  if (sc.reps < 0) throw std::invalid_argument("replication count must be nonnegative");
  if (sc.generator != Generator::alyz && sc.p != 2) {
    throw std::invalid_argument("copula and circle generators are bivariate");
  }
  std::vector<SimRow> rows(static_cast<std::size_t>(sc.reps));
  parallel_for(
      rows.size(), [&](std::size_t r) { rows[r] = run_replication(sc, static_cast<int>(r)); },
      threads);
  return rows;
}

}  // namespace kmrcd::sim
