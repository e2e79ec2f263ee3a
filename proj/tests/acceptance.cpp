// Acceptance checks for the estimator. Each check prints one PASS/FAIL line
// with its measured quantities; the exit code is the number of failures.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kmrcd/kmrcd.hpp"
#include "oracles.hpp"

using kmrcd::DataMatrix;
using kmrcd::FitOptions;
using kmrcd::GramMatrix;
using kmrcd::HSubset;
using kmrcd::KernelSpec;
using kmrcd::KmrcdFit;
using kmrcd::Matrix;
using kmrcd::Vector;
namespace sim = kmrcd::sim;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// 1. Nonzero sample-covariance eigenvalues equal centered-Gram eigenvalues
//    divided by n-1, over 100 random linear-kernel datasets, within 5 s.
Outcome check_spectrum_duality() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::mt19937_64 rng(101);
  for (int rep = 0; rep < 100; ++rep) {
    const int p = 1 + static_cast<int>(rng() % 10);
    const int n = p + 2 + static_cast<int>(rng() % static_cast<std::uint64_t>(28 - p));
    const Matrix x = oracle::random_matrix(n, p, 7000 + static_cast<std::uint64_t>(rep));
    const GramMatrix centered =
        kmrcd::center_gram(kmrcd::gram_matrix(KernelSpec::linear(), DataMatrix{x, false}));
    Eigen::SelfAdjointEigenSolver<Matrix> gram_eig(centered.k / (n - 1.0));
    Eigen::SelfAdjointEigenSolver<Matrix> cov_eig(oracle::covariance(x));
    for (int j = 0; j < p; ++j) {
      const double a = gram_eig.eigenvalues()(n - 1 - j);
      const double b = cov_eig.eigenvalues()(p - 1 - j);
      worst = std::max(worst, std::abs(a - b) / std::max(std::abs(b), 1e-300));
    }
  }
  const double elapsed = seconds_since(t0);
  Outcome out;
  out.pass = worst <= 1e-10 && elapsed < 5.0;
  out.detail = "max rel err " + fmt(worst) + ", " + fmt(elapsed) + " s";
  return out;
}

// 2. Over all 56 subsets of size 5 from n=8, p=2, the gram and coordinate
//    regularized log-determinants differ by a constant (1e-8) and share the
//    argmin, within 1 s.
Outcome check_objective_offset() {
  const auto t0 = Clock::now();
  const Matrix x = oracle::random_matrix(8, 2, 7200);
  const GramMatrix g = kmrcd::gram_matrix(KernelSpec::linear(), DataMatrix{x, false});
  const int h = 5;
  const double rho = 0.3;

  double base = 0.0;
  double spread = 0.0;
  double best_gram = std::numeric_limits<double>::infinity();
  double best_coord = std::numeric_limits<double>::infinity();
  std::vector<int> argmin_gram, argmin_coord;
  std::vector<int> pick{0, 1, 2, 3, 4};
  int count = 0;
  for (;;) {
    const double gram_obj = kmrcd::objective_from_eigenvalues(
        kmrcd::subset_centered_eigenvalues(g.k, HSubset{pick}), rho, h);
    const double coord_obj = oracle::reg_logdet(x, pick, rho);
    const double diff = gram_obj - coord_obj;
    if (count == 0) base = diff;
    spread = std::max(spread, std::abs(diff - base));
    if (gram_obj < best_gram) {
      best_gram = gram_obj;
      argmin_gram = pick;
    }
    if (coord_obj < best_coord) {
      best_coord = coord_obj;
      argmin_coord = pick;
    }
    ++count;
    int j = 4;
    while (j >= 0 && pick[static_cast<std::size_t>(j)] == 8 - 5 + j) --j;
    if (j < 0) break;
    ++pick[static_cast<std::size_t>(j)];
    for (int t = j + 1; t < 5; ++t) {
      pick[static_cast<std::size_t>(t)] = pick[static_cast<std::size_t>(t - 1)] + 1;
    }
  }
  const double elapsed = seconds_since(t0);
  Outcome out;
  out.pass = count == 56 && spread <= 1e-8 && argmin_gram == argmin_coord && elapsed < 1.0;
  out.detail = "56 subsets, offset spread " + fmt(spread) + ", argmin " +
               (argmin_gram == argmin_coord ? "match" : "MISMATCH") + ", " + fmt(elapsed) + " s";
  return out;
}

// 3. Kernel Mahalanobis distances equal coordinate-space regularized
//    distances to relative 1e-8 over 100 random instances, within 10 s.
Outcome check_distance_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::mt19937_64 rng(103);
  for (int rep = 0; rep < 100; ++rep) {
    const int p = 1 + static_cast<int>(rng() % 6);
    const int n = 10 + static_cast<int>(rng() % 31);
    const int h_lo = std::max(p + 2, 5);
    const int h = h_lo + static_cast<int>(rng() % static_cast<std::uint64_t>(n - h_lo));
    const double rho = 0.01 + 0.99 * static_cast<double>(rng() % 1000) / 1000.0;
    const Matrix x = oracle::random_matrix(n, p, 7400 + static_cast<std::uint64_t>(rep));

    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<int> subset(all.begin(), all.begin() + h);
    std::sort(subset.begin(), subset.end());

    const GramMatrix g = kmrcd::gram_matrix(KernelSpec::linear(), DataMatrix{x, false});
    const Vector got = kmrcd::kernel_mahalanobis(g, HSubset{subset}, rho);
    const Vector expected = oracle::reg_mahalanobis(x, subset, rho);
    for (int i = 0; i < n; ++i) {
      worst = std::max(worst,
                       std::abs(got(i) - expected(i)) / std::max(std::abs(expected(i)), 1e-12));
    }
  }
  const double elapsed = seconds_since(t0);
  Outcome out;
  out.pass = worst <= 1e-8 && elapsed < 10.0;
  out.detail = "max rel err " + fmt(worst) + ", " + fmt(elapsed) + " s";
  return out;
}

// 4. The objective never increases along any concentration sequence (1e-10
//    slack) and all 500 random starts converge within 100 steps.
Outcome check_concentration_monotone() {
  double worst_increase = 0.0;
  int unconverged = 0;
  std::mt19937_64 rng(104);
  for (int ds = 0; ds < 50; ++ds) {
    Matrix x = oracle::random_matrix(30, 3, 7600 + static_cast<std::uint64_t>(ds));
    if (ds % 2 == 1) x.topRows(6).array() += 5.0;
    const GramMatrix g = kmrcd::gram_matrix(KernelSpec::linear(), DataMatrix{x, false});
    const int h = 18;
    const double rho = 0.05 + 0.9 * static_cast<double>(rng() % 1000) / 1000.0;
    for (int start = 0; start < 10; ++start) {
      std::vector<int> all(30);
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      std::vector<int> pick(all.begin(), all.begin() + h);
      std::sort(pick.begin(), pick.end());

      HSubset subset{pick};
      double prev = kmrcd::objective_from_eigenvalues(
          kmrcd::subset_centered_eigenvalues(g.k, subset), rho, h);
      bool converged = false;
      for (int step = 0; step < 100; ++step) {
        const HSubset next = kmrcd::c_step(g, subset, rho);
        const double obj = kmrcd::objective_from_eigenvalues(
            kmrcd::subset_centered_eigenvalues(g.k, next), rho, h);
        worst_increase = std::max(worst_increase, obj - prev);
        if (next.indices == subset.indices) {
          converged = true;
          break;
        }
        subset = next;
        prev = obj;
      }
      if (!converged) ++unconverged;
    }
  }
  Outcome out;
  out.pass = worst_increase <= 1e-10 && unconverged == 0;
  out.detail = "500 sequences, worst increase " + fmt(worst_increase) + ", unconverged " +
               std::to_string(unconverged);
  return out;
}

// 5. After every fit the regularized subset spectrum has condition number
//    at most 50 (1e-6 slack), across kernels, subset sizes, and inputs.
Outcome check_condition_contract() {
  double worst = 0.0;
  int fits = 0;
  std::vector<Matrix> datasets;
  {
    Matrix clean = oracle::random_matrix(60, 3, 7800);
    Matrix contaminated = clean;
    contaminated.topRows(12).array() += 9.0;
    datasets.push_back(clean);
    datasets.push_back(contaminated);
  }
  for (const Matrix& x : datasets) {
    for (double frac : {0.5, 0.75}) {
      for (const KernelSpec& spec :
           {KernelSpec::linear(), KernelSpec::rbf(0.0), KernelSpec::polynomial(2, 1.0)}) {
        FitOptions opts;
        opts.h_fraction = frac;
        const KmrcdFit fit = kmrcd::fit(DataMatrix{x, false}, spec, opts);
        worst = std::max(worst,
                         kmrcd::regularized_condition(fit.subset_eigenvalues, fit.rho, fit.h));
        ++fits;
      }
    }
    FitOptions opts;
    const GramMatrix g = kmrcd::gram_matrix(KernelSpec::linear(), DataMatrix{x, false});
    const KmrcdFit fit = kmrcd::fit(g, opts);
    worst =
        std::max(worst, kmrcd::regularized_condition(fit.subset_eigenvalues, fit.rho, fit.h));
    ++fits;
  }
  Outcome out;
  out.pass = worst <= 50.0 * (1.0 + 1e-6);
  out.detail = std::to_string(fits) + " fits, worst condition number " + fmt(worst);
  return out;
}

// 6. Gaussian data with 20 percent shifted rows, n=1000, p=2, linear kernel,
//    h=0.75n, 20 seeds: no planted outlier enters the subset, flag recall at
//    least 0.99, false-flag rate at most 0.02.
Outcome check_elliptical_detection() {
  const auto t0 = Clock::now();
  double total_in_subset = 0.0;
  double recall_sum = 0.0;
  double false_sum = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    sim::Rng rng(9000 + static_cast<std::uint64_t>(s));
    const Matrix sigma = sim::generate_alyz_sigma(2, rng);
    const sim::Contaminated sample =
        sim::generate_contaminated(1000, sigma, 0.2, sim::Contamination::shift, rng);
    FitOptions opts;
    opts.h = 750;
    const KmrcdFit fit = kmrcd::fit(sample.data, KernelSpec::linear(), opts);

    std::vector<bool> is_out(1000, false);
    for (int i : sample.outliers) is_out[static_cast<std::size_t>(i)] = true;
    int in_subset = 0;
    for (int i : fit.subset.indices) {
      if (is_out[static_cast<std::size_t>(i)]) ++in_subset;
    }
    int flagged_out = 0;
    int flagged_in = 0;
    for (int i = 0; i < 1000; ++i) {
      if (fit.flags[static_cast<std::size_t>(i)] == 0) continue;
      if (is_out[static_cast<std::size_t>(i)]) ++flagged_out;
      else ++flagged_in;
    }
    const int n_out = static_cast<int>(sample.outliers.size());
    total_in_subset += in_subset;
    recall_sum += static_cast<double>(flagged_out) / n_out;
    false_sum += static_cast<double>(flagged_in) / (1000 - n_out);
  }
  const double mean_in_subset = total_in_subset / seeds;
  const double recall = recall_sum / seeds;
  const double false_rate = false_sum / seeds;
  Outcome out;
  out.pass = mean_in_subset == 0.0 && recall >= 0.99 && false_rate <= 0.02;
  out.detail = "mean outliers in subset " + fmt(mean_in_subset) + ", recall " + fmt(recall) +
               ", false rate " + fmt(false_rate) + ", " + fmt(seconds_since(t0)) + " s";
  return out;
}

// 7. Circle data, n=500, eps=0.2, polynomial kernel, h=0.75n, 20 seeds:
//    mean planted outliers in the subset and in the clean-sized ranking both
//    at most 0.5, within 2 minutes.
Outcome check_circle_scenario() {
  const auto t0 = Clock::now();
  sim::SimScenario sc;
  sc.generator = sim::Generator::circle;
  sc.n = 500;
  sc.p = 2;
  sc.eps = 0.2;
  sc.kernel = KernelSpec::polynomial(2, 1.0);
  sc.h_fraction = 0.75;
  sc.reps = 20;
  sc.seed = 901;
  const std::vector<sim::SimRow> rows = sim::run_scenario(sc, 1);
  double in_subset = 0.0;
  double in_top = 0.0;
  for (const auto& r : rows) {
    in_subset += r.outliers_in_subset;
    in_top += r.outliers_in_top;
  }
  in_subset /= sc.reps;
  in_top /= sc.reps;
  const double elapsed = seconds_since(t0);
  Outcome out;
  out.pass = in_subset <= 0.5 && in_top <= 0.5 && elapsed < 120.0;
  out.detail = "mean in subset " + fmt(in_subset) + ", mean in top " + fmt(in_top) + ", " +
               fmt(elapsed) + " s";
  return out;
}

// 8. t-copula data, n=500, eps=0.1, RBF kernel with the median-heuristic
//    bandwidth, h=0.75n, 20 seeds: mean outliers in the subset at most 1,
//    mean outliers in the clean-sized ranking at most 15.
Outcome check_tcopula_scenario() {
  const auto t0 = Clock::now();
  sim::SimScenario sc;
  sc.generator = sim::Generator::t_copula;
  sc.n = 500;
  sc.p = 2;
  sc.eps = 0.1;
  sc.kernel = KernelSpec::rbf(0.0);
  sc.h_fraction = 0.75;
  sc.reps = 20;
  sc.seed = 902;
  const std::vector<sim::SimRow> rows = sim::run_scenario(sc, 1);
  double in_subset = 0.0;
  double in_top = 0.0;
  for (const auto& r : rows) {
    in_subset += r.outliers_in_subset;
    in_top += r.outliers_in_top;
  }
  in_subset /= sc.reps;
  in_top /= sc.reps;
  Outcome out;
  out.pass = in_subset <= 1.0 && in_top <= 15.0;
  out.detail = "mean in subset " + fmt(in_subset) + ", mean in top " + fmt(in_top) + ", " +
               fmt(seconds_since(t0)) + " s";
  return out;
}

// 9. (n,p)=(200,100) with 30 percent point contamination: the divergence
//    from the truth at h=0.5n is finite and at least 5 times smaller than at
//    h=0.9n, 10 seeds, within 5 minutes.
Outcome check_breakdown_separation() {
  const auto t0 = Clock::now();
  sim::SimScenario sc;
  sc.generator = sim::Generator::alyz;
  sc.contamination = sim::Contamination::point;
  sc.n = 200;
  sc.p = 100;
  sc.eps = 0.3;
  sc.kernel = KernelSpec::linear();
  sc.reps = 10;
  sc.seed = 903;

  sc.h_fraction = 0.5;
  const std::vector<sim::SimRow> low = sim::run_scenario(sc, 1);
  sc.h_fraction = 0.9;
  const std::vector<sim::SimRow> high = sim::run_scenario(sc, 1);

  double kl_low = 0.0;
  double kl_high = 0.0;
  bool finite = true;
  for (const auto& r : low) {
    finite = finite && std::isfinite(r.kl);
    kl_low += r.kl;
  }
  for (const auto& r : high) kl_high += r.kl;
  kl_low /= sc.reps;
  kl_high /= sc.reps;
  const double elapsed = seconds_since(t0);
  Outcome out;
  out.pass = finite && 5.0 * kl_low <= kl_high && elapsed < 300.0;
  out.detail = "mean divergence " + fmt(kl_low) + " at h=0.5n vs " + fmt(kl_high) +
               " at h=0.9n, " + fmt(elapsed) + " s";
  return out;
}

// 10. The pairwise-difference scale matches its brute-force definition on
//     1000 short sequences, the univariate window search matches exhaustive
//     enumeration, and both scales are 1 within 5 percent on large normal
//     samples.
Outcome check_univariate_oracles() {
  int qn_mismatches = 0;
  std::mt19937_64 rng(110);
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = 2 + static_cast<int>(rng() % 11);
    std::vector<double> v = oracle::random_values(n, 8200 + static_cast<std::uint64_t>(rep));
    if (rep % 3 == 1) v[0] = v[n - 1];
    if (kmrcd::qn_scale(v) != oracle::qn_brute(v)) ++qn_mismatches;
  }

  int mcd_mismatches = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 4 + static_cast<int>(rng() % 11);
    const int h = n / 2 + 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(n - n / 2));
    std::vector<double> v = oracle::random_values(n, 8400 + static_cast<std::uint64_t>(rep));
    if (rep % 2 == 1) {
      for (int i = 0; i < n / 4; ++i) v[static_cast<std::size_t>(i)] += 10.0;
    }
    const kmrcd::LocationScale got = kmrcd::univariate_mcd(v, h);
    const oracle::McdOracle expected = oracle::mcd_exhaustive(v, h);
    const double expected_scale =
        expected.raw_scale *
        std::sqrt(kmrcd::mcd_consistency_factor(static_cast<double>(h) / n));
    const bool loc_ok = std::abs(got.location - expected.location) <=
                        1e-12 * std::max(1.0, std::abs(expected.location));
    const bool scale_ok =
        std::abs(got.scale - expected_scale) <= 1e-12 * std::max(1.0, expected_scale);
    if (!loc_ok || !scale_ok || got.support != expected.support) ++mcd_mismatches;
  }

  const std::vector<double> big = oracle::random_values(10000, 8600);
  const double qn_big = kmrcd::qn_scale(big);
  const double mcd_big = kmrcd::reweighted_univariate_mcd(big).scale;

  Outcome out;
  out.pass = qn_mismatches == 0 && mcd_mismatches == 0 && std::abs(qn_big - 1.0) <= 0.05 &&
             std::abs(mcd_big - 1.0) <= 0.05;
  out.detail = "qn mismatches " + std::to_string(qn_mismatches) + ", window mismatches " +
               std::to_string(mcd_mismatches) + ", large-sample scales " + fmt(qn_big) + " and " +
               fmt(mcd_big);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// 11. A fixed seed gives byte-identical command-line outputs across two
//     runs, and permuting the input rows permutes the subset, distances,
//     and flags consistently.
Outcome check_determinism_equivariance() {
  bool bytes_equal = false;
  {
    const std::filesystem::path dir =
        std::filesystem::temp_directory_path() /
        ("kmrcd_acc_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(dir);
    Matrix x = oracle::random_matrix(40, 2, 8800);
    x.topRows(8).array() += 10.0;
    kmrcd::io::write_csv((dir / "data.csv").string(), x);
    const std::string base = std::string(KMRCD_CLI_BIN) + " detect --input " +
                             (dir / "data.csv").string() + " --seed 5 --output-dir ";
    const std::string quiet = " >/dev/null 2>&1";
    const int rc1 = std::system((base + (dir / "a").string() + quiet).c_str());
    const int rc2 = std::system((base + (dir / "b").string() + quiet).c_str());
    if (rc1 == 0 && rc2 == 0) {
      const std::string report_a = slurp((dir / "a/report.json").string());
      bytes_equal = !report_a.empty() &&
                    report_a == slurp((dir / "b/report.json").string()) &&
                    slurp((dir / "a/distances.csv").string()) ==
                        slurp((dir / "b/distances.csv").string());
    }
    std::filesystem::remove_all(dir);
  }

  Matrix x = oracle::random_matrix(40, 2, 8900);
  x.topRows(8).array() += 10.0;
  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(111);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix xp(40, 2);
  for (int i = 0; i < 40; ++i) xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  std::vector<int> inverse(40);
  for (int i = 0; i < 40; ++i) {
    inverse[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
  }

  const auto pairs = kmrcd::sdo_direction_pairs(40, 13, 200);
  std::vector<std::pair<int, int>> mapped;
  for (const auto& [a, b] : pairs) {
    mapped.emplace_back(inverse[static_cast<std::size_t>(a)],
                        inverse[static_cast<std::size_t>(b)]);
  }
  FitOptions opts;
  opts.h = 28;
  opts.sdo_pairs = pairs;
  FitOptions opts_p = opts;
  opts_p.sdo_pairs = mapped;
  const KmrcdFit fit = kmrcd::fit(DataMatrix{x, true}, KernelSpec::linear(), opts);
  const KmrcdFit fit_p = kmrcd::fit(DataMatrix{xp, true}, KernelSpec::linear(), opts_p);

  std::vector<int> remapped;
  for (int i : fit_p.subset.indices) remapped.push_back(perm[static_cast<std::size_t>(i)]);
  std::sort(remapped.begin(), remapped.end());
  bool subset_ok = remapped == fit.subset.indices;
  bool flags_ok = true;
  double worst = 0.0;
  for (int i = 0; i < 40; ++i) {
    const double ref = fit.distances(perm[static_cast<std::size_t>(i)]);
    worst = std::max(worst, std::abs(fit_p.distances(i) - ref) / std::max(std::abs(ref), 1e-12));
    flags_ok = flags_ok && fit_p.flags[static_cast<std::size_t>(i)] ==
                               fit.flags[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }

  Outcome out;
  out.pass = bytes_equal && subset_ok && flags_ok && worst <= 1e-8;
  out.detail = std::string("outputs ") + (bytes_equal ? "byte-identical" : "DIFFER") +
               ", subset " + (subset_ok ? "consistent" : "INCONSISTENT") + ", flags " +
               (flags_ok ? "consistent" : "INCONSISTENT") + ", distance rel err " + fmt(worst);
  return out;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"covariance spectrum duality", check_spectrum_duality},
      {"objective offset constancy", check_objective_offset},
      {"kernel distance oracle", check_distance_oracle},
      {"concentration monotonicity", check_concentration_monotone},
      {"condition number contract", check_condition_contract},
      {"elliptical shift detection", check_elliptical_detection},
      {"circle scenario containment", check_circle_scenario},
      {"t-copula scenario containment", check_tcopula_scenario},
      {"breakdown separation", check_breakdown_separation},
      {"univariate scale oracles", check_univariate_oracles},
      {"determinism and equivariance", check_determinism_equivariance},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    if (!out.pass) ++failures;
    std::printf("%s  %2zu  %-32s %s\n", out.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), out.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
