#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace kmrcd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ============================================================================
// Pinned numeric constants
// ============================================================================

namespace config {

// matrix validation
inline constexpr double kSymmetryTol = 1e-10;       // relative, max |K - K^T|
inline constexpr double kPsdEigenTol = 1e-8;        // relative to lambda_max
inline constexpr double kWeightSumTol = 1e-10;      // |sum(w) - 1| bound

// Weiszfeld iteration in feature space
inline constexpr int kWeiszfeldIterations = 10;
inline constexpr double kWeiszfeldFloor = 1e-12;    // squared-distance floor

// Stahel-Donoho outlyingness
inline constexpr int kSdoDirections = 500;
inline constexpr double kSdoDirectionFloor = 1e-12; // squared direction norm
inline constexpr double kMadConsistency = 1.4826;   // MAD at the normal

// spatial rank
inline constexpr double kRankPairFloor = 1e-12;     // pairwise distance floor

// spatial sign covariance weights
inline constexpr double kSscmDistanceFloor = 1e-10;

// refinement
inline constexpr double kRefineRankTol = 1e-9;      // relative eigenvalue cut
inline constexpr double kRefineQnFloor = 1e-10;

// regularization
inline constexpr double kKappaMax = 50.0;
inline constexpr double kKappaSlack = 1e-6;         // bound is kKappaMax*(1+slack)
inline constexpr double kRhoFloor = 1e-6;
inline constexpr double kRhoBisectTol = 1e-12;
inline constexpr double kRhoMedianGate = 0.1;

// robust univariate scale
inline constexpr double kQnConsistency = 2.2219;
inline constexpr double kReweightCutoff = 2.5;

// outlier flagging
inline constexpr double kFlagLogOffset = 0.1;
inline constexpr double kFlagSigmaFloor = 1e-12;

// fit loop
inline constexpr int kMaxCSteps = 100;
inline constexpr std::uint64_t kDefaultSeed = 42;

// simulation
inline constexpr double kAlyzConditionNumber = 100.0;
inline constexpr int kAlyzMaxIterations = 100;
inline constexpr double kAlyzDiagTol = 1e-6;
inline constexpr double kAlyzKappaRelTol = 1e-3;
inline constexpr double kOutlierDistance = 200.0;
inline constexpr double kClusterSd = 0.05;
inline constexpr double kCopulaRejectRadius = 0.05;
inline constexpr long kRejectionDrawCap = 1000000;

}  // namespace config

// ============================================================================
// Shared value types
// ============================================================================

// Observations are rows, variables are columns.
struct DataMatrix {
  Matrix rows;
  bool standardized = false;

  [[nodiscard]] Eigen::Index n() const { return rows.rows(); }
  [[nodiscard]] Eigen::Index p() const { return rows.cols(); }

  void validate() const {
    if (rows.rows() < 2) {
      throw std::invalid_argument("data matrix needs at least 2 observations");
    }
    if (!rows.allFinite()) {
      throw std::invalid_argument("data matrix has non-finite entries");
    }
  }
};

enum class GramKind { raw, centered, weighted_centered, regularized };

struct GramMatrix {
  Matrix k;
  GramKind kind = GramKind::raw;

  [[nodiscard]] Eigen::Index n() const { return k.rows(); }
};

// Indices of an h-subset, sorted ascending, no duplicates.
struct HSubset {
  std::vector<int> indices;

  [[nodiscard]] int h() const { return static_cast<int>(indices.size()); }

  void validate(Eigen::Index n) const {
    if (indices.empty()) throw std::invalid_argument("empty h-subset");
    int prev = -1;
    for (int i : indices) {
      if (i <= prev || i >= n) {
        throw std::invalid_argument("h-subset indices must be sorted, distinct and in range");
      }
      prev = i;
    }
  }

  friend bool operator==(const HSubset& a, const HSubset& b) { return a.indices == b.indices; }
};

enum class StartOrigin { spatial_median, sdo, spatial_rank, sscm };

[[nodiscard]] inline const char* start_origin_name(StartOrigin o) {
  switch (o) {
    case StartOrigin::spatial_median: return "spatial_median";
    case StartOrigin::sdo: return "sdo";
    case StartOrigin::spatial_rank: return "spatial_rank";
    case StartOrigin::sscm: return "sscm";
  }
  return "unknown";
}

// Location weights w and covariance weights u over all n observations.
struct WeightPair {
  Vector w;
  Vector u;
  StartOrigin origin = StartOrigin::spatial_median;
};

// Univariate robust estimate; support holds the indices the estimate used.
struct LocationScale {
  double location = 0.0;
  double scale = 0.0;
  std::vector<int> support;
};

// ============================================================================
// Seed mixing
// ============================================================================

// splitmix64 step, used to derive independent substream seeds.
[[nodiscard]] inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

[[nodiscard]] inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x51ed270b0f4dULL));
}

}  // namespace kmrcd
