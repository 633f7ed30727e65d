#pragma once

#include <cstdint>
#include <vector>

#include "dfc/geometry.hpp"
#include "dfc/metrics.hpp"
#include "dfc/tract_io.hpp"

namespace dfc {

struct SynthConfig {
  int bundles = 20;
  int fibers_per_bundle = 100;
  int control_points = 4;          // Bézier degree + 1
  int points_per_fiber = 100;
  double sigma = 2.0;              // perpendicular offset std-dev, mm
  double flip_probability = 0.5;
  int outliers = 100;
  double box = 200.0;              // cube edge, mm, centred on the origin
  double voxel = 2.0;              // label grid spacing, mm
  double min_separation = 30.0;    // MDF between templates, mm
  double min_template_length = 80.0;
  int max_attempts = 20000;        // per template before giving up
  std::uint64_t seed = 0;

  void validate() const;
};

struct GroundTruth {
  std::vector<int> bundle;     // -1 for outliers
  std::vector<bool> outlier;

  std::size_t size() const { return bundle.size(); }
};

struct SynthData {
  FiberSet fibers;
  GroundTruth truth;
  LabelVolume volume;
  std::vector<Points> templates;
};

/// Bundles of noisy copies of random Bézier templates, randomly reversed,
/// plus kinked random curves as outliers. Voxels within 3 sigma (at least
/// one voxel) of a template get label 1 + template id.
SynthData generate(const SynthConfig& config);

/// Point on a Bézier curve by de Casteljau.
Vec3 bezier(std::span<const Vec3> control, double t);

struct MatchReport {
  double accuracy = 0.0;          // Hungarian-matched, over true inliers
  double ari = 0.0;               // over true inliers
  double outlier_precision = 0.0; // NaN when nothing is flagged
  double outlier_recall = 0.0;    // NaN without true outliers
  double inlier_rejection = 0.0;  // flagged inliers / inliers
  std::vector<int> cluster_to_bundle;  // -1 when unmatched
};

/// Scores predicted clusters against ground truth. Cluster ids are used for
/// every true inlier whether or not it was flagged; flags are scored
/// separately.
MatchReport match_clusters(const ClusterResult& predicted, const GroundTruth& truth);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

/// Minimum-cost assignment of rows to columns for a rectangular cost matrix
/// (rows <= cols). Returns the column chosen for each row.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);

}  // namespace dfc
