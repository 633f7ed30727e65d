#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dfc/anatomy.hpp"
#include "dfc/geometry.hpp"

namespace dfc {

/// Hard clustering of a fiber set. `cluster` is set for every fiber (the
/// argmax assignment); fibers flagged in `outlier` are left out of every
/// member list.
struct ClusterResult {
  int k = 0;
  std::vector<int> cluster;
  std::vector<bool> outlier;

  std::size_t size() const { return cluster.size(); }
  /// Throws ValidationError when ids fall outside [0, k) or sizes differ.
  void validate() const;
  std::vector<std::vector<std::size_t>> members() const;
};

struct DBReport {
  double db = 0.0;                  // NaN when fewer than 2 clusters qualify
  std::vector<double> alpha;        // per cluster; NaN when excluded
  std::vector<Points> centroids;    // per cluster; empty when excluded
  std::vector<int> included;        // clusters with at least 2 members
  std::vector<int> excluded;
  DistanceMatrix centroid_distance; // over `included`, in that order
};

/// Davies-Bouldin index with MDF as the fiber distance. alpha_i is the mean
/// pairwise MDF inside cluster i; centroids are pointwise means of members
/// flipped to agree with the first member.
DBReport db_index(const ClusterResult& result, const ResampledSet& fibers, unsigned workers = 1);

/// Pointwise mean of `members` after flip-aligning each to the first one.
Points aligned_centroid(const ResampledSet& fibers, const std::vector<std::size_t>& members);

/// A cluster counts as detected in a subject when it has more than this
/// many member fibers.
inline constexpr std::size_t kDetectionThreshold = 10;

/// Mean over subjects of (detected clusters / k).
double wmpg(const std::vector<ClusterResult>& subjects, int k);

struct TAPCReport {
  double score = 0.0;               // mean over nonempty clusters; NaN if none
  std::vector<double> per_cluster;  // NaN for empty clusters
};

/// Mean Dice between each member's region set and its cluster's atlas
/// profile, averaged per cluster and then over nonempty clusters.
TAPCReport tapc(const ClusterResult& result, const std::vector<RegionSet>& fiber_regions,
                const std::vector<RegionSet>& atlas_tap);

/// Ordered key=value report, one entry per line.
class MetricsReport {
 public:
  void add(std::string key, std::string value);
  void add(std::string key, double value);
  void add(std::string key, long long value);
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string str() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace dfc
