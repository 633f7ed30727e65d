#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "dfc/geometry.hpp"
#include "dfc/tract_io.hpp"

namespace dfc {

/// Sorted set of positive region labels.
class RegionSet {
 public:
  RegionSet() = default;
  RegionSet(std::initializer_list<std::int32_t> labels);
  /// Drops zeros and duplicates; throws ValidationError on negative labels.
  static RegionSet from_labels(std::vector<std::int32_t> labels);

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  bool contains(std::int32_t label) const;
  std::span<const std::int32_t> labels() const { return labels_; }
  auto begin() const { return labels_.begin(); }
  auto end() const { return labels_.end(); }

  friend bool operator==(const RegionSet&, const RegionSet&) = default;

 private:
  std::vector<std::int32_t> labels_;
};

/// Fraction of member fibers that must intersect a region for it to enter
/// a cluster's anatomical profile.
inline constexpr double kTapFraction = 0.4;

/// Distinct nonzero labels of the voxels the polyline passes through: the
/// voxels of its points (floor rule) and every voxel a segment enters.
/// Parts outside the grid are ignored.
RegionSet fiber_regions(std::span<const Vec3> points, const LabelVolume& volume);

/// Tract anatomical profile: labels present in at least `fraction` of the
/// member region sets (ties included). Empty input gives an empty profile.
RegionSet compute_tap(std::span<const RegionSet> members, double fraction = kTapFraction);

/// 2|a∩b| / (|a|+|b|); 0 when both are empty.
double dice(const RegionSet& a, const RegionSet& b);

/// Profiles for clusters 0..k-1 given per-fiber region sets and labels.
/// Fibers with a label outside [0, k) are ignored.
std::vector<RegionSet> cluster_taps(std::span<const RegionSet> fiber_sets, std::span<const int> labels,
                                    std::size_t k, double fraction = kTapFraction);

}  // namespace dfc
