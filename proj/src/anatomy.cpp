#include "dfc/anatomy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

#include "dfc/error.hpp"

namespace dfc {

RegionSet::RegionSet(std::initializer_list<std::int32_t> labels)
    : RegionSet(from_labels(std::vector<std::int32_t>(labels))) {}

RegionSet RegionSet::from_labels(std::vector<std::int32_t> labels) {
  for (std::int32_t l : labels)
    if (l < 0) throw ValidationError("region labels must be non-negative");
  std::erase(labels, 0);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  RegionSet out;
  out.labels_ = std::move(labels);
  return out;
}

bool RegionSet::contains(std::int32_t label) const {
  return std::binary_search(labels_.begin(), labels_.end(), label);
}

namespace {

/// Adds the labels of every voxel the segment a-b passes through, walking
/// voxel faces in order (Amanatides-Woo). Only crossings strictly inside the
/// segment are taken, so the endpoints themselves are left to lookup().
void trace_segment(const Vec3& a, const Vec3& b, const LabelVolume& volume, std::vector<std::int32_t>& found) {
  std::array<double, 3> u{}, d{};
  double t_enter = 0.0, t_exit = 1.0;
  for (std::size_t ax = 0; ax < 3; ++ax) {
    u[ax] = (a[ax] - volume.origin[ax]) / volume.spacing[ax];
    d[ax] = (b[ax] - volume.origin[ax]) / volume.spacing[ax] - u[ax];
    const double hi = static_cast<double>(volume.dims[ax]);
    if (d[ax] == 0.0) {
      if (u[ax] < 0.0 || u[ax] >= hi) return;
      continue;
    }
    double t0 = (0.0 - u[ax]) / d[ax], t1 = (hi - u[ax]) / d[ax];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  if (!(t_enter < t_exit)) return;

  std::array<std::int64_t, 3> ijk{};
  std::array<std::int64_t, 3> step{};
  std::array<double, 3> t_max{}, t_delta{};
  for (std::size_t ax = 0; ax < 3; ++ax) {
    const auto hi = static_cast<std::int64_t>(volume.dims[ax]) - 1;
    ijk[ax] = std::clamp(static_cast<std::int64_t>(std::floor(u[ax] + t_enter * d[ax])), std::int64_t{0}, hi);
    if (d[ax] == 0.0) {
      t_max[ax] = std::numeric_limits<double>::infinity();
      continue;
    }
    step[ax] = d[ax] > 0.0 ? 1 : -1;
    const double boundary = static_cast<double>(ijk[ax] + (step[ax] > 0 ? 1 : 0));
    t_max[ax] = (boundary - u[ax]) / d[ax];
    t_delta[ax] = 1.0 / std::abs(d[ax]);
  }
  for (;;) {
    const std::int32_t label = volume.at(static_cast<std::uint32_t>(ijk[0]), static_cast<std::uint32_t>(ijk[1]),
                                         static_cast<std::uint32_t>(ijk[2]));
    if (label > 0) found.push_back(label);
    const std::size_t ax = t_max[0] <= t_max[1] ? (t_max[0] <= t_max[2] ? 0 : 2) : (t_max[1] <= t_max[2] ? 1 : 2);
    if (!(t_max[ax] < t_exit)) break;
    ijk[ax] += step[ax];
    if (ijk[ax] < 0 || ijk[ax] >= static_cast<std::int64_t>(volume.dims[ax])) break;
    t_max[ax] += t_delta[ax];
  }
}

}  // namespace

RegionSet fiber_regions(std::span<const Vec3> points, const LabelVolume& volume) {
  std::vector<std::int32_t> found;
  for (const Vec3& p : points)
    if (auto label = volume.lookup(p); label && *label > 0) found.push_back(*label);
  for (std::size_t s = 0; s + 1 < points.size(); ++s) trace_segment(points[s], points[s + 1], volume, found);
  return RegionSet::from_labels(std::move(found));
}

RegionSet compute_tap(std::span<const RegionSet> members, double fraction) {
  if (members.empty()) return {};
  std::map<std::int32_t, std::size_t> counts;
  for (const RegionSet& s : members)
    for (std::int32_t l : s) ++counts[l];
  // Relative slack so that e.g. 2 of 5 at 40% is not lost to rounding of 0.4 * 5.
  const double needed = fraction * static_cast<double>(members.size()) * (1.0 - 1e-12);
  std::vector<std::int32_t> kept;
  for (const auto& [label, count] : counts)
    if (static_cast<double>(count) >= needed) kept.push_back(label);
  return RegionSet::from_labels(std::move(kept));
}

double dice(const RegionSet& a, const RegionSet& b) {
  const std::size_t total = a.size() + b.size();
  if (total == 0) return 0.0;
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  return 2.0 * static_cast<double>(common) / static_cast<double>(total);
}

std::vector<RegionSet> cluster_taps(std::span<const RegionSet> fiber_sets, std::span<const int> labels,
                                    std::size_t k, double fraction) {
  if (fiber_sets.size() != labels.size())
    throw ValidationError("cluster_taps: region sets and labels differ in length");
  std::vector<std::vector<RegionSet>> members(k);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < k) members[labels[i]].push_back(fiber_sets[i]);
  std::vector<RegionSet> taps;
  taps.reserve(k);
  for (const auto& m : members) taps.push_back(compute_tap(m, fraction));
  return taps;
}

}  // namespace dfc
