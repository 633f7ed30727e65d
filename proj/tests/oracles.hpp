#pragma once

// Brute-force reference implementations, written straight from the metric
// definitions and sharing no code with the library beyond its data types.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "dfc/geometry.hpp"
#include "dfc/nn.hpp"
#include "dfc/tract_io.hpp"

namespace dfc::oracle {

inline double point_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline double mean_distance(const Points& a, const Points& b, bool reversed) {
  double s = 0.0;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) s += point_distance(a[i], reversed ? b[n - 1 - i] : b[i]);
  return s / double(n);
}

inline double mdf(const Points& a, const Points& b) {
  return std::min(mean_distance(a, b, false), mean_distance(a, b, true));
}

/// Davies-Bouldin over clusters with >= 2 non-outlier members; NaN when
/// fewer than two qualify.
inline double db_index(const std::vector<Points>& fibers, const std::vector<int>& cluster,
                       const std::vector<bool>& outlier, int k) {
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < fibers.size(); ++i)
    if (!outlier[i]) members[std::size_t(cluster[i])].push_back(i);
  std::vector<double> alpha;
  std::vector<Points> centroid;
  for (const auto& m : members) {
    if (m.size() < 2) continue;
    double s = 0.0;
    int pairs = 0;
    for (std::size_t a : m)
      for (std::size_t b : m)
        if (a != b) {
          s += mdf(fibers[a], fibers[b]);
          ++pairs;
        }
    alpha.push_back(s / pairs);
    const Points& ref = fibers[m[0]];
    Points c(ref.size());
    for (std::size_t f : m) {
      const bool flip = mean_distance(ref, fibers[f], true) < mean_distance(ref, fibers[f], false);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        const Vec3& p = fibers[f][flip ? ref.size() - 1 - i : i];
        c[i].x += p.x;
        c[i].y += p.y;
        c[i].z += p.z;
      }
    }
    const double count = static_cast<double>(m.size());
    for (Vec3& p : c) p = Vec3{p.x / count, p.y / count, p.z / count};
    centroid.push_back(c);
  }
  const std::size_t n = alpha.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) worst = std::max(worst, (alpha[i] + alpha[j]) / mdf(centroid[i], centroid[j]));
    total += worst;
  }
  return total / double(n);
}

inline double dice(const std::set<int>& a, const std::set<int>& b) {
  if (a.empty() && b.empty()) return 0.0;
  int common = 0;
  for (int x : a) common += int(b.count(x));
  return 2.0 * common / double(a.size() + b.size());
}

inline double tapc(const std::vector<std::set<int>>& regions, const std::vector<int>& cluster,
                   const std::vector<bool>& outlier, const std::vector<std::set<int>>& tap) {
  double total = 0.0;
  int nonempty = 0;
  for (std::size_t c = 0; c < tap.size(); ++c) {
    double s = 0.0;
    int count = 0;
    for (std::size_t f = 0; f < regions.size(); ++f)
      if (!outlier[f] && cluster[f] == int(c)) {
        s += dice(regions[f], tap[c]);
        ++count;
      }
    if (count == 0) continue;
    total += s / count;
    ++nonempty;
  }
  return nonempty ? total / nonempty : std::numeric_limits<double>::quiet_NaN();
}

inline RowMatrix target_distribution(const RowMatrix& q) {
  const auto n = q.rows(), k = q.cols();
  RowMatrix p(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    double denom = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      double f = 0.0;
      for (Eigen::Index r = 0; r < n; ++r) f += q(r, j);
      denom += q(i, j) * q(i, j) / f;
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      double f = 0.0;
      for (Eigen::Index r = 0; r < n; ++r) f += q(r, j);
      p(i, j) = q(i, j) * q(i, j) / f / denom;
    }
  }
  return p;
}

/// Labels of every voxel whose closed box the polyline touches, by testing
/// each segment against every box of the grid.
inline std::set<int> visited_labels(const Points& points, const LabelVolume& v) {
  std::set<int> out;
  auto touches = [&](const Vec3& a, const Vec3& b, std::uint32_t i, std::uint32_t j, std::uint32_t k) {
    const double lo[3] = {v.origin.x + i * v.spacing.x, v.origin.y + j * v.spacing.y, v.origin.z + k * v.spacing.z};
    double t0 = 0.0, t1 = 1.0;
    for (int ax = 0; ax < 3; ++ax) {
      const double hi = lo[ax] + v.spacing[ax];
      const double d = b[ax] - a[ax];
      if (d == 0.0) {
        if (a[ax] < lo[ax] || a[ax] > hi) return false;
        continue;
      }
      double ta = (lo[ax] - a[ax]) / d, tb = (hi - a[ax]) / d;
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    return t0 <= t1;
  };
  for (std::uint32_t k = 0; k < v.dims[2]; ++k)
    for (std::uint32_t j = 0; j < v.dims[1]; ++j)
      for (std::uint32_t i = 0; i < v.dims[0]; ++i) {
        const int label = v.at(i, j, k);
        if (label == 0 || out.count(label)) continue;
        for (std::size_t s = 0; s < points.size(); ++s) {
          const Vec3& b = s + 1 < points.size() ? points[s + 1] : points[s];
          if (touches(points[s], b, i, j, k)) {
            out.insert(label);
            break;
          }
        }
      }
  return out;
}

inline double relative_error(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

}  // namespace dfc::oracle
