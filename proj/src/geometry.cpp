#include "dfc/geometry.hpp"

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <string>

#include "dfc/error.hpp"
#include "dfc/parallel.hpp"

namespace dfc {

unsigned default_workers() {
  if (const char* env = std::getenv("DFC_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<unsigned>(v);
  }
  return 1;
}

double arc_length(std::span<const Vec3> points) {
  double total = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) total += distance(points[i - 1], points[i]);
  return total;
}

Points resample(std::span<const Vec3> points, std::size_t n) {
  if (points.size() < 2) throw ValidationError("resample: fiber needs at least 2 points");
  if (n < 2) throw ValidationError("resample: target point count must be at least 2");

  std::vector<double> cumulative(points.size(), 0.0);
  for (std::size_t i = 1; i < points.size(); ++i)
    cumulative[i] = cumulative[i - 1] + distance(points[i - 1], points[i]);
  const double total = cumulative.back();
  if (!(total > 0.0)) throw NumericError("resample: fiber has zero length");

  Points out(n);
  out.front() = points.front();
  out.back() = points.back();
  std::size_t seg = 1;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double target = total * static_cast<double>(k) / static_cast<double>(n - 1);
    while (seg + 1 < points.size() && cumulative[seg] < target) ++seg;
    const double len = cumulative[seg] - cumulative[seg - 1];
    const double t = len > 0.0 ? (target - cumulative[seg - 1]) / len : 0.0;
    out[k] = points[seg - 1] + (points[seg] - points[seg - 1]) * t;
  }
  return out;
}

Points flip(std::span<const Vec3> points) { return Points(points.rbegin(), points.rend()); }

namespace {

// Sum of a per-point term accumulated in mirrored pairs. Both the direct and
// flipped sums go through here so that swapping or flipping the arguments
// only permutes operands of commutative additions.
template <class Term>
double mirrored_sum(std::size_t n, Term term) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n / 2; ++i) sum += term(i) + term(n - 1 - i);
  if (n % 2 == 1) sum += term(n / 2);
  return sum;
}

inline double mdf_unchecked(const Vec3* a, const Vec3* b, std::size_t n) {
  const double direct = mirrored_sum(n, [&](std::size_t i) { return distance(a[i], b[i]); });
  const double flipped =
      mirrored_sum(n, [&](std::size_t i) { return distance(a[i], b[n - 1 - i]); });
  return std::min(direct, flipped) / static_cast<double>(n);
}

}  // namespace

double mdf(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.size() != b.size())
    throw ValidationError("mdf: point count mismatch (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  if (a.empty()) throw ValidationError("mdf: empty fibers");
  return mdf_unchecked(a.data(), b.data(), a.size());
}

ResampledSet ResampledSet::from_fibers(const FiberSet& fibers, std::size_t n_points) {
  ResampledSet out(n_points);
  out.data_.reserve(fibers.size() * n_points);
  for (const Fiber& f : fibers) out.push_back(resample(f.points, n_points));
  return out;
}

void ResampledSet::push_back(std::span<const Vec3> fiber) {
  if (fiber.size() != n_points_)
    throw ValidationError("ResampledSet: expected " + std::to_string(n_points_) +
                          " points, got " + std::to_string(fiber.size()));
  data_.insert(data_.end(), fiber.begin(), fiber.end());
}

DistanceMatrix pairwise_mdf(const ResampledSet& fibers, unsigned workers) {
  const std::size_t n = fibers.size();
  const std::size_t np = fibers.n_points();
  DistanceMatrix out(n);
  if (n < 2) return out;
  std::span<double> upper = out.condensed();
  parallel_for(
      n - 1, workers,
      [&](std::size_t i) {
        const Vec3* a = fibers[i].data();
        double* row = upper.data() + out.row_offset(i);
        for (std::size_t j = i + 1; j < n; ++j) row[j - i - 1] = mdf_unchecked(a, fibers[j].data(), np);
      },
      8);
  return out;
}

Normalization fit_normalization(std::span<const Vec3> points) {
  if (points.empty()) throw ValidationError("fit_normalization: no points");
  Vec3 sum;
  for (const Vec3& p : points) sum = sum + p;
  Normalization norm;
  norm.center = sum / static_cast<double>(points.size());
  double scale = 0.0;
  for (const Vec3& p : points) {
    const Vec3 d = p - norm.center;
    scale = std::max({scale, std::abs(d.x), std::abs(d.y), std::abs(d.z)});
  }
  norm.scale = scale < kMinNormalizationScale ? 1.0 : scale;
  return norm;
}

Normalization fit_normalization(const ResampledSet& fibers) {
  return fit_normalization(fibers.all_points());
}

Points normalize(std::span<const Vec3> points, const Normalization& norm) {
  Points out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back((p - norm.center) / norm.scale);
  return out;
}

Points denormalize(std::span<const Vec3> points, const Normalization& norm) {
  Points out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(p * norm.scale + norm.center);
  return out;
}

FiberMap::FiberMap(std::span<const Vec3> points)
    : side_(2 * points.size()), grid_(side_ * side_ * 3) {
  fill(points, grid_);
}

void FiberMap::fill(std::span<const Vec3> points, std::span<double> out) {
  const std::size_t n = points.size();
  const std::size_t side = 2 * n;
  if (out.size() != side * side * 3) throw ValidationError("FiberMap: output size mismatch");
  for (std::size_t r = 0; r < side; ++r) {
    const Vec3& p = r < n ? points[r] : points[side - 1 - r];
    double* row = out.data() + r * side * 3;
    for (std::size_t c = 0; c < side; ++c) {
      row[3 * c + 0] = p.x;
      row[3 * c + 1] = p.y;
      row[3 * c + 2] = p.z;
    }
  }
}

}  // namespace dfc
