#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dfc {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a * s; }
  friend constexpr Vec3 operator/(Vec3 a, double s) { return {a.x / s, a.y / s, a.z / s}; }
  friend constexpr bool operator==(Vec3 a, Vec3 b) = default;
};

inline constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline double distance(Vec3 a, Vec3 b) { return norm(a - b); }
inline constexpr Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

using Points = std::vector<Vec3>;

/// A streamline: ordered points in mm. Either end may be the start.
struct Fiber {
  Points points;
  std::optional<std::int64_t> id;

  friend bool operator==(const Fiber&, const Fiber&) = default;
};

using FiberSet = std::vector<Fiber>;

/// Polyline arc length.
double arc_length(std::span<const Vec3> points);

/// Resamples a polyline to `n` points equally spaced in arc length, with
/// linear interpolation between input vertices. Both endpoints are kept
/// exactly. Throws NumericError for zero-length input.
Points resample(std::span<const Vec3> points, std::size_t n);

/// Reversed copy.
Points flip(std::span<const Vec3> points);

/// Minimum average direct-flip distance between two equally sampled
/// fibers. Throws ValidationError on a point-count mismatch.
///
/// Per-point terms are accumulated in mirrored pairs (i, n-1-i) so the
/// result is bit-identical under argument swap and under flipping either
/// argument.
double mdf(std::span<const Vec3> a, std::span<const Vec3> b);

/// Fibers resampled to a common point count and packed contiguously.
class ResampledSet {
 public:
  ResampledSet() = default;
  explicit ResampledSet(std::size_t n_points) : n_points_(n_points) {}

  /// Resamples every fiber of `fibers` to `n_points`.
  static ResampledSet from_fibers(const FiberSet& fibers, std::size_t n_points);

  void push_back(std::span<const Vec3> fiber);

  std::size_t size() const { return n_points_ == 0 ? 0 : data_.size() / n_points_; }
  bool empty() const { return data_.empty(); }
  std::size_t n_points() const { return n_points_; }

  std::span<const Vec3> operator[](std::size_t i) const {
    return {data_.data() + i * n_points_, n_points_};
  }
  std::span<Vec3> operator[](std::size_t i) { return {data_.data() + i * n_points_, n_points_}; }

  std::span<const Vec3> all_points() const { return data_; }

 private:
  std::size_t n_points_ = 0;
  std::vector<Vec3> data_;
};

/// Condensed symmetric matrix with a zero diagonal; only the strict upper
/// triangle is stored.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), upper_(n < 2 ? 0 : n * (n - 1) / 2, 0.0) {}

  std::size_t size() const { return n_; }

  double operator()(std::size_t i, std::size_t j) const {
    if (i == j) return 0.0;
    return upper_[index(i, j)];
  }
  void set(std::size_t i, std::size_t j, double value) { upper_[index(i, j)] = value; }

  std::span<const double> condensed() const { return upper_; }
  std::span<double> condensed() { return upper_; }

  /// Offset of row i (i < j) inside the condensed storage.
  std::size_t row_offset(std::size_t i) const { return i * (2 * n_ - i - 1) / 2; }

 private:
  std::size_t index(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    return row_offset(i) + (j - i - 1);
  }

  std::size_t n_ = 0;
  std::vector<double> upper_;
};

/// All-pairs MDF. Work is split over rows across `workers` threads; every
/// entry is produced by the scalar `mdf`, so the result does not depend on
/// the worker count.
DistanceMatrix pairwise_mdf(const ResampledSet& fibers, unsigned workers = 1);

struct Normalization {
  Vec3 center;
  double scale = 1.0;

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// Scales below this are replaced by 1.
inline constexpr double kMinNormalizationScale = 1e-9;

/// center = mean of all points, scale = max infinity-norm distance from it.
Normalization fit_normalization(std::span<const Vec3> points);
Normalization fit_normalization(const ResampledSet& fibers);

Points normalize(std::span<const Vec3> points, const Normalization& norm);
Points denormalize(std::span<const Vec3> points, const Normalization& norm);

/// 2n x 2n x 3 image (row, column, channel) built from s = [f ; flip(f)]:
/// every column of row r holds the coordinates of s[r].
class FiberMap {
 public:
  FiberMap() = default;
  explicit FiberMap(std::span<const Vec3> points);

  std::size_t side() const { return side_; }
  static constexpr std::size_t channels() { return 3; }

  double operator()(std::size_t row, std::size_t col, std::size_t ch) const {
    return grid_[(row * side_ + col) * 3 + ch];
  }
  /// Row-major (row, col, channel) storage.
  std::span<const double> data() const { return grid_; }

  /// Writes the image into `out` (side*side*3 values) without allocating.
  static void fill(std::span<const Vec3> points, std::span<double> out);

 private:
  std::size_t side_ = 0;
  std::vector<double> grid_;
};

}  // namespace dfc
