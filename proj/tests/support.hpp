#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dfc/geometry.hpp"

namespace dfc::test {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline Vec3 random_point(Rng& rng, double extent = 50.0) {
  return {uniform(rng, -extent, extent), uniform(rng, -extent, extent), uniform(rng, -extent, extent)};
}

/// Random walk polyline with `n` points.
inline Points random_walk(Rng& rng, std::size_t n, double step = 3.0) {
  Points p{random_point(rng)};
  while (p.size() < n) p.push_back(p.back() + Vec3{uniform(rng, -step, step), uniform(rng, -step, step), uniform(rng, 0.5, step)});
  return p;
}

inline FiberSet random_fibers(Rng& rng, std::size_t count, std::size_t min_points = 2, std::size_t max_points = 30) {
  FiberSet out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back({random_walk(rng, static_cast<std::size_t>(uniform_int(rng, int(min_points), int(max_points)))), {}});
  return out;
}

inline Points straight(Vec3 start, Vec3 step, std::size_t n) {
  Points p;
  for (std::size_t i = 0; i < n; ++i) p.push_back(start + step * double(i));
  return p;
}

/// Random row-stochastic matrix with strictly positive entries.
template <class Matrix>
Matrix random_stochastic(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < cols; ++j) s += m(i, j) = uniform(rng, 0.01, 1.0);
    for (int j = 0; j < cols; ++j) m(i, j) /= s;
  }
  return m;
}

}  // namespace dfc::test

#include "dfc/anatomy.hpp"
#include "dfc/metrics.hpp"

namespace dfc::test {

/// Random clustering of random 14-point fibers, with occasional outliers.
struct ClusterInstance {
  ResampledSet fibers{14};
  std::vector<Points> points;
  ClusterResult result;
  std::vector<RegionSet> regions;
  std::vector<RegionSet> tap;
};

inline ClusterInstance random_instance(Rng& rng, int n, int k, double outlier_rate = 0.1) {
  ClusterInstance inst;
  inst.result.k = k;
  // Cluster seeds so members share a rough shape.
  std::vector<Points> seeds;
  for (int c = 0; c < k; ++c) seeds.push_back(resample(random_walk(rng, 10, 6.0), 14));
  for (int i = 0; i < n; ++i) {
    const int c = uniform_int(rng, 0, k - 1);
    Points p = seeds[std::size_t(c)];
    for (Vec3& q : p) q = q + Vec3{uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2)};
    if (uniform(rng, 0, 1) < 0.5) p = flip(p);
    inst.fibers.push_back(p);
    inst.points.push_back(p);
    inst.result.cluster.push_back(c);
    inst.result.outlier.push_back(uniform(rng, 0, 1) < outlier_rate);
    std::vector<std::int32_t> labels;
    for (int r = uniform_int(rng, 0, 4); r > 0; --r) labels.push_back(uniform_int(rng, 1, 9));
    inst.regions.push_back(RegionSet::from_labels(labels));
  }
  for (int c = 0; c < k; ++c) {
    std::vector<std::int32_t> labels;
    for (int r = uniform_int(rng, 0, 4); r > 0; --r) labels.push_back(uniform_int(rng, 1, 9));
    inst.tap.push_back(RegionSet::from_labels(labels));
  }
  return inst;
}

}  // namespace dfc::test
