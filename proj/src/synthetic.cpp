#include "dfc/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>

#include "dfc/error.hpp"
#include "dfc/parallel.hpp"

namespace dfc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kTemplateSamples = 200;
constexpr std::size_t kSeparationPoints = 14;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Vec3 gaussian_vec(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> g(0.0, sigma);
  const double x = g(rng);
  const double y = g(rng);
  return {x, y, g(rng)};
}

std::vector<Vec3> random_controls(std::mt19937_64& rng, int count, double half) {
  std::uniform_real_distribution<double> u(-0.8 * half, 0.8 * half);
  std::vector<Vec3> cp(static_cast<std::size_t>(count));
  for (Vec3& p : cp) {
    p.x = u(rng);
    p.y = u(rng);
    p.z = u(rng);
  }
  return cp;
}

Points sample_curve(std::span<const Vec3> control, std::size_t n) {
  Points out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = bezier(control, static_cast<double>(i) / static_cast<double>(n - 1));
  return out;
}

Vec3 unit(Vec3 v) {
  const double l = norm(v);
  return l > 0.0 ? v / l : Vec3{1.0, 0.0, 0.0};
}

/// Tangent at sample i by central differences.
Vec3 tangent(const Points& c, std::size_t i) {
  const std::size_t a = i == 0 ? 0 : i - 1;
  const std::size_t b = std::min(i + 1, c.size() - 1);
  return unit(c[b] - c[a]);
}

/// Rodrigues rotation of v about unit axis k.
Vec3 rotate(Vec3 v, Vec3 k, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return v * c + cross(k, v) * s + k * (dot(k, v) * (1.0 - c));
}

double segment_distance(Vec3 p, Vec3 a, Vec3 b) {
  const Vec3 ab = b - a;
  const double len2 = dot(ab, ab);
  const double t = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
  return distance(p, a + ab * t);
}

LabelVolume rasterize(const std::vector<Points>& templates, const SynthConfig& cfg) {
  LabelVolume vol;
  const double half = cfg.box / 2.0;
  const auto side = static_cast<std::uint32_t>(std::ceil(cfg.box / cfg.voxel));
  vol.dims = {side, side, side};
  vol.origin = {-half, -half, -half};
  vol.spacing = {cfg.voxel, cfg.voxel, cfg.voxel};
  vol.labels.assign(vol.voxel_count(), 0);

  const double radius = std::max(3.0 * cfg.sigma, cfg.voxel);
  std::vector<double> best(vol.voxel_count(), std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < templates.size(); ++t) {
    const Points& c = templates[t];
    for (std::size_t s = 0; s + 1 < c.size(); ++s) {
      std::array<std::int64_t, 3> lo{};
      std::array<std::int64_t, 3> hi{};
      for (std::size_t a = 0; a < 3; ++a) {
        const double mn = std::min(c[s][a], c[s + 1][a]) - radius;
        const double mx = std::max(c[s][a], c[s + 1][a]) + radius;
        lo[a] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor((mn - vol.origin[a]) / cfg.voxel)));
        hi[a] = std::min<std::int64_t>(side - 1,
                                       static_cast<std::int64_t>(std::floor((mx - vol.origin[a]) / cfg.voxel)));
      }
      for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
        for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
          for (std::int64_t x = lo[0]; x <= hi[0]; ++x) {
            const Vec3 center{vol.origin[0] + (static_cast<double>(x) + 0.5) * cfg.voxel,
                              vol.origin[1] + (static_cast<double>(y) + 0.5) * cfg.voxel,
                              vol.origin[2] + (static_cast<double>(z) + 0.5) * cfg.voxel};
            const double d = segment_distance(center, c[s], c[s + 1]);
            if (d > radius) continue;
            const std::size_t idx = vol.index(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                                              static_cast<std::uint32_t>(z));
            if (d < best[idx]) {
              best[idx] = d;
              vol.labels[idx] = static_cast<std::int32_t>(t + 1);
            }
          }
    }
  }
  return vol;
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("synth config: " + m); };
  if (bundles < 1) fail("bundles must be at least 1");
  if (fibers_per_bundle < 1) fail("fibers_per_bundle must be at least 1");
  if (control_points < 2) fail("control_points must be at least 2");
  if (points_per_fiber < 2) fail("points_per_fiber must be at least 2");
  if (!(sigma >= 0.0)) fail("sigma must be >= 0");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) fail("flip_probability must lie in [0, 1]");
  if (outliers < 0) fail("outliers must be >= 0");
  if (!(box > 0.0) || !(voxel > 0.0)) fail("box and voxel must be positive");
  if (!(min_separation >= 0.0) || !(min_template_length >= 0.0)) fail("separation and length must be >= 0");
  if (max_attempts < 1) fail("max_attempts must be positive");
}

Vec3 bezier(std::span<const Vec3> control, double t) {
  std::vector<Vec3> p(control.begin(), control.end());
  for (std::size_t r = p.size(); r > 1; --r)
    for (std::size_t i = 0; i + 1 < r; ++i) p[i] = p[i] * (1.0 - t) + p[i + 1] * t;
  return p.front();
}

SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  const double half = cfg.box / 2.0;
  std::mt19937_64 rng(cfg.seed);

  SynthData data;
  std::vector<Points> sep;  // templates resampled for the separation test
  for (int b = 0; b < cfg.bundles; ++b) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const auto cp = random_controls(rng, cfg.control_points, half);
      Points curve = sample_curve(cp, kTemplateSamples);
      if (arc_length(curve) < cfg.min_template_length) continue;
      Points r = resample(curve, kSeparationPoints);
      if (std::all_of(sep.begin(), sep.end(), [&](const Points& o) { return mdf(r, o) > cfg.min_separation; })) {
        data.templates.push_back(std::move(curve));
        sep.push_back(std::move(r));
        placed = true;
      }
    }
    if (!placed)
      throw ValidationError("box too small for " + std::to_string(cfg.bundles) + " templates " +
                            std::to_string(cfg.min_separation) + " mm apart");
  }

  const auto fpb = static_cast<std::size_t>(cfg.fibers_per_bundle);
  const auto n_bundled = static_cast<std::size_t>(cfg.bundles) * fpb;
  const auto n_total = n_bundled + static_cast<std::size_t>(cfg.outliers);
  const auto ppf = static_cast<std::size_t>(cfg.points_per_fiber);
  data.fibers.resize(n_total);
  data.truth.bundle.assign(n_total, -1);
  data.truth.outlier.assign(n_total, false);

  // One sub-seed per bundle and per outlier, so generation order is free.
  parallel_for(static_cast<std::size_t>(cfg.bundles), default_workers(), [&](std::size_t b) {
    std::mt19937_64 brng(splitmix64(cfg.seed ^ splitmix64(b + 1)));
    std::bernoulli_distribution flip_coin(cfg.flip_probability);
    const Points base = resample(data.templates[b], ppf);
    for (std::size_t f = 0; f < fpb; ++f) {
      const Vec3 o0 = gaussian_vec(brng, cfg.sigma);
      const Vec3 o1 = gaussian_vec(brng, cfg.sigma);
      Points pts(ppf);
      for (std::size_t i = 0; i < ppf; ++i) {
        const double w = static_cast<double>(i) / static_cast<double>(ppf - 1);
        const Vec3 t = tangent(base, i);
        Vec3 o = o0 * (1.0 - w) + o1 * w;
        o = o - t * dot(o, t);
        pts[i] = base[i] + o;
      }
      if (flip_coin(brng)) std::reverse(pts.begin(), pts.end());
      const std::size_t idx = b * fpb + f;
      data.fibers[idx].points = std::move(pts);
      data.fibers[idx].id = static_cast<std::int64_t>(idx);
      data.truth.bundle[idx] = static_cast<int>(b);
    }
  });

  parallel_for(static_cast<std::size_t>(cfg.outliers), default_workers(), [&](std::size_t o) {
    std::mt19937_64 orng(splitmix64(cfg.seed ^ splitmix64(0x6f75746c696572ULL + o)));
    Points curve;
    do {
      curve = sample_curve(random_controls(orng, cfg.control_points, half), ppf);
    } while (arc_length(curve) < cfg.min_template_length);
    std::uniform_int_distribution<std::size_t> at(ppf * 3 / 10, ppf * 7 / 10);
    std::uniform_real_distribution<double> angle(std::numbers::pi / 3.0, 2.0 * std::numbers::pi / 3.0);
    const std::size_t kink = at(orng);
    const Vec3 axis = unit(gaussian_vec(orng, 1.0));
    const double a = angle(orng);
    for (std::size_t i = kink + 1; i < ppf; ++i) curve[i] = curve[kink] + rotate(curve[i] - curve[kink], axis, a);
    const std::size_t idx = n_bundled + o;
    data.fibers[idx].points = std::move(curve);
    data.fibers[idx].id = static_cast<std::int64_t>(idx);
    data.truth.outlier[idx] = true;
  });

  data.volume = rasterize(data.templates, cfg);
  return data;
}

std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const std::size_t m = cost.front().size();
  if (m < n) throw ValidationError("hungarian: more rows than columns");
  // Shortest augmenting path with potentials, 1-based with a sentinel column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) assignment[p[j] - 1] = static_cast<int>(j - 1);
  return assignment;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw ValidationError("adjusted_rand_index: label arrays differ in length");
  const auto n = static_cast<double>(a.size());
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [key, v] : table) index += c2(v);
  for (const auto& [key, v] : rows) sa += c2(v);
  for (const auto& [key, v] : cols) sb += c2(v);
  const double expected = n < 2 ? 0.0 : sa * sb / c2(n);
  const double max_index = (sa + sb) / 2.0;
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

MatchReport match_clusters(const ClusterResult& predicted, const GroundTruth& truth) {
  predicted.validate();
  if (predicted.size() != truth.size()) throw ValidationError("match_clusters: sizes differ");
  int n_bundles = 0;
  for (int b : truth.bundle) n_bundles = std::max(n_bundles, b + 1);

  MatchReport r;
  std::vector<int> pred, gt;
  std::size_t flagged = 0, flagged_outliers = 0, outliers = 0, flagged_inliers = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool is_out = truth.outlier[i];
    outliers += is_out;
    flagged += predicted.outlier[i];
    flagged_outliers += is_out && predicted.outlier[i];
    if (!is_out) {
      flagged_inliers += predicted.outlier[i];
      pred.push_back(predicted.cluster[i]);
      gt.push_back(truth.bundle[i]);
    }
  }
  r.outlier_precision = flagged == 0 ? kNaN : static_cast<double>(flagged_outliers) / static_cast<double>(flagged);
  r.outlier_recall = outliers == 0 ? kNaN : static_cast<double>(flagged_outliers) / static_cast<double>(outliers);
  r.inlier_rejection = pred.empty() ? 0.0 : static_cast<double>(flagged_inliers) / static_cast<double>(pred.size());
  if (pred.empty()) {
    r.accuracy = kNaN;
    r.ari = kNaN;
    return r;
  }

  // Square the count table so either side may be larger.
  const auto side = static_cast<std::size_t>(std::max(predicted.k, n_bundles));
  std::vector<std::vector<double>> cost(side, std::vector<double>(side, 0.0));
  for (std::size_t i = 0; i < pred.size(); ++i)
    cost[static_cast<std::size_t>(pred[i])][static_cast<std::size_t>(gt[i])] -= 1.0;
  const auto assign = hungarian(cost);
  double matched = 0.0;
  r.cluster_to_bundle.assign(static_cast<std::size_t>(predicted.k), -1);
  for (int c = 0; c < predicted.k; ++c) {
    const int b = assign[static_cast<std::size_t>(c)];
    matched -= cost[static_cast<std::size_t>(c)][static_cast<std::size_t>(b)];
    if (b < n_bundles) r.cluster_to_bundle[static_cast<std::size_t>(c)] = b;
  }
  r.accuracy = matched / static_cast<double>(pred.size());
  r.ari = adjusted_rand_index(pred, gt);
  return r;
}

}  // namespace dfc
