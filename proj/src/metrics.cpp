#include "dfc/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "dfc/error.hpp"
#include "dfc/parallel.hpp"

namespace dfc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_pointwise(std::span<const Vec3> a, std::span<const Vec3> b, bool reversed) {
  const std::size_t n = a.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += distance(a[i], reversed ? b[n - 1 - i] : b[i]);
  return s / static_cast<double>(n);
}

}  // namespace

void ClusterResult::validate() const {
  if (k < 1) throw ValidationError("cluster result needs k >= 1");
  if (outlier.size() != cluster.size()) throw ValidationError("cluster and outlier arrays differ in length");
  for (int c : cluster)
    if (c < 0 || c >= k) throw ValidationError("cluster id " + std::to_string(c) + " outside [0, k)");
}

std::vector<std::vector<std::size_t>> ClusterResult::members() const {
  validate();
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < cluster.size(); ++i)
    if (!outlier[i]) out[static_cast<std::size_t>(cluster[i])].push_back(i);
  return out;
}

Points aligned_centroid(const ResampledSet& fibers, const std::vector<std::size_t>& members) {
  if (members.empty()) return {};
  const std::size_t n = fibers.n_points();
  const auto ref = fibers[members.front()];
  Points sum(n);
  for (std::size_t m : members) {
    const auto f = fibers[m];
    const bool reversed = mean_pointwise(ref, f, true) < mean_pointwise(ref, f, false);
    for (std::size_t i = 0; i < n; ++i) sum[i] = sum[i] + (reversed ? f[n - 1 - i] : f[i]);
  }
  for (Vec3& p : sum) p = p / static_cast<double>(members.size());
  return sum;
}

DBReport db_index(const ClusterResult& result, const ResampledSet& fibers, unsigned workers) {
  if (result.size() != fibers.size()) throw ValidationError("db_index: cluster result and fiber count differ");
  const auto members = result.members();
  const std::size_t k = members.size();

  DBReport r;
  r.alpha.assign(k, kNaN);
  r.centroids.resize(k);
  for (std::size_t c = 0; c < k; ++c)
    (members[c].size() >= 2 ? r.included : r.excluded).push_back(static_cast<int>(c));

  parallel_for(r.included.size(), workers, [&](std::size_t t) {
    const auto c = static_cast<std::size_t>(r.included[t]);
    const auto& m = members[c];
    double s = 0.0;
    for (std::size_t a = 0; a < m.size(); ++a)
      for (std::size_t b = a + 1; b < m.size(); ++b) s += mdf(fibers[m[a]], fibers[m[b]]);
    r.alpha[c] = s / (static_cast<double>(m.size()) * static_cast<double>(m.size() - 1) / 2.0);
    r.centroids[c] = aligned_centroid(fibers, m);
  });

  const std::size_t n = r.included.size();
  r.centroid_distance = DistanceMatrix(n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      r.centroid_distance.set(a, b, mdf(r.centroids[static_cast<std::size_t>(r.included[a])],
                                        r.centroids[static_cast<std::size_t>(r.included[b])]));
  if (n < 2) {
    r.db = kNaN;
    return r;
  }
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    double worst = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      const double ratio = (r.alpha[static_cast<std::size_t>(r.included[a])] +
                            r.alpha[static_cast<std::size_t>(r.included[b])]) /
                           r.centroid_distance(a, b);
      worst = std::max(worst, ratio);
    }
    total += worst;
  }
  r.db = total / static_cast<double>(n);
  return r;
}

double wmpg(const std::vector<ClusterResult>& subjects, int k) {
  if (subjects.empty()) throw ValidationError("wmpg needs at least one subject");
  if (k < 1) throw ValidationError("wmpg needs k >= 1");
  double total = 0.0;
  for (const ClusterResult& s : subjects) {
    if (s.k != k) throw ValidationError("wmpg: subject cluster count differs from k");
    std::size_t detected = 0;
    for (const auto& m : s.members())
      if (m.size() > kDetectionThreshold) ++detected;
    total += static_cast<double>(detected) / k;
  }
  return total / static_cast<double>(subjects.size());
}

TAPCReport tapc(const ClusterResult& result, const std::vector<RegionSet>& fiber_regions,
                const std::vector<RegionSet>& atlas_tap) {
  if (fiber_regions.size() != result.size()) throw ValidationError("tapc: region sets and fiber count differ");
  if (atlas_tap.size() != static_cast<std::size_t>(result.k))
    throw ValidationError("tapc: atlas profile count differs from k");
  const auto members = result.members();
  TAPCReport r;
  r.per_cluster.assign(members.size(), kNaN);
  double total = 0.0;
  std::size_t nonempty = 0;
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (members[c].empty()) continue;
    double s = 0.0;
    for (std::size_t f : members[c]) s += dice(fiber_regions[f], atlas_tap[c]);
    r.per_cluster[c] = s / static_cast<double>(members[c].size());
    total += r.per_cluster[c];
    ++nonempty;
  }
  r.score = nonempty == 0 ? kNaN : total / static_cast<double>(nonempty);
  return r;
}

void MetricsReport::add(std::string key, std::string value) { entries_.emplace_back(std::move(key), std::move(value)); }

void MetricsReport::add(std::string key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", value);
  add(std::move(key), std::string(buf));
}

void MetricsReport::add(std::string key, long long value) { add(std::move(key), std::to_string(value)); }

std::string MetricsReport::str() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

}  // namespace dfc
