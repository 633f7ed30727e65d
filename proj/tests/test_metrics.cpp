#include <cmath>
#include <set>

#include "doctest.h"
#include "dfc/error.hpp"
#include "dfc/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dfc;
using dfc::test::Rng;

namespace {

std::vector<std::set<int>> as_sets(const std::vector<RegionSet>& v) {
  std::vector<std::set<int>> out;
  for (const auto& s : v) out.emplace_back(s.begin(), s.end());
  return out;
}

ClusterResult sized(const std::vector<int>& sizes, int k) {
  ClusterResult r;
  r.k = k;
  for (std::size_t c = 0; c < sizes.size(); ++c)
    for (int i = 0; i < sizes[c]; ++i) {
      r.cluster.push_back(int(c));
      r.outlier.push_back(false);
    }
  return r;
}

}  // namespace

TEST_CASE("db_index: hand-computed two-cluster case") {
  // Cluster 0: lines at y = 0 and y = 2 (alpha = 2, centroid y = 1).
  // Cluster 1: lines at y = 7 and y = 9 (alpha = 2, centroid y = 8).
  ResampledSet set(14);
  for (double y : {0.0, 2.0, 7.0, 9.0}) set.push_back(test::straight({0, y, 0}, {1, 0, 0}, 14));
  const ClusterResult r{2, {0, 0, 1, 1}, {false, false, false, false}};
  const DBReport rep = db_index(r, set);
  CHECK(rep.alpha[0] == doctest::Approx(2.0));
  CHECK(rep.alpha[1] == doctest::Approx(2.0));
  CHECK(rep.centroid_distance(0, 1) == doctest::Approx(7.0));
  CHECK(rep.db == doctest::Approx(4.0 / 7.0));
}

TEST_CASE("db_index: alpha 1, centroid distance 2 gives 1") {
  ResampledSet set(14);
  for (double y : {0.0, 1.0, 2.0, 3.0}) set.push_back(test::straight({0, y, 0}, {1, 0, 0}, 14));
  const DBReport rep = db_index({2, {0, 0, 1, 1}, std::vector<bool>(4, false)}, set);
  CHECK(rep.db == doctest::Approx(1.0));
}

TEST_CASE("db_index: duplicated fibers give 0; small clusters are excluded") {
  ResampledSet set(14);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 3; ++i) set.push_back(test::straight({0, 10.0 * c, 0}, {1, 0, 0}, 14));
  set.push_back(test::straight({50, 50, 50}, {1, 1, 0}, 14));
  const ClusterResult r{4, {0, 0, 0, 1, 1, 1, 2, 2, 2, 3}, std::vector<bool>(10, false)};
  const DBReport rep = db_index(r, set);
  CHECK(rep.db == 0.0);
  CHECK(rep.excluded == std::vector<int>{3});
  CHECK(std::isnan(rep.alpha[3]));

  const ClusterResult one{2, {0, 0, 0, 0, 0, 0, 0, 0, 0, 1}, std::vector<bool>(10, false)};
  CHECK(std::isnan(db_index(one, set).db));
}

TEST_CASE("db_index: flipped members do not cancel in the centroid") {
  ResampledSet set(14);
  const Points p = test::straight({0, 0, 0}, {2, 0, 0}, 14);
  set.push_back(p);
  set.push_back(flip(p));
  const Points c = aligned_centroid(set, {0, 1});
  for (std::size_t i = 0; i < 14; ++i) CHECK(distance(c[i], p[i]) <= 1e-12);
}

TEST_CASE("db_index: matches the brute-force oracle on random instances") {
  Rng rng(1);
  for (int trial = 0; trial < 60; ++trial) {
    const int k = test::uniform_int(rng, 2, 8);
    const auto inst = test::random_instance(rng, test::uniform_int(rng, 10, 200), k);
    const double got = db_index(inst.result, inst.fibers, unsigned(1 + trial % 3)).db;
    const double want = oracle::db_index(inst.points, inst.result.cluster, inst.result.outlier, k);
    if (std::isnan(want)) {
      CHECK(std::isnan(got));
    } else {
      CHECK(oracle::relative_error(got, want) <= 1e-12);
    }
  }
}

TEST_CASE("db_index: invariant to translation and relabeling") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = test::uniform_int(rng, 2, 6);
    auto inst = test::random_instance(rng, 80, k);
    const double base = db_index(inst.result, inst.fibers).db;

    ResampledSet moved(14);
    const Vec3 shift = test::random_point(rng, 100.0);
    for (std::size_t i = 0; i < inst.fibers.size(); ++i) {
      Points p(inst.fibers[i].begin(), inst.fibers[i].end());
      for (Vec3& q : p) q = q + shift;
      moved.push_back(p);
    }
    CHECK(oracle::relative_error(db_index(inst.result, moved).db, base) <= 1e-9);

    ClusterResult relabeled = inst.result;
    for (int& c : relabeled.cluster) c = k - 1 - c;
    CHECK(oracle::relative_error(db_index(relabeled, inst.fibers).db, base) <= 1e-12);
  }
}

TEST_CASE("wmpg") {
  CHECK(wmpg({sized({11, 11, 11, 11}, 4), sized({12, 11, 30, 11}, 4)}, 4) == 1.0);
  CHECK(wmpg({sized({11, 11, 11, 10}, 4)}, 4) == 0.75);
  CHECK(wmpg({sized({11, 0, 0, 0}, 4), sized({11, 11, 0, 0}, 4)}, 4) == 0.375);
  CHECK_THROWS_AS(wmpg({}, 4), ValidationError);

  // Outliers do not count towards detection.
  ClusterResult r = sized({11, 11}, 2);
  r.outlier[0] = true;
  CHECK(wmpg({r}, 2) == 0.5);
}

TEST_CASE("wmpg: property - adding fibers never lowers the score") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> sizes(5);
    for (int& s : sizes) s = test::uniform_int(rng, 0, 15);
    const double before = wmpg({sized(sizes, 5)}, 5);
    sizes[std::size_t(test::uniform_int(rng, 0, 4))] += test::uniform_int(rng, 1, 5);
    CHECK(wmpg({sized(sizes, 5)}, 5) >= before);
  }
}

TEST_CASE("tapc: closed forms") {
  const ClusterResult r{2, {0, 0, 1, 1}, std::vector<bool>(4, false)};
  const std::vector<RegionSet> tap{{1, 2}, {3}};
  CHECK(tapc(r, {{1, 2}, {1, 2}, {3}, {3}}, tap).score == 1.0);
  CHECK(tapc(r, {{}, {}, {}, {}}, tap).score == 0.0);
  // Cluster 0: dice({1,2},{1,2}) = 1 and dice({1},{1,2}) = 2/3 -> 5/6.
  // Cluster 1: dice({3,4},{3}) = 2/3 and dice({4},{3}) = 0 -> 1/3.
  const TAPCReport half = tapc(r, {{1, 2}, {1}, {3, 4}, {4}}, tap);
  CHECK(half.per_cluster[0] == doctest::Approx(5.0 / 6.0));
  CHECK(half.per_cluster[1] == doctest::Approx(1.0 / 3.0));
  CHECK(half.score == doctest::Approx(7.0 / 12.0));
}

TEST_CASE("tapc: matches the brute-force oracle and stays in [0, 1]") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = test::uniform_int(rng, 2, 8);
    const auto inst = test::random_instance(rng, test::uniform_int(rng, 5, 200), k);
    const double got = tapc(inst.result, inst.regions, inst.tap).score;
    const double want = oracle::tapc(as_sets(inst.regions), inst.result.cluster, inst.result.outlier, as_sets(inst.tap));
    CHECK(oracle::relative_error(got, want) <= 1e-12);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("cluster results validate ids") {
  const ClusterResult bad{2, {0, 2}, {false, false}};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  const ClusterResult mismatch{2, {0, 1}, {false}};
  CHECK_THROWS_AS(mismatch.validate(), ValidationError);
}

TEST_CASE("metrics report formatting") {
  MetricsReport r;
  r.add("db", 2.5);
  r.add("fibers", 2100LL);
  r.add("atlas_hash", std::string("abc"));
  CHECK(r.str() == "db=2.5\nfibers=2100\natlas_hash=abc\n");
}
