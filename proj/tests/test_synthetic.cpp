#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "dfc/anatomy.hpp"
#include "dfc/error.hpp"
#include "dfc/synthetic.hpp"
#include "support.hpp"

using namespace dfc;
using dfc::test::Rng;

namespace {

SynthConfig small(std::uint64_t seed) {
  SynthConfig c;
  c.bundles = 5;
  c.fibers_per_bundle = 20;
  c.outliers = 10;
  c.seed = seed;
  return c;
}

/// Hubert-Arabie ARI from explicit pair counts.
double ari_by_pairs(const std::vector<int>& a, const std::vector<int>& b) {
  double same_both = 0, same_a = 0, same_b = 0, neither = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      if (sa && sb) ++same_both;
      else if (sa) ++same_a;
      else if (sb) ++same_b;
      else ++neither;
    }
  const double num = 2.0 * (same_both * neither - same_a * same_b);
  const double den = (same_both + same_a) * (same_a + neither) + (same_both + same_b) * (same_b + neither);
  return den == 0.0 ? 1.0 : num / den;
}

double assignment_cost(const std::vector<std::vector<double>>& cost, const std::vector<int>& cols) {
  double s = 0.0;
  for (std::size_t r = 0; r < cols.size(); ++r) s += cost[r][std::size_t(cols[r])];
  return s;
}

}  // namespace

TEST_CASE("generate: deterministic for a seed") {
  const SynthData a = generate(small(3)), b = generate(small(3)), c = generate(small(4));
  CHECK(a.fibers == b.fibers);
  CHECK(a.truth.bundle == b.truth.bundle);
  CHECK(a.truth.outlier == b.truth.outlier);
  CHECK(a.volume == b.volume);
  CHECK(a.fibers != c.fibers);
  CHECK(a.fibers.size() == 110);
  CHECK(std::count(a.truth.outlier.begin(), a.truth.outlier.end(), true) == 10);
  for (std::size_t i = 0; i < a.fibers.size(); ++i) CHECK((a.truth.bundle[i] < 0) == a.truth.outlier[i]);
}

TEST_CASE("generate: no noise and no flips gives identical bundle members") {
  SynthConfig c = small(5);
  c.sigma = 0.0;
  c.flip_probability = 0.0;
  c.outliers = 0;
  const SynthData d = generate(c);
  for (std::size_t i = 0; i < d.fibers.size(); ++i) {
    const std::size_t first = std::size_t(d.truth.bundle[i]) * 20;
    CHECK(d.fibers[i].points == d.fibers[first].points);
  }
  const ResampledSet rs = ResampledSet::from_fibers(d.fibers, 14);
  for (std::size_t i = 0; i < rs.size(); ++i)
    for (std::size_t j = 0; j < rs.size(); ++j)
      if (d.truth.bundle[i] == d.truth.bundle[j]) CHECK(mdf(rs[i], rs[j]) == 0.0);
}

TEST_CASE("generate: flip probability does not change within-bundle MDF") {
  SynthConfig c = small(6);
  c.flip_probability = 0.0;
  const SynthData forward = generate(c);
  c.flip_probability = 1.0;
  const SynthData reversed = generate(c);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(reversed.fibers[i].points == flip(forward.fibers[i].points));
    for (std::size_t j = 0; j < 100; ++j)
      if (forward.truth.bundle[i] == forward.truth.bundle[j])
        CHECK(mdf(forward.fibers[i].points, forward.fibers[j].points) ==
              mdf(reversed.fibers[i].points, reversed.fibers[j].points));
  }
}

TEST_CASE("generate: default bundles are MDF-separable") {
  SynthConfig c;
  c.seed = 1;
  const SynthData d = generate(c);
  REQUIRE(d.fibers.size() == 2100);
  std::vector<std::size_t> inliers;
  for (std::size_t i = 0; i < d.fibers.size(); ++i)
    if (!d.truth.outlier[i]) inliers.push_back(i);
  const ResampledSet rs = ResampledSet::from_fibers(d.fibers, 14);
  double max_intra = 0.0, min_inter = 1e300;
  for (std::size_t a = 0; a < inliers.size(); ++a)
    for (std::size_t b = a + 1; b < inliers.size(); ++b) {
      const std::size_t i = inliers[a], j = inliers[b];
      const double m = mdf(rs[i], rs[j]);
      if (d.truth.bundle[i] == d.truth.bundle[j]) max_intra = std::max(max_intra, m);
      else min_inter = std::min(min_inter, m);
    }
  MESSAGE("max intra-bundle MDF " << max_intra << ", min inter-bundle MDF " << min_inter);
  CHECK(max_intra < min_inter);
}

TEST_CASE("generate: label volume is consistent with the bundles") {
  SynthConfig c;
  c.seed = 2;
  const SynthData d = generate(c);
  const ResampledSet rs = ResampledSet::from_fibers(d.fibers, 14);
  for (int b = 0; b < c.bundles; ++b) {
    std::vector<RegionSet> sets;
    for (std::size_t i = 0; i < d.fibers.size(); ++i)
      if (d.truth.bundle[i] == b) sets.push_back(fiber_regions(rs[i], d.volume));
    CHECK(compute_tap(sets).contains(b + 1));
    CHECK(std::all_of(sets.begin(), sets.end(), [&](const RegionSet& s) { return s.contains(b + 1); }));
  }
}

TEST_CASE("generate: configuration errors") {
  SynthConfig tight;
  tight.box = 20.0;
  tight.max_attempts = 200;
  CHECK_THROWS_AS(generate(tight), ValidationError);
  SynthConfig bad;
  bad.sigma = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = SynthConfig{};
  bad.flip_probability = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = SynthConfig{};
  bad.bundles = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("bezier") {
  const Points line{{0, 0, 0}, {3, 0, 0}};
  CHECK(bezier(line, 0.5) == Vec3{1.5, 0, 0});
  const Points cubic{{0, 0, 0}, {1, 2, 0}, {3, 2, 1}, {4, 0, 0}};
  CHECK(bezier(cubic, 0.0) == cubic.front());
  CHECK(bezier(cubic, 1.0) == cubic.back());
  // B(1/2) = (P0 + 3 P1 + 3 P2 + P3) / 8.
  const Vec3 mid = bezier(cubic, 0.5);
  CHECK(mid.x == doctest::Approx(2.0));
  CHECK(mid.y == doctest::Approx(1.5));
  CHECK(mid.z == doctest::Approx(0.375));
}

TEST_CASE("hungarian: matches brute force over permutations") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = test::uniform_int(rng, 1, 5), cols = test::uniform_int(rng, rows, 6);
    std::vector<std::vector<double>> cost(static_cast<std::size_t>(rows), std::vector<double>(static_cast<std::size_t>(cols)));
    for (auto& r : cost)
      for (double& v : r) v = test::uniform_int(rng, 0, 9);
    const auto got = hungarian(cost);
    std::vector<int> perm(static_cast<std::size_t>(cols));
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      best = std::min(best, assignment_cost(cost, std::vector<int>(perm.begin(), perm.begin() + rows)));
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(assignment_cost(cost, got) == best);
    std::vector<int> sorted = got;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  }
}

TEST_CASE("adjusted Rand index: pair-counting oracle and chance level") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = test::uniform_int(rng, 2, 60);
    std::vector<int> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      a[std::size_t(i)] = test::uniform_int(rng, 0, 4);
      b[std::size_t(i)] = test::uniform_int(rng, 0, 3);
    }
    CHECK(adjusted_rand_index(a, b) == doctest::Approx(ari_by_pairs(a, b)).epsilon(1e-12));
    CHECK(adjusted_rand_index(a, a) == doctest::Approx(1.0));
  }
  std::vector<int> truth, random;
  for (int i = 0; i < 20000; ++i) {
    truth.push_back(i % 20);
    random.push_back(test::uniform_int(rng, 0, 19));
  }
  CHECK(std::abs(adjusted_rand_index(truth, random)) < 0.01);
}

TEST_CASE("match_clusters") {
  GroundTruth t;
  t.bundle = {0, 0, 1, 1, 2, 2, -1, -1};
  t.outlier = {false, false, false, false, false, false, true, true};
  const std::vector<bool> none(8, false);

  const MatchReport exact = match_clusters({3, {0, 0, 1, 1, 2, 2, 0, 1}, none}, t);
  CHECK(exact.accuracy == 1.0);
  CHECK(exact.ari == doctest::Approx(1.0));

  const MatchReport permuted = match_clusters({3, {2, 2, 0, 0, 1, 1, 1, 1}, none}, t);
  CHECK(permuted.accuracy == 1.0);
  CHECK(permuted.cluster_to_bundle == std::vector<int>{1, 2, 0});

  const std::vector<bool> flags{false, true, false, false, false, false, true, false};
  const MatchReport scored = match_clusters({3, {0, 0, 1, 1, 2, 0, 0, 1}, flags}, t);
  CHECK(scored.accuracy == doctest::Approx(5.0 / 6.0));
  CHECK(scored.outlier_precision == 0.5);
  CHECK(scored.outlier_recall == 0.5);
  CHECK(scored.inlier_rejection == doctest::Approx(1.0 / 6.0));
}
