#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "dfc/error.hpp"
#include "dfc/tract_io.hpp"
#include "support.hpp"

using namespace dfc;
using dfc::test::Rng;

namespace {

/// Coordinates exactly representable in f32.
FiberSet f32_fibers(Rng& rng, std::size_t count) {
  FiberSet fibers = test::random_fibers(rng, count);
  for (auto& f : fibers)
    for (auto& p : f.points)
      for (std::size_t c = 0; c < 3; ++c) p[c] = double(float(p[c]));
  return fibers;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dfc_test_tract_io_" + name);
}

}  // namespace

TEST_CASE("binary fibers round-trip bit-exactly") {
  Rng rng(1);
  const FiberSet two = f32_fibers(rng, 2);
  CHECK(read_fibers_binary(write_fibers_binary(two)) == two);
  const FiberSet many = f32_fibers(rng, 200);
  CHECK(read_fibers_binary(write_fibers_binary(many)) == many);
  CHECK(read_fibers_binary(write_fibers_binary({})).empty());
}

TEST_CASE("binary fibers: bad magic") {
  Rng rng(1);
  auto bytes = write_fibers_binary(f32_fibers(rng, 2));
  std::memcpy(bytes.data(), "XXXX", 4);
  try {
    read_fibers_binary(bytes);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()) == "bad magic at offset 0");
    CHECK(e.offset() == 0);
  }
}

TEST_CASE("binary fibers: one-point fiber is rejected") {
  FiberSet bad{{{{1, 2, 3}}, {}}};
  CHECK_THROWS_AS(write_fibers_binary(bad), ValidationError);
  // Hand-built file with a single-point fiber.
  auto bytes = write_fibers_binary({{{{0, 0, 0}, {1, 1, 1}}, {}}});
  const std::uint32_t one = 1;
  std::memcpy(bytes.data() + 12, &one, 4);
  bytes.resize(bytes.size() - 12);
  CHECK_THROWS_AS(read_fibers_binary(bytes), ParseError);
}

TEST_CASE("binary fibers: every truncation fails cleanly") {
  Rng rng(7);
  const auto bytes = write_fibers_binary(f32_fibers(rng, 5));
  for (std::size_t len = 0; len < bytes.size(); ++len)
    CHECK_THROWS_AS(read_fibers_binary(std::span(bytes.data(), len)), ParseError);
  auto longer = bytes;
  longer.push_back(std::byte{0});
  CHECK_THROWS_AS(read_fibers_binary(longer), ParseError);
}

TEST_CASE("binary fibers: fuzzed headers never crash") {
  Rng rng(17);
  const auto bytes = write_fibers_binary(f32_fibers(rng, 4));
  for (int trial = 0; trial < 2000; ++trial) {
    auto copy = bytes;
    const int flips = test::uniform_int(rng, 1, 4);
    for (int f = 0; f < flips; ++f)
      copy[std::size_t(test::uniform_int(rng, 0, int(copy.size()) - 1))] = std::byte(test::uniform_int(rng, 0, 255));
    try {
      const FiberSet got = read_fibers_binary(copy);
      for (const auto& fib : got) CHECK(fib.points.size() >= 2);
    } catch (const ParseError&) {
    }
  }
}

TEST_CASE("binary fibers: unsupported version and non-finite coordinates") {
  auto bytes = write_fibers_binary({{{{0, 0, 0}, {1, 1, 1}}, {}}});
  auto versioned = bytes;
  const std::uint32_t v = 2;
  std::memcpy(versioned.data() + 4, &v, 4);
  CHECK_THROWS_AS(read_fibers_binary(versioned), ParseError);
  const float nan = std::nanf("");
  std::memcpy(bytes.data() + 16, &nan, 4);
  CHECK_THROWS_AS(read_fibers_binary(bytes), ParseError);
}

TEST_CASE("JSON fibers round-trip with ids") {
  Rng rng(2);
  FiberSet fibers = test::random_fibers(rng, 10);
  for (std::size_t i = 0; i < fibers.size(); ++i) fibers[i].id = std::int64_t(100 + i);
  CHECK(read_fibers_text(write_fibers_text(fibers)) == fibers);
  const FiberSet plain = read_fibers_text(R"({"fibers": [[[0,0,0],[1,2,3]]]})");
  REQUIRE(plain.size() == 1);
  CHECK(!plain[0].id);
  CHECK(plain[0].points[1] == Vec3{1, 2, 3});
  CHECK_THROWS_AS(read_fibers_text(R"({"fibers": [[[0,0,0]]]})"), ValidationError);
  CHECK_THROWS_AS(read_fibers_text(R"({"fibers": [[[0,0,0],[1,2)"), ParseError);
  CHECK_THROWS_AS(read_fibers_text(R"({"tracts": []})"), ParseError);
}

TEST_CASE("fiber files: format chosen by extension and content") {
  Rng rng(3);
  const FiberSet fibers = f32_fibers(rng, 6);
  const auto bin = temp_path("a.fibs"), json = temp_path("a.json");
  write_fiberset(fibers, bin);
  write_fiberset(fibers, json);
  CHECK(read_fiberset(bin) == fibers);
  CHECK(read_fiberset(json) == fibers);
  std::filesystem::remove(bin);
  std::filesystem::remove(json);
  CHECK_THROWS_AS(read_fiberset(temp_path("missing")), Error);
}

TEST_CASE("label volume round-trip and validation") {
  LabelVolume v;
  v.dims = {2, 2, 2};
  v.origin = {-1.5, 0.25, 4};
  v.spacing = {0.5, 1, 2};
  for (int i = 0; i < 8; ++i) v.labels.push_back(i);
  CHECK(read_labelvolume_bytes(write_labelvolume_bytes(v)) == v);

  auto bytes = write_labelvolume_bytes(v);
  bytes.resize(bytes.size() - 4);
  CHECK_THROWS_AS(read_labelvolume_bytes(bytes), ParseError);

  LabelVolume neg = v;
  neg.spacing.y = -1;
  CHECK_THROWS_AS(neg.validate(), ValidationError);
  CHECK_THROWS_AS(write_labelvolume_bytes(neg), ValidationError);
  auto raw = write_labelvolume_bytes(v);
  const float minus = -1.0f;
  std::memcpy(raw.data() + 4 + 4 + 12 + 12 + 4, &minus, 4);
  CHECK_THROWS_AS(read_labelvolume_bytes(raw), ValidationError);
}

TEST_CASE("label volume lookup uses the floor rule") {
  LabelVolume v;
  v.dims = {3, 1, 1};
  v.spacing = {1, 1, 1};
  v.labels = {4, 5, 6};
  CHECK(v.lookup({0.5, 0.5, 0.5}) == 4);
  CHECK(v.lookup({1.0, 0.0, 0.0}) == 5);
  CHECK(v.lookup({2.999, 0.2, 0.2}) == 6);
  CHECK(!v.lookup({3.0, 0.0, 0.0}));
  CHECK(!v.lookup({-0.001, 0.0, 0.0}));
}

TEST_CASE("length filter is strict") {
  const FiberSet fibers{{{{0, 0, 0}, {50, 0, 0}}, {}}, {{{0, 0, 0}, {40, 0, 0}}, {}}, {{{0, 0, 0}, {20, 0, 0}, {20, 21, 0}}, {}}};
  const FiberSet kept = filter_by_length(fibers, 40.0);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0] == fibers[0]);
  CHECK(kept[1] == fibers[2]);
  CHECK(filter_by_length({}, 40.0).empty());
}
