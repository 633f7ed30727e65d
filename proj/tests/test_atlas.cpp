#include <filesystem>

#include <json.hpp>

#include "doctest.h"
#include "dfc/atlas.hpp"
#include "dfc/error.hpp"
#include "dfc/train.hpp"
#include "support.hpp"

using namespace dfc;
using dfc::test::Rng;

namespace {

Atlas random_atlas(std::uint64_t seed, int k = 4) {
  Rng rng(seed);
  Atlas a;
  a.stage = AtlasStage::clustered;
  a.encoder = to_named_arrays(nn::init_encoder_params(a.encoder_config, seed));
  a.centroids.name = "centroids";
  a.centroids.shape = {std::size_t(k), 10};
  for (int i = 0; i < k * 10; ++i) a.centroids.data.push_back(float(test::uniform(rng, -2, 2)));
  for (int j = 0; j < k; ++j) a.tap.push_back(RegionSet{j + 1, j + 2});
  a.normalization = {{1.5, -2.0, 3.25}, 42.0};
  a.hyper.k = k;
  a.hyper.h_effective = 0.6;
  a.hyper.seed = seed;
  a.validate();
  return a;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dfc_test_atlas_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

LabelVolume coarse_volume() {
  LabelVolume v;
  v.dims = {4, 4, 4};
  v.origin = {-100, -100, -100};
  v.spacing = {50, 50, 50};
  for (int i = 0; i < 64; ++i) v.labels.push_back(i % 6);
  return v;
}

}  // namespace

TEST_CASE("atlas serializes and deserializes to an equal value") {
  const Atlas a = random_atlas(1);
  const auto files = serialize_atlas(a);
  CHECK(files.count("manifest.json") == 1);
  CHECK(files.count("centroids.f32") == 1);
  CHECK(deserialize_atlas(files) == a);
  CHECK(serialize_atlas(deserialize_atlas(files)) == files);
}

TEST_CASE("atlas directory round-trip preserves inference bit-exactly") {
  const Atlas a = random_atlas(2);
  const auto dir = temp_dir("roundtrip");
  write_atlas(a, dir);
  const Atlas b = read_atlas(dir);
  CHECK(b == a);
  CHECK(atlas_hash(b) == atlas_hash(a));
  Rng rng(2);
  const FiberSet fibers = test::random_fibers(rng, 50, 5, 30);
  const LabelVolume volume = coarse_volume();
  const Inference x = infer(fibers, a, &volume), y = infer(fibers, b, &volume);
  CHECK(x.embeddings == y.embeddings);
  CHECK(x.assignment.q == y.assignment.q);
  CHECK(x.outlier == y.outlier);
  std::filesystem::remove_all(dir);
}

TEST_CASE("atlas hash") {
  const Atlas a = random_atlas(3);
  const std::string h = atlas_hash(a);
  CHECK(h.size() == 64);
  CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(atlas_hash(random_atlas(3)) == h);
  Atlas b = a;
  b.centroids.data[5] += 1.0f;
  CHECK(atlas_hash(b) != h);
}

TEST_CASE("atlas version and validation errors") {
  const Atlas a = random_atlas(4);
  auto files = serialize_atlas(a);
  auto& manifest_bytes = files.at("manifest.json");
  auto manifest = nlohmann::json::parse(std::string(reinterpret_cast<const char*>(manifest_bytes.data()), manifest_bytes.size()));
  manifest["version"] = 99;
  const std::string text = manifest.dump(2);
  manifest_bytes.assign(reinterpret_cast<const std::byte*>(text.data()), reinterpret_cast<const std::byte*>(text.data() + text.size()));
  try {
    deserialize_atlas(files);
    FAIL("expected a version error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("unsupported atlas version") != std::string::npos);
  }

  Atlas wrong_dim = a;
  wrong_dim.centroids.shape = {4, 9};
  wrong_dim.centroids.data.resize(36);
  CHECK_THROWS_AS(wrong_dim.validate(), ValidationError);

  Atlas wrong_tap = a;
  wrong_tap.tap.pop_back();
  CHECK_THROWS_AS(wrong_tap.validate(), ValidationError);

  Atlas pretrained = a;
  pretrained.stage = AtlasStage::pretrained;
  CHECK_THROWS_AS(pretrained.validate(), ValidationError);

  auto missing = serialize_atlas(a);
  missing.erase("fc.weight.f32");
  CHECK_THROWS_AS(deserialize_atlas(missing), ValidationError);

  auto truncated = serialize_atlas(a);
  truncated.at("centroids.f32").pop_back();
  CHECK_THROWS_AS(deserialize_atlas(truncated), Error);
}

TEST_CASE("encoder parameters survive f32 storage") {
  const nn::ParamStore p = nn::init_encoder_params(nn::EncoderConfig{}, 5);
  const Atlas a = random_atlas(5);
  const nn::ParamStore q = encoder_params(a);
  REQUIRE(q.size() == p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(q[i].name == p[i].name);
    for (std::size_t j = 0; j < p[i].size(); ++j) CHECK(q[i].value[j] == double(float(p[i].value[j])));
  }
}
