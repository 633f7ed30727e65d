#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dfc/anatomy.hpp"
#include "dfc/geometry.hpp"
#include "dfc/nn.hpp"

namespace dfc {

// An atlas is a directory holding manifest.json plus one raw little-endian
// f32 file per array ("<name>.f32"), referenced from the manifest by name.
inline constexpr int kAtlasFormatVersion = 1;
inline constexpr const char* kAtlasManifest = "manifest.json";

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t element_count() const;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct AtlasHyperparameters {
  int k = 0;
  int n_points = 14;
  double h = 0.015;            // threshold as configured
  double h_effective = 0.015;  // threshold applied at inference
  double lambda = 0.1;
  double tap_fraction = kTapFraction;
  bool anatomy = true;
  bool outlier_removal = true;
  std::uint64_t seed = 0;

  friend bool operator==(const AtlasHyperparameters&, const AtlasHyperparameters&) = default;
};

enum class AtlasStage { pretrained, clustered };

struct Atlas {
  AtlasStage stage = AtlasStage::clustered;
  nn::EncoderConfig encoder_config;
  std::vector<NamedArray> encoder;  // in ParamStore order
  NamedArray centroids;             // k x embedding_dim; empty when pretrained
  std::vector<RegionSet> tap;       // one per cluster
  Normalization normalization;
  AtlasHyperparameters hyper;

  /// Throws ValidationError when shapes or counts are inconsistent.
  void validate() const;

  friend bool operator==(const Atlas& a, const Atlas& b);
};

/// File name -> contents, exactly as written to disk.
std::map<std::string, std::vector<std::byte>> serialize_atlas(const Atlas& atlas);
Atlas deserialize_atlas(const std::map<std::string, std::vector<std::byte>>& files);

void write_atlas(const Atlas& atlas, const std::filesystem::path& dir);
Atlas read_atlas(const std::filesystem::path& dir);

/// SHA-256 (hex) over the manifest followed by every array file in manifest
/// order.
std::string atlas_hash(const Atlas& atlas);

/// Parameters rounded to f32 storage precision.
std::vector<NamedArray> to_named_arrays(const nn::ParamStore& params);
/// Encoder parameters (fresh optimizer state) from atlas arrays.
nn::ParamStore encoder_params(const Atlas& atlas);

}  // namespace dfc
