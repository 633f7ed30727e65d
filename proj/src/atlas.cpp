#include "dfc/atlas.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "binary.hpp"
#include "dfc/error.hpp"
#include "dfc/tract_io.hpp"

namespace dfc {

namespace {

using nlohmann::json;

std::string array_file(const std::string& name) { return name + ".f32"; }

const char* stage_name(AtlasStage s) { return s == AtlasStage::pretrained ? "pretrained" : "clustered"; }

AtlasStage parse_stage(const std::string& s) {
  if (s == "pretrained") return AtlasStage::pretrained;
  if (s == "clustered") return AtlasStage::clustered;
  throw ValidationError("unknown atlas stage \"" + s + "\"");
}

std::vector<std::byte> encode_array(const NamedArray& a) {
  detail::ByteWriter out;
  for (float v : a.data) out.f32(v);
  return out.take();
}

NamedArray decode_array(const std::string& name, std::vector<std::size_t> shape,
                        const std::vector<std::byte>& bytes) {
  NamedArray a{name, std::move(shape), {}};
  const std::size_t n = a.element_count();
  detail::ByteReader in(bytes);
  in.require(n, 4, ("array " + name).c_str());
  a.data.resize(n);
  for (float& v : a.data) {
    const std::size_t at = in.offset();
    v = in.f32("array value");
    if (!std::isfinite(v)) throw ParseError("non-finite value in array " + name, at);
  }
  in.expect_end();
  return a;
}

template <class T>
T get_field(const json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("atlas manifest lacks \"") + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("atlas manifest field \"") + key + "\": " + e.what());
  }
}

std::string sha256_hex(std::span<const std::vector<std::byte>> parts) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("cannot allocate SHA-256 context");
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1;
  for (const auto& p : parts) ok = ok && EVP_DigestUpdate(ctx, p.data(), p.size()) == 1;
  ok = ok && EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

}  // namespace

std::size_t NamedArray::element_count() const {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void Atlas::validate() const {
  const auto shapes = nn::feature_shapes(encoder_config);
  const auto reference = nn::init_encoder_params(encoder_config, 0);
  if (encoder.size() != reference.size())
    throw ValidationError("atlas encoder has " + std::to_string(encoder.size()) + " arrays, expected " +
                          std::to_string(reference.size()));
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    if (encoder[i].name != reference[i].name || encoder[i].shape != reference[i].shape)
      throw ValidationError("atlas array " + encoder[i].name + " does not match the encoder layout");
    if (encoder[i].data.size() != encoder[i].element_count())
      throw ValidationError("atlas array " + encoder[i].name + " has the wrong element count");
  }
  if (!(normalization.scale > 0.0) || !std::isfinite(normalization.scale))
    throw ValidationError("atlas normalization scale must be positive");
  if (hyper.n_points < 2 || 2 * hyper.n_points != encoder_config.input_size)
    throw ValidationError("atlas point count does not match the encoder input size");

  if (stage == AtlasStage::pretrained) {
    if (!centroids.data.empty() || !tap.empty())
      throw ValidationError("pretrained atlas must not carry centroids or profiles");
    return;
  }
  const auto dim = static_cast<std::size_t>(encoder_config.embedding_dim);
  if (hyper.k < 2) throw ValidationError("atlas needs at least 2 clusters");
  if (centroids.shape.size() != 2 || centroids.shape[1] != dim)
    throw ValidationError("atlas centroid dimension must equal the embedding dimension (" +
                          std::to_string(dim) + ")");
  if (centroids.shape[0] != static_cast<std::size_t>(hyper.k) || centroids.data.size() != centroids.element_count())
    throw ValidationError("atlas centroid count does not match k");
  if (tap.size() != static_cast<std::size_t>(hyper.k))
    throw ValidationError("atlas must carry one anatomical profile per cluster");
  if (hyper.lambda < 0.0 || hyper.h < 0.0 || hyper.h_effective < 0.0)
    throw ValidationError("atlas hyperparameters out of range");
}

bool operator==(const Atlas& a, const Atlas& b) {
  const auto& ca = a.encoder_config;
  const auto& cb = b.encoder_config;
  bool same_config = ca.input_size == cb.input_size && ca.input_channels == cb.input_channels &&
                     ca.embedding_dim == cb.embedding_dim && ca.convs.size() == cb.convs.size();
  for (std::size_t i = 0; same_config && i < ca.convs.size(); ++i) {
    same_config = ca.convs[i].out_channels == cb.convs[i].out_channels &&
                  ca.convs[i].kernel == cb.convs[i].kernel && ca.convs[i].stride == cb.convs[i].stride &&
                  ca.convs[i].pad == cb.convs[i].pad;
  }
  return same_config && a.stage == b.stage && a.encoder == b.encoder && a.centroids == b.centroids &&
         a.tap == b.tap && a.normalization == b.normalization && a.hyper == b.hyper;
}

std::map<std::string, std::vector<std::byte>> serialize_atlas(const Atlas& atlas) {
  atlas.validate();
  std::map<std::string, std::vector<std::byte>> files;

  json manifest;
  manifest["format"] = "dfc-atlas";
  manifest["version"] = kAtlasFormatVersion;
  manifest["stage"] = stage_name(atlas.stage);

  const auto& h = atlas.hyper;
  manifest["hyperparameters"] = {{"k", h.k},
                                 {"n_points", h.n_points},
                                 {"h", h.h},
                                 {"h_effective", h.h_effective},
                                 {"lambda", h.lambda},
                                 {"tap_fraction", h.tap_fraction},
                                 {"anatomy", h.anatomy},
                                 {"outlier_removal", h.outlier_removal},
                                 {"seed", h.seed}};

  json convs = json::array();
  for (const auto& c : atlas.encoder_config.convs)
    convs.push_back({{"out_channels", c.out_channels}, {"kernel", c.kernel}, {"stride", c.stride}, {"pad", c.pad}});
  manifest["encoder"] = {{"input_size", atlas.encoder_config.input_size},
                         {"input_channels", atlas.encoder_config.input_channels},
                         {"embedding_dim", atlas.encoder_config.embedding_dim},
                         {"convs", convs}};

  const Vec3& c = atlas.normalization.center;
  manifest["normalization"] = {{"center", {c.x, c.y, c.z}}, {"scale", atlas.normalization.scale}};

  json tap = json::array();
  for (const RegionSet& s : atlas.tap) tap.push_back(std::vector<std::int32_t>(s.begin(), s.end()));
  manifest["tap"] = tap;

  json arrays = json::array();
  auto emit = [&](const NamedArray& a) {
    arrays.push_back({{"name", a.name}, {"shape", a.shape}, {"file", array_file(a.name)}});
    files[array_file(a.name)] = encode_array(a);
  };
  for (const NamedArray& a : atlas.encoder) emit(a);
  if (atlas.stage == AtlasStage::clustered) emit(atlas.centroids);
  manifest["arrays"] = arrays;

  const std::string text = manifest.dump(2) + "\n";
  const auto* p = reinterpret_cast<const std::byte*>(text.data());
  files[kAtlasManifest] = std::vector<std::byte>(p, p + text.size());
  return files;
}

Atlas deserialize_atlas(const std::map<std::string, std::vector<std::byte>>& files) {
  const auto mit = files.find(kAtlasManifest);
  if (mit == files.end()) throw ValidationError("atlas lacks manifest.json");
  json manifest;
  try {
    manifest = json::parse(std::string(reinterpret_cast<const char*>(mit->second.data()), mit->second.size()));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed atlas manifest: ") + e.what(), e.byte);
  }
  if (get_field<std::string>(manifest, "format") != "dfc-atlas")
    throw ValidationError("not an atlas manifest");
  const int version = get_field<int>(manifest, "version");
  if (version != kAtlasFormatVersion)
    throw ValidationError("unsupported atlas version " + std::to_string(version));

  Atlas atlas;
  atlas.stage = parse_stage(get_field<std::string>(manifest, "stage"));

  const json hj = get_field<json>(manifest, "hyperparameters");
  atlas.hyper.k = get_field<int>(hj, "k");
  atlas.hyper.n_points = get_field<int>(hj, "n_points");
  atlas.hyper.h = get_field<double>(hj, "h");
  atlas.hyper.h_effective = get_field<double>(hj, "h_effective");
  atlas.hyper.lambda = get_field<double>(hj, "lambda");
  atlas.hyper.tap_fraction = get_field<double>(hj, "tap_fraction");
  atlas.hyper.anatomy = get_field<bool>(hj, "anatomy");
  atlas.hyper.outlier_removal = get_field<bool>(hj, "outlier_removal");
  atlas.hyper.seed = get_field<std::uint64_t>(hj, "seed");

  const json ej = get_field<json>(manifest, "encoder");
  atlas.encoder_config.input_size = get_field<int>(ej, "input_size");
  atlas.encoder_config.input_channels = get_field<int>(ej, "input_channels");
  atlas.encoder_config.embedding_dim = get_field<int>(ej, "embedding_dim");
  atlas.encoder_config.convs.clear();
  for (const json& cj : get_field<json>(ej, "convs"))
    atlas.encoder_config.convs.push_back({get_field<int>(cj, "out_channels"), get_field<int>(cj, "kernel"),
                                          get_field<int>(cj, "stride"), get_field<int>(cj, "pad")});

  const json nj = get_field<json>(manifest, "normalization");
  const auto center = get_field<std::vector<double>>(nj, "center");
  if (center.size() != 3) throw ValidationError("atlas normalization center must have 3 components");
  atlas.normalization.center = {center[0], center[1], center[2]};
  atlas.normalization.scale = get_field<double>(nj, "scale");

  for (const json& tj : get_field<json>(manifest, "tap"))
    atlas.tap.push_back(RegionSet::from_labels(tj.get<std::vector<std::int32_t>>()));

  for (const json& aj : get_field<json>(manifest, "arrays")) {
    const auto name = get_field<std::string>(aj, "name");
    const auto file = get_field<std::string>(aj, "file");
    const auto fit = files.find(file);
    if (fit == files.end()) throw ValidationError("atlas array file " + file + " is missing");
    NamedArray a = decode_array(name, get_field<std::vector<std::size_t>>(aj, "shape"), fit->second);
    if (name == "centroids")
      atlas.centroids = std::move(a);
    else
      atlas.encoder.push_back(std::move(a));
  }
  atlas.validate();
  return atlas;
}

void write_atlas(const Atlas& atlas, const std::filesystem::path& dir) {
  const auto files = serialize_atlas(atlas);
  std::filesystem::create_directories(dir);
  for (const auto& [name, bytes] : files) write_file_bytes(dir / name, bytes);
}

Atlas read_atlas(const std::filesystem::path& dir) {
  std::map<std::string, std::vector<std::byte>> files;
  files[kAtlasManifest] = read_file_bytes(dir / kAtlasManifest);
  json manifest;
  try {
    const auto& m = files[kAtlasManifest];
    manifest = json::parse(std::string(reinterpret_cast<const char*>(m.data()), m.size()));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed atlas manifest: ") + e.what(), e.byte);
  }
  if (manifest.contains("arrays") && manifest["arrays"].is_array())
    for (const json& aj : manifest["arrays"])
      if (aj.contains("file") && aj["file"].is_string()) {
        const auto file = aj["file"].get<std::string>();
        if (file.find('/') != std::string::npos || file.find("..") != std::string::npos)
          throw ValidationError("atlas array file name must be local: " + file);
        files[file] = read_file_bytes(dir / file);
      }
  return deserialize_atlas(files);
}

std::string atlas_hash(const Atlas& atlas) {
  auto files = serialize_atlas(atlas);
  std::vector<std::vector<std::byte>> parts;
  parts.push_back(files[kAtlasManifest]);
  for (const NamedArray& a : atlas.encoder) parts.push_back(files[array_file(a.name)]);
  if (atlas.stage == AtlasStage::clustered) parts.push_back(files[array_file(atlas.centroids.name)]);
  return sha256_hex(parts);
}

std::vector<NamedArray> to_named_arrays(const nn::ParamStore& params) {
  std::vector<NamedArray> out;
  for (const nn::Param& p : params) {
    NamedArray a{p.name, p.shape, {}};
    a.data.reserve(p.size());
    for (double v : p.value) a.data.push_back(static_cast<float>(v));
    out.push_back(std::move(a));
  }
  return out;
}

nn::ParamStore encoder_params(const Atlas& atlas) {
  nn::ParamStore params;
  for (const NamedArray& a : atlas.encoder)
    params.add(a.name, a.shape, std::vector<double>(a.data.begin(), a.data.end()));
  return params;
}

}  // namespace dfc
