#include "dfc/tract_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "binary.hpp"
#include "dfc/error.hpp"

namespace dfc {

using detail::ByteReader;
using detail::ByteWriter;

namespace {

float checked_f32(double v, const char* what) {
  if (!std::isfinite(v)) throw ValidationError(std::string("non-finite ") + what);
  const auto f = static_cast<float>(v);
  if (!std::isfinite(f)) throw ValidationError(std::string(what) + " overflows 32-bit storage");
  return f;
}

void validate_fiber(const Fiber& f, std::size_t index) {
  if (f.points.size() < 2)
    throw ValidationError("fiber " + std::to_string(index) + " has fewer than 2 points");
  for (const Vec3& p : f.points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw ValidationError("fiber " + std::to_string(index) + " has a non-finite coordinate");
}

}  // namespace

std::optional<std::int32_t> LabelVolume::lookup(Vec3 p) const {
  std::array<std::uint32_t, 3> ijk{};
  for (std::size_t a = 0; a < 3; ++a) {
    const double v = std::floor((p[a] - origin[a]) / spacing[a]);
    if (!(v >= 0.0) || v >= static_cast<double>(dims[a])) return std::nullopt;
    ijk[a] = static_cast<std::uint32_t>(v);
  }
  return at(ijk[0], ijk[1], ijk[2]);
}

void LabelVolume::validate() const {
  for (std::size_t a = 0; a < 3; ++a) {
    if (dims[a] == 0) throw ValidationError("label volume dimensions must be positive");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      throw ValidationError("label volume spacing must be positive and finite");
    if (!std::isfinite(origin[a])) throw ValidationError("label volume origin must be finite");
  }
  if (labels.size() != voxel_count())
    throw ValidationError("label volume has " + std::to_string(labels.size()) + " labels, expected " +
                          std::to_string(voxel_count()));
  for (std::int32_t l : labels)
    if (l < 0) throw ValidationError("label volume contains a negative label");
}

FiberSet read_fibers_binary(std::span<const std::byte> bytes) {
  ByteReader in(bytes);
  in.magic("FIBS");
  const std::size_t version_at = in.offset();
  const std::uint32_t version = in.u32("version");
  if (version != kFiberFormatVersion)
    throw ParseError("unsupported fiber format version " + std::to_string(version), version_at);
  const std::uint32_t count = in.u32("fiber count");
  // Each fiber needs at least its 4-byte point count.
  in.require(count, 4, "fiber table");

  FiberSet fibers;
  fibers.reserve(count);
  for (std::uint32_t f = 0; f < count; ++f) {
    const std::size_t count_at = in.offset();
    const std::uint32_t n = in.u32("point count");
    if (n < 2)
      throw ParseError("fiber " + std::to_string(f) + ": point count " + std::to_string(n) + " < 2",
                       count_at);
    in.require(std::size_t{n} * 3, 4, "coordinates");
    Fiber fiber;
    fiber.points.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::size_t a = 0; a < 3; ++a) {
        const std::size_t at = in.offset();
        const float v = in.f32("coordinate");
        if (!std::isfinite(v)) throw ParseError("non-finite coordinate", at);
        fiber.points[i][a] = v;
      }
    }
    fibers.push_back(std::move(fiber));
  }
  in.expect_end();
  return fibers;
}

std::vector<std::byte> write_fibers_binary(const FiberSet& fibers) {
  if (fibers.size() > std::numeric_limits<std::uint32_t>::max())
    throw ValidationError("too many fibers for the binary format");
  ByteWriter out;
  out.magic("FIBS");
  out.u32(kFiberFormatVersion);
  out.u32(static_cast<std::uint32_t>(fibers.size()));
  for (std::size_t f = 0; f < fibers.size(); ++f) {
    validate_fiber(fibers[f], f);
    out.u32(static_cast<std::uint32_t>(fibers[f].points.size()));
    for (const Vec3& p : fibers[f].points) {
      out.f32(checked_f32(p.x, "coordinate"));
      out.f32(checked_f32(p.y, "coordinate"));
      out.f32(checked_f32(p.z, "coordinate"));
    }
  }
  return out.take();
}

FiberSet read_fibers_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed fiber JSON: ") + e.what(), e.byte);
  }
  if (!doc.is_object() || !doc.contains("fibers") || !doc["fibers"].is_array())
    throw ParseError("fiber JSON lacks a \"fibers\" array", 0);

  const auto& arr = doc["fibers"];
  FiberSet fibers;
  fibers.reserve(arr.size());
  for (std::size_t f = 0; f < arr.size(); ++f) {
    const auto& jf = arr[f];
    if (!jf.is_array()) throw ValidationError("fiber " + std::to_string(f) + " is not an array");
    Fiber fiber;
    for (const auto& jp : jf) {
      if (!jp.is_array() || jp.size() != 3)
        throw ValidationError("fiber " + std::to_string(f) + " has a point that is not [x,y,z]");
      Vec3 p;
      for (std::size_t a = 0; a < 3; ++a) {
        if (!jp[a].is_number())
          throw ValidationError("fiber " + std::to_string(f) + " has a non-numeric coordinate");
        p[a] = jp[a].get<double>();
      }
      fiber.points.push_back(p);
    }
    validate_fiber(fiber, f);
    fibers.push_back(std::move(fiber));
  }
  if (doc.contains("ids")) {
    const auto& ids = doc["ids"];
    if (!ids.is_array() || ids.size() != fibers.size())
      throw ValidationError("\"ids\" must be an array with one entry per fiber");
    for (std::size_t f = 0; f < fibers.size(); ++f)
      if (!ids[f].is_null()) fibers[f].id = ids[f].get<std::int64_t>();
  }
  return fibers;
}

std::string write_fibers_text(const FiberSet& fibers) {
  nlohmann::json doc;
  doc["fibers"] = nlohmann::json::array();
  bool any_id = false;
  for (std::size_t f = 0; f < fibers.size(); ++f) {
    validate_fiber(fibers[f], f);
    nlohmann::json jf = nlohmann::json::array();
    for (const Vec3& p : fibers[f].points) jf.push_back({p.x, p.y, p.z});
    doc["fibers"].push_back(std::move(jf));
    any_id = any_id || fibers[f].id.has_value();
  }
  if (any_id) {
    nlohmann::json ids = nlohmann::json::array();
    for (const Fiber& f : fibers) ids.push_back(f.id ? nlohmann::json(*f.id) : nlohmann::json());
    doc["ids"] = std::move(ids);
  }
  return doc.dump() + "\n";
}

FiberSet read_fiberset(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  for (std::byte b : bytes) {
    const auto c = static_cast<char>(b);
    if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
    if (c == '{')
      return read_fibers_text(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    break;
  }
  return read_fibers_binary(bytes);
}

void write_fiberset(const FiberSet& fibers, const std::filesystem::path& path) {
  if (path.extension() == ".json") {
    const std::string text = write_fibers_text(fibers);
    write_file_bytes(path, std::as_bytes(std::span(text.data(), text.size())));
  } else {
    write_file_bytes(path, write_fibers_binary(fibers));
  }
}

LabelVolume read_labelvolume_bytes(std::span<const std::byte> bytes) {
  ByteReader in(bytes);
  in.magic("LVOL");
  const std::size_t version_at = in.offset();
  const std::uint32_t version = in.u32("version");
  if (version != kLabelVolumeFormatVersion)
    throw ParseError("unsupported label volume version " + std::to_string(version), version_at);
  LabelVolume vol;
  for (auto& d : vol.dims) d = in.u32("dims");
  for (std::size_t a = 0; a < 3; ++a) vol.origin[a] = in.f32("origin");
  for (std::size_t a = 0; a < 3; ++a) vol.spacing[a] = in.f32("spacing");
  const std::size_t header_end = in.offset();
  for (std::size_t a = 0; a < 3; ++a) {
    if (vol.dims[a] == 0) throw ParseError("label volume dimension is zero", header_end);
    if (!(vol.spacing[a] > 0.0) || !std::isfinite(vol.spacing[a]))
      throw ValidationError("label volume spacing must be positive and finite");
  }
  const std::size_t count = vol.voxel_count();
  in.require(count, 4, "labels");
  vol.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = in.offset();
    vol.labels[i] = in.i32("labels");
    if (vol.labels[i] < 0) throw ParseError("negative label", at);
  }
  in.expect_end();
  vol.validate();
  return vol;
}

std::vector<std::byte> write_labelvolume_bytes(const LabelVolume& volume) {
  volume.validate();
  ByteWriter out;
  out.magic("LVOL");
  out.u32(kLabelVolumeFormatVersion);
  for (auto d : volume.dims) out.u32(d);
  for (std::size_t a = 0; a < 3; ++a) out.f32(checked_f32(volume.origin[a], "origin"));
  for (std::size_t a = 0; a < 3; ++a) out.f32(checked_f32(volume.spacing[a], "spacing"));
  for (std::int32_t l : volume.labels) out.i32(l);
  return out.take();
}

LabelVolume read_labelvolume(const std::filesystem::path& path) {
  return read_labelvolume_bytes(read_file_bytes(path));
}

void write_labelvolume(const LabelVolume& volume, const std::filesystem::path& path) {
  write_file_bytes(path, write_labelvolume_bytes(volume));
}

FiberSet filter_by_length(const FiberSet& fibers, double min_mm) {
  if (!(min_mm >= 0.0)) throw ValidationError("filter_by_length: minimum length must be >= 0");
  FiberSet out;
  for (const Fiber& f : fibers)
    if (arc_length(f.points) > min_mm) out.push_back(f);
  return out;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size)))
    throw Error("cannot read " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace dfc
