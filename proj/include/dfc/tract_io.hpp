#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfc/geometry.hpp"

namespace dfc {

// Binary fiber container:
//   "FIBS" | u32 version (=1) | u32 fiber count |
//   per fiber: u32 point count | point count x 3 f32
// All integers and reals little-endian. Coordinates are 64-bit in memory
// and 32-bit on disk.
inline constexpr std::uint32_t kFiberFormatVersion = 1;

// Label volume container:
//   "LVOL" | u32 version (=1) | 3 x u32 dims | 3 x f32 origin |
//   3 x f32 spacing | nx*ny*nz x i32 labels, x fastest
inline constexpr std::uint32_t kLabelVolumeFormatVersion = 1;

/// Dense axis-aligned grid of region labels; 0 is background.
struct LabelVolume {
  std::array<std::uint32_t, 3> dims{0, 0, 0};
  Vec3 origin;
  Vec3 spacing{1.0, 1.0, 1.0};
  std::vector<std::int32_t> labels;

  std::size_t voxel_count() const {
    return std::size_t{dims[0]} * std::size_t{dims[1]} * std::size_t{dims[2]};
  }
  std::size_t index(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
    return (std::size_t{k} * dims[1] + j) * dims[0] + i;
  }
  std::int32_t at(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
    return labels[index(i, j, k)];
  }

  /// Label of the voxel containing `p` (floor((p - origin) / spacing)), or
  /// nullopt outside the grid.
  std::optional<std::int32_t> lookup(Vec3 p) const;

  /// Throws ValidationError when dims, spacing or labels are inconsistent.
  void validate() const;

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;
};

FiberSet read_fibers_binary(std::span<const std::byte> bytes);
std::vector<std::byte> write_fibers_binary(const FiberSet& fibers);

/// `{"fibers": [[[x,y,z], ...], ...], "ids": [...]}`; "ids" is optional.
FiberSet read_fibers_text(const std::string& text);
std::string write_fibers_text(const FiberSet& fibers);

/// Reads either format; a leading '{' (after whitespace) selects JSON.
FiberSet read_fiberset(const std::filesystem::path& path);
/// Writes JSON when the extension is ".json", binary otherwise.
void write_fiberset(const FiberSet& fibers, const std::filesystem::path& path);

LabelVolume read_labelvolume_bytes(std::span<const std::byte> bytes);
std::vector<std::byte> write_labelvolume_bytes(const LabelVolume& volume);
LabelVolume read_labelvolume(const std::filesystem::path& path);
void write_labelvolume(const LabelVolume& volume, const std::filesystem::path& path);

/// Fibers whose arc length is strictly greater than `min_mm`.
FiberSet filter_by_length(const FiberSet& fibers, double min_mm);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace dfc
