#pragma once

// Little-endian byte cursor helpers shared by the binary formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dfc/error.hpp"

namespace dfc::detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

class ByteWriter {
 public:
  void magic(std::string_view m) {
    for (char c : m) out_.push_back(static_cast<std::byte>(c));
  }
  void u32(std::uint32_t v) { raw(byteswap_if_big(v)); }
  void i32(std::int32_t v) { raw(byteswap_if_big(v)); }
  void u64(std::uint64_t v) { raw(byteswap_if_big(v)); }
  void f32(float v) { raw(byteswap_if_big(std::bit_cast<std::uint32_t>(v))); }
  void f64(double v) { raw(byteswap_if_big(std::bit_cast<std::uint64_t>(v))); }

  std::vector<std::byte> take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  template <class T>
  void raw(T v) {
    const auto bytes = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
    out_.insert(out_.end(), bytes.begin(), bytes.end());
  }

  std::vector<std::byte> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void magic(std::string_view m) {
    if (remaining() < m.size()) throw ParseError("truncated payload reading magic", pos_);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (bytes_[pos_ + i] != static_cast<std::byte>(m[i])) throw ParseError("bad magic", pos_);
    pos_ += m.size();
  }

  std::uint32_t u32(const char* what) { return byteswap_if_big(raw<std::uint32_t>(what)); }
  std::int32_t i32(const char* what) { return byteswap_if_big(raw<std::int32_t>(what)); }
  std::uint64_t u64(const char* what) { return byteswap_if_big(raw<std::uint64_t>(what)); }
  float f32(const char* what) {
    return std::bit_cast<float>(byteswap_if_big(raw<std::uint32_t>(what)));
  }
  double f64(const char* what) {
    return std::bit_cast<double>(byteswap_if_big(raw<std::uint64_t>(what)));
  }

  /// Throws unless `count` more items of `item_size` bytes are available.
  void require(std::size_t count, std::size_t item_size, const char* what) const {
    if (item_size != 0 && count > remaining() / item_size)
      throw ParseError(std::string("truncated payload reading ") + what, pos_);
  }

  void expect_end() const {
    if (remaining() != 0) throw ParseError("trailing bytes after payload", pos_);
  }

 private:
  template <class T>
  T raw(const char* what) {
    if (remaining() < sizeof(T)) throw ParseError(std::string("truncated payload reading ") + what, pos_);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace dfc::detail
