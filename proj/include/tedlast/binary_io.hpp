#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tedlast/error.hpp"

namespace tedlast {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

namespace detail {

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

}  // namespace detail

/// Appends the little-endian encoding of each value to `out`.
template <typename T>
void append_le(std::vector<unsigned char>& out, std::span<const T> values) {
  static_assert(std::is_trivially_copyable_v<T>);
  const std::size_t offset = out.size();
  out.resize(offset + values.size() * sizeof(T));
  unsigned char* dst = out.data() + offset;
  for (const T& v : values) {
    const T le = detail::byteswap_if_big(v);
    std::memcpy(dst, &le, sizeof(T));
    dst += sizeof(T);
  }
}

template <typename T>
void append_le(std::vector<unsigned char>& out, const T& value) {
  append_le(out, std::span<const T>(&value, 1));
}

/// Decodes `count` little-endian values starting at `bytes[offset]`.
template <typename T>
std::vector<T> decode_le(std::span<const unsigned char> bytes,
                         std::size_t offset, std::size_t count) {
  std::vector<T> values(count);
  const unsigned char* src = bytes.data() + offset;
  for (std::size_t i = 0; i < count; ++i) {
    T v;
    std::memcpy(&v, src + i * sizeof(T), sizeof(T));
    values[i] = detail::byteswap_if_big(v);
  }
  return values;
}

/// 64-bit FNV-1a, resumable through `state`.
class Fnv1a64 {
 public:
  static constexpr std::uint64_t kOffsetBasis = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

  void update(std::span<const unsigned char> bytes) noexcept {
    for (unsigned char b : bytes) {
      state_ ^= b;
      state_ *= kPrime;
    }
  }
  void update(std::string_view text) noexcept {
    update(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(text.data()), text.size()));
  }
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = kOffsetBasis;
};

inline std::vector<unsigned char> read_file_bytes(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw integrity_error("missing file: " + path.string());
  }
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

inline std::string read_file_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

inline void write_file_bytes(const std::filesystem::path& path,
                             std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw usage_error("cannot open for writing: " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw usage_error("write failed: " + path.string());
  }
}

inline void write_file_text(const std::filesystem::path& path,
                            std::string_view text) {
  write_file_bytes(path, std::span<const unsigned char>(
                             reinterpret_cast<const unsigned char*>(text.data()),
                             text.size()));
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw usage_error("cannot create directory " + dir.string() + ": " +
                      ec.message());
  }
}

}  // namespace tedlast
