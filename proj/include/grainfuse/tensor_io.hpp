#pragma once

// "GFTC" tensor container: a named directory of little-endian arrays.
//
//   magic "GFTC" | u16 version | u32 entry count
//   per entry: u16 name length | name | u8 dtype | u8 rank | u64 dims[rank] | u64 payload offset
//   payloads, in directory order
//
// dtype codes: f32 = 1, u8 = 2, i32 = 3.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace grainfuse::io {

enum class DType : std::uint8_t { F32 = 1, U8 = 2, I32 = 3 };

inline constexpr std::uint16_t kContainerVersion = 1;

std::size_t dtype_size(DType t);

struct Array {
  DType dtype = DType::F32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> payload;  // little-endian element bytes

  std::uint64_t element_count() const;

  static Array from_f32(std::vector<std::uint64_t> dims, std::span<const float> values);
  static Array from_u8(std::vector<std::uint64_t> dims, std::span<const std::uint8_t> values);
  static Array from_i32(std::vector<std::uint64_t> dims, std::span<const std::int32_t> values);
  static Array from_string(const std::string& text);

  std::vector<float> to_f32() const;
  std::vector<std::uint8_t> to_u8() const;
  std::vector<std::int32_t> to_i32() const;
  std::string to_string() const;

  bool operator==(const Array&) const = default;
};

using Container = std::map<std::string, Array>;

void write_container(const std::filesystem::path& path, const Container& c);
/// Throws FormatError on bad magic, unknown version/dtype, or truncation.
Container read_container(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(std::span<const std::uint8_t> bytes);

/// Fetch an entry or throw FormatError naming the missing key.
const Array& require(const Container& c, const std::string& name);

}  // namespace grainfuse::io
