#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dgmix/tensor.hpp"

namespace dgmix {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// In-memory image of an on-disk tensor container. The file layout is an
/// 8-byte magic, a 4-byte little-endian format version, an 8-byte digest of
/// the producing configuration, then each entry as (name length, name bytes,
/// rank, extents) in 8-byte little-endian unsigned followed by the values as
/// 8-byte little-endian reals, and finally a 64-bit checksum of every
/// preceding byte. Values are stored at 64-bit regardless of the precision
/// the producer computed with.
struct TensorFile {
  std::uint64_t digest = 0;
  std::vector<NamedTensor> entries;

  const Tensor* find(std::string_view name) const {
    for (const auto& e : entries) {
      if (e.name == name) return &e.value;
    }
    return nullptr;
  }
};

inline constexpr std::uint32_t kTensorFileVersion = 1;

/// Serialize to bytes / parse from bytes. read_tensor_file throws IoError on
/// a bad magic, VersionError on an unknown version, and ChecksumError when
/// the trailing checksum does not cover the bytes (which also catches
/// truncation anywhere past the header).
std::string tensor_file_bytes(std::string_view magic, const TensorFile& file);
TensorFile parse_tensor_file(std::string_view magic, std::string_view bytes,
                             const std::string& origin);

void write_tensor_file(const std::string& path, std::string_view magic, const TensorFile& file);
TensorFile read_tensor_file(const std::string& path, std::string_view magic);

}  // namespace dgmix
