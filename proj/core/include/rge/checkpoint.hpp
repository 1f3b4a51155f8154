// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint layout (little-endian):
//   magic "RGECKPT\0" | u32 version | u32 scalar bytes | 7 x u64 ModelConfig
//   | u32 tensor count | per tensor: u32 name length, name, u32 rank, u64 dims,
//   raw values | u64 FNV-1a of everything before it.

#pragma once

#include <filesystem>
#include <string>

#include "rge/model.hpp"

namespace rge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::string serialize_params(const Parameters<T>& params);

/// Values stored at the other precision are converted. Throws FormatError on
/// bad magic, version, checksum, or tensor layout.
template <typename T>
Parameters<T> deserialize_params(const std::string& bytes);

template <typename T>
void save_checkpoint(const Parameters<T>& params, const std::filesystem::path& path);

template <typename T>
Parameters<T> load_checkpoint(const std::filesystem::path& path);

/// Little-endian byte writer/reader shared with the optimizer sidecar.
class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  /// Appends the checksum of everything written so far and returns the blob.
  std::string finish();
  std::string& buffer() { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  /// Verifies and strips the trailing checksum.
  explicit ByteReader(const std::string& bytes, const char* what);
  void bytes(void* p, std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  std::string str();
  bool done() const noexcept { return pos_ == end_; }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
  const char* what_;
};

}  // namespace rge
