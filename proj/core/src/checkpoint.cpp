// SPDX-License-Identifier: Apache-2.0
#include "rge/checkpoint.hpp"

#include <cstring>

#include "rge/dataset_io.hpp"
#include "rge/error.hpp"
#include "rge/hash.hpp"

namespace rge {
namespace {

constexpr char kMagic[8] = {'R', 'G', 'E', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kMaxRank = 4;

}  // namespace

std::string ByteWriter::finish() {
  Fnv1a h;
  h.update(out_);
  u64(h.digest());
  return std::move(out_);
}

ByteReader::ByteReader(const std::string& bytes, const char* what) : data_(bytes), what_(what) {
  if (bytes.size() < sizeof(std::uint64_t)) throw FormatError(std::string(what) + " is truncated");
  end_ = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + end_, sizeof stored);
  Fnv1a h;
  h.update(std::string_view(bytes.data(), end_));
  if (h.digest() != stored) throw FormatError(std::string(what) + " checksum mismatch");
}

void ByteReader::bytes(void* p, std::size_t n) {
  if (n > end_ - pos_) throw FormatError(std::string(what_) + " is truncated");
  std::memcpy(p, data_.data() + pos_, n);
  pos_ += n;
}

std::uint32_t ByteReader::u32() {
  std::uint32_t v = 0;
  bytes(&v, sizeof v);
  return v;
}

std::uint64_t ByteReader::u64() {
  std::uint64_t v = 0;
  bytes(&v, sizeof v);
  return v;
}

std::string ByteReader::str() {
  const auto n = u32();
  if (n > end_ - pos_) throw FormatError(std::string(what_) + " is truncated");
  std::string s(data_.data() + pos_, n);
  pos_ += n;
  return s;
}

template <typename T>
std::string serialize_params(const Parameters<T>& params) {
  ByteWriter w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(sizeof(T));
  const auto& c = params.config;
  for (std::uint64_t v : {std::uint64_t{c.vocab_size}, std::uint64_t{c.d_model}, std::uint64_t{c.n_layers},
                          std::uint64_t{c.n_heads}, std::uint64_t{c.d_ff}, std::uint64_t{c.max_seq}, c.seed}) {
    w.u64(v);
  }
  const auto named = params.named();
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) w.u64(d);
    w.bytes(t.data().data(), t.data().size() * sizeof(T));
  }
  return w.finish();
}

template <typename T>
Parameters<T> deserialize_params(const std::string& bytes) {
  ByteReader r(bytes, "checkpoint");
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("not an rge checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto scalar = r.u32();
  if (scalar != 4 && scalar != 8) throw FormatError("unsupported checkpoint scalar width " + std::to_string(scalar));

  ModelConfig c;
  c.vocab_size = r.u64();
  c.d_model = r.u64();
  c.n_layers = r.u64();
  c.n_heads = r.u64();
  c.d_ff = r.u64();
  c.max_seq = r.u64();
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid model config: ") + e.what());
  }

  // The template fixes names and shapes; stored tensors must match it exactly.
  Parameters<T> params = init_params<T>(c);
  const auto named = params.named();
  if (r.u32() != named.size()) throw FormatError("checkpoint tensor count does not match its model config");
  for (auto [name, t] : named) {
    const auto stored_name = r.str();
    if (stored_name != name) throw FormatError("checkpoint tensor '" + stored_name + "' found where '" + name + "' expected");
    const auto rank = r.u32();
    if (rank > kMaxRank) throw FormatError("checkpoint tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != t.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_to_string(shape) + ", expected " +
                        shape_to_string(t.shape()));
    }
    auto dst = t.mutable_data();
    if (scalar == sizeof(T)) {
      r.bytes(dst.data(), dst.size() * sizeof(T));
    } else if (scalar == 4) {
      std::vector<float> tmp(dst.size());
      r.bytes(tmp.data(), tmp.size() * sizeof(float));
      for (std::size_t i = 0; i < tmp.size(); ++i) dst[i] = static_cast<T>(tmp[i]);
    } else {
      std::vector<double> tmp(dst.size());
      r.bytes(tmp.data(), tmp.size() * sizeof(double));
      for (std::size_t i = 0; i < tmp.size(); ++i) dst[i] = static_cast<T>(tmp[i]);
    }
  }
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  return params;
}

template <typename T>
void save_checkpoint(const Parameters<T>& params, const std::filesystem::path& path) {
  write_file(path, serialize_params(params));
}

template <typename T>
Parameters<T> load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_params<T>(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template std::string serialize_params<float>(const Parameters<float>&);
template std::string serialize_params<double>(const Parameters<double>&);
template Parameters<float> deserialize_params<float>(const std::string&);
template Parameters<double> deserialize_params<double>(const std::string&);
template void save_checkpoint<float>(const Parameters<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const Parameters<double>&, const std::filesystem::path&);
template Parameters<float> load_checkpoint<float>(const std::filesystem::path&);
template Parameters<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace rge
