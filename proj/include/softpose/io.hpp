#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "softpose/params.hpp"
#include "softpose/tensor.hpp"

namespace softpose {

// Flat binary tensor container:
//   magic "SPKT" | version u32 | rank u32 | extents u32 each | f64 payload
// All fields little-endian. Checkpoints are a manifest of (name, shape, byte
// offset) entries followed by one such container per named tensor.

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  b[2] = static_cast<char>((v >> 16) & 0xff);
  b[3] = static_cast<char>((v >> 24) & 0xff);
  buf.append(b, 4);
}

inline void put_u64(std::string& buf, std::uint64_t v) {
  put_u32(buf, static_cast<std::uint32_t>(v & 0xffffffffull));
  put_u32(buf, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string source)
      : data_(data), source_(std::move(source)) {}

  std::uint32_t u32() {
    need(4);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(data_.data()) + pos_;
    pos_ += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | (static_cast<std::uint64_t>(u32()) << 32);
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void seek(std::size_t pos) {
    if (pos > data_.size()) throw ValueError(source_ + ": offset past end of file");
    pos_ = pos;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) throw ValueError(source_ + ": truncated file");
  }
  const std::string& data_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValueError("cannot open file: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValueError("cannot open file for writing: " + path);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw ValueError("write failed: " + path);
}

}  // namespace detail

inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

inline std::string encode_tensor(const TensorData& t) {
  std::string buf;
  buf.append("SPKT", 4);
  detail::put_u32(buf, kTensorFormatVersion);
  detail::put_u32(buf, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape) detail::put_u32(buf, static_cast<std::uint32_t>(e));
  for (double v : t.values) detail::put_f64(buf, v);
  return buf;
}

inline TensorData decode_tensor(detail::ByteReader& r) {
  if (r.bytes(4) != "SPKT") throw ValueError("bad tensor magic (expected SPKT)");
  const std::uint32_t version = r.u32();
  if (version != kTensorFormatVersion)
    throw ValueError("unsupported tensor format version " + std::to_string(version));
  const std::uint32_t rank = r.u32();
  if (rank > 16) throw ValueError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = r.u32();
  const std::size_t n = numel(shape);
  if (n > r.remaining() / 8)
    throw ValueError("tensor payload of " + std::to_string(n) +
                     " values exceeds the remaining file size");
  std::vector<double> values(n);
  for (double& v : values) v = r.f64();
  return TensorData(std::move(shape), std::move(values));
}

inline void save_tensor(const std::string& path, const TensorData& t) {
  detail::write_file(path, encode_tensor(t));
}

inline TensorData load_tensor(const std::string& path) {
  const std::string data = detail::read_file(path);
  detail::ByteReader r(data, path);
  return decode_tensor(r);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

using NamedTensors = std::vector<std::pair<std::string, TensorData>>;

inline std::string encode_checkpoint(const NamedTensors& tensors) {
  // Manifest first; offsets are relative to the start of the file.
  std::string manifest;
  manifest.append("SPKM", 4);
  detail::put_u32(manifest, kCheckpointFormatVersion);
  detail::put_u32(manifest, static_cast<std::uint32_t>(tensors.size()));
  std::size_t manifest_size = manifest.size();
  for (const auto& [name, t] : tensors)
    manifest_size += 4 + name.size() + 4 + 4 * t.rank() + 8;

  std::string payload;
  std::vector<std::uint64_t> offsets;
  offsets.reserve(tensors.size());
  for (const auto& [name, t] : tensors) {
    offsets.push_back(manifest_size + payload.size());
    payload += encode_tensor(t);
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, t] = tensors[i];
    detail::put_u32(manifest, static_cast<std::uint32_t>(name.size()));
    manifest += name;
    detail::put_u32(manifest, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape) detail::put_u32(manifest, static_cast<std::uint32_t>(e));
    detail::put_u64(manifest, offsets[i]);
  }
  return manifest + payload;
}

inline NamedTensors decode_checkpoint(const std::string& data, const std::string& source) {
  detail::ByteReader r(data, source);
  if (r.bytes(4) != "SPKM") throw ValueError(source + ": bad checkpoint magic (expected SPKM)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion)
    throw ValueError(source + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  if (count > r.remaining() / 16)  // each manifest entry needs >= 16 bytes
    throw ValueError(source + ": manifest count " + std::to_string(count) +
                     " exceeds the file size");
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    const std::uint32_t name_len = r.u32();
    e.name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 16)
      throw ValueError(source + ": implausible tensor rank " + std::to_string(rank));
    e.shape.resize(rank);
    for (auto& x : e.shape) x = r.u32();
    e.offset = r.u64();
  }
  NamedTensors out;
  out.reserve(count);
  for (const auto& e : entries) {
    r.seek(static_cast<std::size_t>(e.offset));
    TensorData t = decode_tensor(r);
    if (t.shape != e.shape)
      throw ValueError(source + ": manifest shape " + shape_str(e.shape) +
                       " disagrees with payload shape " + shape_str(t.shape) +
                       " for tensor '" + e.name + "'");
    out.emplace_back(e.name, std::move(t));
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  detail::write_file(path, encode_checkpoint(tensors));
}

inline NamedTensors load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path), path);
}

inline NamedTensors to_named_tensors(const ParameterSet& params) {
  NamedTensors out;
  out.reserve(params.size());
  for (const Parameter& p : params.all()) out.emplace_back(p.name, p.data);
  return out;
}

// Fills `params` from named tensors, matching by name and shape.
inline void restore_parameters(ParameterSet& params, const NamedTensors& tensors) {
  for (Parameter& p : params.all()) {
    bool found = false;
    for (const auto& [name, t] : tensors) {
      if (name != p.name) continue;
      if (t.shape != p.data.shape)
        throw ValueError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape) +
                         ", expected " + shape_str(p.data.shape));
      p.data.values = t.values;
      found = true;
      break;
    }
    if (!found) throw ValueError("checkpoint is missing tensor '" + p.name + "'");
  }
}

}  // namespace softpose
