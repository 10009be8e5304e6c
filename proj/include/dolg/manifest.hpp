// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dolg/error.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

// Named-tensor manifest: fixed header, JSON metadata blob, then per tensor a
// name, shape, and a flat little-endian float32 payload. Used for checkpoints
// and for optional pretrained backbone weights.
//
//   magic "DLGT" | u32 version | u32 meta_len | meta bytes |
//   u32 tensor_count | { u32 name_len | name | u32 rank | u64 dims[rank] |
//                        f32 data[numel] }*

namespace wire {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f32(std::ostream& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

struct Reader {
  explicit Reader(std::istream& in) : in_(in) {}

  std::size_t offset = 0;

  void bytes(void* dst, std::size_t n, const char* what) {
    in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw format_error(std::string("truncated file while reading ") + what,
                         offset + static_cast<std::size_t>(in_.gcount()));
    offset += n;
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t u64(const char* what) {
    unsigned char b[8];
    bytes(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  float f32(const char* what) {
    const std::uint32_t v = u32(what);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }

  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

 private:
  std::istream& in_;
};

}  // namespace wire

struct TensorManifest {
  std::string metadata;  // JSON text; empty object when unused
  // insertion-ordered entries
  std::vector<std::pair<std::string, Tensor>> entries;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }

  void add(const std::string& name, const Tensor& t) { entries.emplace_back(name, t); }
};

inline void write_manifest(const std::string& path, const TensorManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write manifest: " + path);
  out.write("DLGT", 4);
  wire::put_u32(out, 1);
  const std::string& meta = m.metadata.empty() ? std::string("{}") : m.metadata;
  wire::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  wire::put_u32(out, static_cast<std::uint32_t>(m.entries.size()));
  for (const auto& [name, t] : m.entries) {
    wire::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    wire::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i) wire::put_u64(out, t.dim(i));
    for (std::size_t i = 0; i < t.numel(); ++i) wire::put_f32(out, static_cast<float>(t[i]));
  }
  if (!out) throw data_error("short write: " + path);
}

inline TensorManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open manifest: " + path);
  wire::Reader r(in);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "DLGT", 4) != 0) throw format_error("manifest: bad magic", 0);
  const std::uint32_t version = r.u32("version");
  if (version != 1) throw format_error("manifest: unsupported version " + std::to_string(version), 4);
  const std::uint32_t meta_len = r.u32("metadata length");
  TensorManifest m;
  m.metadata.resize(meta_len);
  if (meta_len) r.bytes(m.metadata.data(), meta_len, "metadata");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("tensor name length");
    std::string name(name_len, '\0');
    if (name_len) r.bytes(name.data(), name_len, "tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank > 8) throw format_error("manifest: implausible tensor rank", r.offset - 4);
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<std::size_t>(r.u64("tensor dim"));
      numel *= shape[d];
    }
    if (numel > (1ull << 32)) throw format_error("manifest: implausible tensor size", r.offset);
    Tensor t(shape);
    for (std::size_t e = 0; e < numel; ++e) t[e] = static_cast<double>(r.f32("tensor payload"));
    m.entries.emplace_back(std::move(name), std::move(t));
  }
  if (!r.at_eof()) throw format_error("manifest: trailing bytes after last tensor", r.offset);
  return m;
}

}  // namespace dolg
