#pragma once

// Parameter checkpoint container: length-prefixed named arrays (name, dtype
// tag, shape, little-endian payload) plus a plain-text KEY=VALUE manifest.
// Round-trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "difflight/common.hpp"

namespace difflight::numcore {

enum class DType : std::uint8_t { f32 = 1, f64 = 2, i64 = 3 };

struct NamedArray {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> bytes;

  std::int64_t count() const { return shape_numel(shape); }
};

struct NamedArrays {
  std::vector<NamedArray> arrays;

  template <typename T>
  void add(const std::string& name, Shape shape, const T* data, std::int64_t n, DType tag) {
    require(shape_numel(shape) == n, "checkpoint array '" + name + "': shape " + shape_str(shape) +
                                         " does not match length " + std::to_string(n));
    NamedArray a;
    a.name = name;
    a.dtype = tag;
    a.shape = std::move(shape);
    a.bytes.resize(static_cast<size_t>(n) * sizeof(T));
    std::memcpy(a.bytes.data(), data, a.bytes.size());
    arrays.push_back(std::move(a));
  }
  void add_f32(const std::string& name, Shape shape, const float* data, std::int64_t n) {
    add(name, std::move(shape), data, n, DType::f32);
  }
  void add_f64(const std::string& name, Shape shape, const double* data, std::int64_t n) {
    add(name, std::move(shape), data, n, DType::f64);
  }
  void add_i64(const std::string& name, Shape shape, const std::int64_t* data, std::int64_t n) {
    add(name, std::move(shape), data, n, DType::i64);
  }

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
  const NamedArray& at(const std::string& name) const {
    const auto* a = find(name);
    require(a != nullptr, "checkpoint: missing array '" + name + "'");
    return *a;
  }
};

namespace detail {

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(size_t n) const { require(pos + n <= buf.size(), "checkpoint: truncated container"); }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  std::string raw(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline constexpr char kContainerMagic[8] = {'D', 'L', 'P', 'K', '0', '0', '0', '1'};

inline std::string serialize_container(const NamedArrays& c) {
  std::string out;
  out.append(kContainerMagic, 8);
  detail::put_u64(out, c.arrays.size());
  for (const auto& a : c.arrays) {
    detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out.append(a.name);
    detail::put_u8(out, static_cast<std::uint8_t>(a.dtype));
    detail::put_u8(out, static_cast<std::uint8_t>(a.shape.size()));
    for (int d : a.shape) detail::put_u64(out, static_cast<std::uint64_t>(d));
    detail::put_u64(out, a.bytes.size());
    out.append(reinterpret_cast<const char*>(a.bytes.data()), a.bytes.size());
  }
  return out;
}

inline NamedArrays parse_container(const std::string& buf) {
  detail::Reader r(buf);
  require(r.raw(8) == std::string(kContainerMagic, 8), "checkpoint: bad magic");
  NamedArrays c;
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedArray a;
    a.name = r.raw(r.u32());
    a.dtype = static_cast<DType>(r.u8());
    const int nd = r.u8();
    for (int d = 0; d < nd; ++d) a.shape.push_back(static_cast<int>(r.u64()));
    const std::uint64_t len = r.u64();
    std::string payload = r.raw(len);
    a.bytes.assign(payload.begin(), payload.end());
    c.arrays.push_back(std::move(a));
  }
  return c;
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open for writing: " + path);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  require(f.good(), "write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open: " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

inline void save_container(const std::string& path, const NamedArrays& c) { write_file(path, serialize_container(c)); }
inline NamedArrays load_container(const std::string& path) { return parse_container(read_file(path)); }

// Plain-text manifest: sorted KEY=VALUE lines.
inline void save_manifest(const std::string& path, const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  write_file(path, out);
}

inline std::map<std::string, std::string> load_manifest(const std::string& path) {
  std::map<std::string, std::string> kv;
  std::string data = read_file(path);
  size_t pos = 0;
  while (pos < data.size()) {
    size_t nl = data.find('\n', pos);
    if (nl == std::string::npos) nl = data.size();
    std::string line = data.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    size_t eq = line.find('=');
    require(eq != std::string::npos, "manifest: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace difflight::numcore
