#pragma once

// Binary container primitives shared by every on-disk format in this repo:
// little-endian POD writes, CRC-32 (IEEE 802.3, reflected), and file slurp.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "cthgr/common.hpp"

namespace cthgr {

inline std::uint32_t crc32_update(std::uint32_t crc, const void* data, std::size_t len) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const unsigned char*>(data);
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t crc32_of(const void* data, std::size_t len) {
  return crc32_update(0, data, len);
}

inline std::string crc32_hex(std::uint32_t crc) {
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(8) << crc;
  return os.str();
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open file: " + path);
  in.seekg(0, std::ios::end);
  const auto n = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<unsigned char> buf(n);
  if (n > 0) in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  require(in.good(), "short read: " + path);
  return buf;
}

inline void write_file_bytes(const std::string& path, const void* data, std::size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot create file: " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  require(out.good(), "short write: " + path);
}

// All containers are little-endian; this library targets little-endian hosts.
class BinaryWriter {
public:
  void magic(const char m[4]) { buf_.insert(buf_.end(), m, m + 4); }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void i32(std::int32_t v) { pod(v); }
  void f32(float v) { pod(v); }
  void f32_array(const float* p, std::size_t n) { raw(p, n * sizeof(float)); }
  void i32_array(const std::int32_t* p, std::size_t n) { raw(p, n * sizeof(std::int32_t)); }
  void bytes(const std::string& s) { raw(s.data(), s.size()); }

  const std::vector<unsigned char>& data() const { return buf_; }
  void save(const std::string& path) const { write_file_bytes(path, buf_.data(), buf_.size()); }

private:
  template <typename T>
  void pod(T v) {
    raw(&v, sizeof(T));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<unsigned char> buf_;
};

class BinaryReader {
public:
  explicit BinaryReader(std::vector<unsigned char> bytes) : buf_(std::move(bytes)) {}
  static BinaryReader from_file(const std::string& path) {
    return BinaryReader(read_file_bytes(path));
  }

  void expect_magic(const char m[4], const std::string& what) {
    require(pos_ + 4 <= buf_.size() && std::memcmp(buf_.data() + pos_, m, 4) == 0,
            "malformed header: bad magic for " + what);
    pos_ += 4;
  }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int32_t i32() { return pod<std::int32_t>(); }
  float f32() { return pod<float>(); }
  std::vector<float> f32_array(std::size_t n) { return pod_array<float>(n); }
  std::vector<std::int32_t> i32_array(std::size_t n) { return pod_array<std::int32_t>(n); }
  std::string bytes(std::size_t n) {
    require(pos_ + n <= buf_.size(), "truncated file");
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

private:
  template <typename T>
  T pod() {
    require(pos_ + sizeof(T) <= buf_.size(), "truncated file");
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  template <typename T>
  std::vector<T> pod_array(std::size_t n) {
    require(pos_ + n * sizeof(T) <= buf_.size(), "truncated file");
    std::vector<T> v(n);
    if (n) std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return v;
  }
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace cthgr
