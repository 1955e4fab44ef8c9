#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "error.hpp"

namespace dafe {

// Little-endian byte-level encoding shared by the DAFT tensor file and the
// DAFE checkpoint. Doubles are stored as their raw 64-bit pattern, so
// round-trips are bitwise lossless.

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void raw(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void f64_vec(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64_vec() {
    std::uint64_t n = u64();
    if (n > remaining() / 8)
      raise(ErrorCode::format, "truncated float array at offset " + std::to_string(pos_));
    std::vector<double> v(n);
    for (std::uint64_t i = 0; i < n; ++i) v[i] = f64();
    return v;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  void expect_magic(const char* magic4) {
    need(4);
    if (std::memcmp(data_ + pos_, magic4, 4) != 0)
      raise(ErrorCode::format, std::string("bad magic at offset ") + std::to_string(pos_) +
                                   ", expected \"" + magic4 + "\"");
    pos_ += 4;
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > size_)
      raise(ErrorCode::format, "truncated file at offset " + std::to_string(pos_));
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<char>& bytes);

}  // namespace dafe
