#pragma once

// Little-endian binary file helpers shared by the dataset and checkpoint
// formats. Readers track their offset so format errors can name the byte
// position that failed.

#include "o2o/common.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

namespace o2o {

class BinWriter {
 public:
  explicit BinWriter(const std::string& path)
      : path_(path), f_(path, std::ios::binary | std::ios::trunc) {
    if (!f_) throw FormatError("cannot open for writing: " + path);
  }
  void u8(std::uint8_t v) { put(&v, 1); }
  void u32(std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    put(b, 4);
  }
  void u64(std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    put(b, 8);
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void magic(const char m[4]) { put(reinterpret_cast<const std::uint8_t*>(m), 4); }
  void close() {
    f_.close();
    if (!f_) throw FormatError("write failed: " + path_);
  }

 private:
  void put(const std::uint8_t* p, std::size_t n) {
    f_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!f_) throw FormatError("write failed: " + path_);
  }
  std::string path_;
  std::ofstream f_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path)
      : path_(path), f_(path, std::ios::binary) {
    if (!f_) throw FormatError("cannot open for reading: " + path);
  }
  std::uint8_t u8() {
    std::uint8_t v;
    get(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    get(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint8_t b[8];
    get(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }
  void expect_magic(const char m[4], const char* what) {
    std::uint8_t b[4];
    const std::uint64_t at = offset_;
    get(b, 4);
    for (int i = 0; i < 4; ++i) {
      if (b[i] != static_cast<std::uint8_t>(m[i]))
        throw FormatError(std::string("bad ") + what + " magic at offset " +
                          std::to_string(at) + " in " + path_);
    }
  }
  void expect_eof(const char* what) {
    f_.peek();
    if (!f_.eof())
      throw FormatError(std::string("trailing bytes after ") + what + " at offset " +
                        std::to_string(offset_) + " in " + path_);
  }
  std::uint64_t offset() const { return offset_; }

 private:
  void get(std::uint8_t* p, std::size_t n) {
    f_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f_.gcount()) != n)
      throw FormatError("truncated file at offset " + std::to_string(offset_) +
                        " in " + path_);
    offset_ += n;
  }
  std::string path_;
  std::ifstream f_;
  std::uint64_t offset_ = 0;
};

}  // namespace o2o
