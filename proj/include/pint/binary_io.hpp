#pragma once

// Little-endian primitives shared by the weight and dataset file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "pint/errors.hpp"

namespace pint::io {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!os) throw IoError("write to '" + path + "' failed");
  }

 private:
  std::vector<std::uint8_t> buf_;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileNotFoundError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is), {});
}

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> data, std::string what)
      : data_(std::move(data)), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n)
      throw TruncatedError(what_ + ": truncated at byte " + std::to_string(pos_) + " (needed " +
                           std::to_string(n) + " more)");
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{data_[pos_++]} << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  void expect_magic(std::string_view magic) {
    if (data_.size() - pos_ < magic.size() ||
        std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0)
      throw FormatError(what_ + ": bad magic, expected '" + std::string(magic) + "'");
    pos_ += magic.size();
  }

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::vector<std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace pint::io
