#pragma once

// Little-endian byte encoding shared by the binary artifact formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

#include "loclesion/error.hpp"

namespace loclesion::binary {

class Writer {
 public:
  void bytes(std::string_view b) { out_.append(b); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out_.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out_.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  /// u32 byte length, then the bytes
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  void f32s(std::span<const float> values) {
    out_.reserve(out_.size() + 4 * values.size());
    for (float v : values) f32(v);
  }

  const std::string& data() const& { return out_; }
  std::string data() && { return std::move(out_); }

 private:
  std::string out_;
};

/// Bounds-checked reader; running past the end raises TruncatedPayload.
class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
  std::uint32_t u32() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[k])) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    auto b = bytes(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[k])) << (8 * k);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(bytes(n));
  }

  /// Checks that `count` items of `width` bytes are present before any
  /// allocation is sized from an untrusted count.
  void need_items(std::uint64_t count, std::uint64_t width) {
    if (width != 0 && count > remaining() / width) truncated();
  }

 private:
  void need(std::size_t n) {
    if (n > remaining()) truncated();
  }
  [[noreturn]] void truncated() {
    fail(ErrorCode::TruncatedPayload, "payload ends at byte " + std::to_string(in_.size()) +
                                          " while reading at " + std::to_string(pos_));
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace loclesion::binary
