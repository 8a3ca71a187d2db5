#pragma once

#include "odvc/bottleneck.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace odvc {

/// 32-bit range coder over 16-bit frequency tables with byte-wise carry
/// propagation. The stream is the big-endian low register, flushed with
/// four bytes; the always-zero leading byte is not stored.
class RangeEncoder {
 public:
  /// Codes the interval [start, start + size) out of 2^16.
  void encode(std::uint32_t start, std::uint32_t size);
  /// Sixteen uniformly distributed bits.
  void encode_raw16(std::uint32_t value) { encode(value & 0xFFFFu, 1); }
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  bool leading_ = true;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);

  /// Returns the index i with cdf[i] <= target < cdf[i+1] and consumes it.
  int decode(std::span<const std::uint32_t> cdf);
  std::uint32_t decode_raw16();
  /// True once every stored byte has been consumed.
  [[nodiscard]] bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  std::uint8_t next_byte();
  void normalize();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

/// Codes symbols in traversal order; element i belongs to channel i / plane.
/// Out-of-support symbols go through the escape slot followed by their raw
/// 32-bit two's-complement value (high half first).
std::vector<std::uint8_t> range_encode(const SymbolGrid& symbols, const CdfTable& tables);
/// Inverse of range_encode for a grid of `shape`; throws CorruptStreamError
/// on truncated or over-long input.
SymbolGrid range_decode(std::span<const std::uint8_t> bytes, const CdfTable& tables, const Shape& shape);

}  // namespace odvc
