#include "odvc/range_coder.hpp"

#include "odvc/errors.hpp"

#include <algorithm>

namespace odvc {

namespace {

constexpr std::uint32_t kTop = 1u << 24;

}  // namespace

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t pending = cache_;
    do {
      if (!leading_) out_.push_back(static_cast<std::uint8_t>(pending + carry));
      leading_ = false;
      pending = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(std::uint32_t start, std::uint32_t size) {
  const std::uint32_t r = range_ >> kProbabilityBits;
  low_ += std::uint64_t(start) * r;
  range_ = size * r;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ >= bytes_.size()) throw CorruptStreamError("range decoder: truncated stream");
  return bytes_[pos_++];
}

void RangeDecoder::normalize() {
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

int RangeDecoder::decode(std::span<const std::uint32_t> cdf) {
  const std::uint32_t r = range_ >> kProbabilityBits;
  const std::uint32_t target = code_ / r;
  if (target >= kProbabilityTotal) throw CorruptStreamError("range decoder: value outside the coding interval");
  // first entry strictly greater than target, minus one
  const auto it = std::upper_bound(cdf.begin() + 1, cdf.end(), target);
  const int index = static_cast<int>(it - cdf.begin()) - 1;
  code_ -= cdf[index] * r;
  range_ = (cdf[index + 1] - cdf[index]) * r;
  normalize();
  return index;
}

std::uint32_t RangeDecoder::decode_raw16() {
  const std::uint32_t r = range_ >> kProbabilityBits;
  const std::uint32_t target = code_ / r;
  if (target >= kProbabilityTotal) throw CorruptStreamError("range decoder: value outside the coding interval");
  code_ -= target * r;
  range_ = r;
  normalize();
  return target;
}

namespace {

void check_tables(const CdfTable& tables, const Shape& shape) {
  if (static_cast<int>(tables.channels.size()) != shape.channels) {
    throw std::invalid_argument("range coder: table has " + std::to_string(tables.channels.size()) +
                                " channels, symbols have " + std::to_string(shape.channels));
  }
}

}  // namespace

std::vector<std::uint8_t> range_encode(const SymbolGrid& symbols, const CdfTable& tables) {
  check_tables(tables, symbols.shape);
  if (static_cast<Eigen::Index>(symbols.values.size()) != symbols.shape.size()) {
    throw std::invalid_argument("range_encode: symbol count does not match shape");
  }
  RangeEncoder enc;
  const Eigen::Index plane = symbols.shape.plane();
  for (std::size_t i = 0; i < symbols.values.size(); ++i) {
    const ChannelCdf& ch = tables.channels[i / plane];
    const std::int64_t index = std::int64_t(symbols.values[i]) - ch.offset;
    if (index >= 0 && index < ch.support()) {
      enc.encode(ch.cdf[index], ch.mass(static_cast<int>(index)));
    } else {
      const int esc = ch.escape_index();
      enc.encode(ch.cdf[esc], ch.mass(esc));
      const auto raw = static_cast<std::uint32_t>(symbols.values[i]);
      enc.encode_raw16(raw >> 16);
      enc.encode_raw16(raw & 0xFFFFu);
    }
  }
  return enc.finish();
}

SymbolGrid range_decode(std::span<const std::uint8_t> bytes, const CdfTable& tables, const Shape& shape) {
  check_tables(tables, shape);
  SymbolGrid out;
  out.shape = shape;
  out.values.resize(shape.size());
  RangeDecoder dec(bytes);
  const Eigen::Index plane = shape.plane();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const ChannelCdf& ch = tables.channels[i / plane];
    const int index = dec.decode(ch.cdf);
    if (index == ch.escape_index()) {
      const std::uint32_t high = dec.decode_raw16();
      const std::uint32_t low = dec.decode_raw16();
      out.values[i] = static_cast<std::int32_t>((high << 16) | low);
    } else {
      out.values[i] = ch.offset + index;
    }
  }
  if (!dec.exhausted()) throw CorruptStreamError("range decoder: trailing bytes after the last symbol");
  return out;
}

}  // namespace odvc
