#include "odvc/container.hpp"

#include "odvc/errors.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>

namespace odvc {

namespace {

constexpr char kMagic[4] = {'O', 'D', 'V', 'C'};

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void need(std::span<const std::uint8_t> bytes, std::size_t pos, std::size_t n, const char* what) {
  if (pos + n > bytes.size()) throw CorruptStreamError(std::string("container truncated in ") + what);
}

std::uint8_t get_u8(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  need(bytes, pos, 1, "header");
  return bytes[pos++];
}

std::uint16_t get_u16(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  need(bytes, pos, 2, "header");
  const auto v = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
  pos += 2;
  return v;
}

}  // namespace

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  need(bytes, pos, 4, "length field");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::vector<std::uint8_t> write_container(const Container& c) {
  const ContainerHeader& h = c.header;
  if (c.records.size() != h.frame_count) throw std::invalid_argument("container: record count differs from header N");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u8(out, h.version);
  put_u16(out, h.original_width);
  put_u16(out, h.original_height);
  put_u16(out, h.padded_width);
  put_u16(out, h.padded_height);
  put_u32(out, h.frame_count);
  put_u16(out, h.gop);
  put_u8(out, static_cast<std::uint8_t>(h.metric));
  put_u32(out, std::bit_cast<std::uint32_t>(h.lambda));
  out.insert(out.end(), h.model_hash.begin(), h.model_hash.end());
  for (const FrameRecord& r : c.records) {
    put_u8(out, static_cast<std::uint8_t>(r.type));
    put_u32(out, static_cast<std::uint32_t>(r.payload.size()));
    out.insert(out.end(), r.payload.begin(), r.payload.end());
    put_u32(out, crc32_of(r.payload));
  }
  return out;
}

Container parse_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not an ODVC container");
  }
  std::size_t pos = 4;
  Container c;
  ContainerHeader& h = c.header;
  h.version = get_u8(bytes, pos);
  if (h.version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(h.version));
  h.original_width = get_u16(bytes, pos);
  h.original_height = get_u16(bytes, pos);
  h.padded_width = get_u16(bytes, pos);
  h.padded_height = get_u16(bytes, pos);
  h.frame_count = get_u32(bytes, pos);
  h.gop = get_u16(bytes, pos);
  const std::uint8_t metric = get_u8(bytes, pos);
  if (metric > 1) throw CorruptStreamError("container: bad metric byte");
  h.metric = static_cast<Metric>(metric);
  h.lambda = std::bit_cast<float>(get_u32(bytes, pos));
  std::memcpy(h.model_hash.data(), bytes.data() + pos, h.model_hash.size());
  pos += h.model_hash.size();

  if (h.gop == 0 || h.frame_count == 0) throw CorruptStreamError("container: zero GOP or frame count");
  if (h.padded_width % 16 != 0 || h.padded_height % 16 != 0 || h.padded_width < h.original_width ||
      h.padded_height < h.original_height || h.padded_width - h.original_width >= 16 ||
      h.padded_height - h.original_height >= 16) {
    throw CorruptStreamError("container: inconsistent frame dimensions");
  }
  // Every record costs at least its framing, so a bogus N is caught before allocating.
  if (h.frame_count > (bytes.size() - kHeaderBytes) / kRecordOverheadBytes) {
    throw CorruptStreamError("container: frame count exceeds file length");
  }
  c.records.reserve(h.frame_count);
  for (std::uint32_t i = 0; i < h.frame_count; ++i) {
    need(bytes, pos, 5, "record header");
    FrameRecord r;
    const std::uint8_t type = bytes[pos++];
    if (type > 1) throw CorruptStreamError("container: bad frame type in record " + std::to_string(i));
    r.type = static_cast<FrameType>(type);
    const std::uint32_t len = get_u32(bytes, pos);
    need(bytes, pos, std::size_t(len) + 4, "record payload");
    r.payload.assign(bytes.begin() + pos, bytes.begin() + pos + len);
    pos += len;
    const std::uint32_t crc = get_u32(bytes, pos);
    if (crc != crc32_of(r.payload)) throw CorruptStreamError("container: CRC mismatch in record " + std::to_string(i));
    c.records.push_back(std::move(r));
  }
  if (pos != bytes.size()) throw CorruptStreamError("container: trailing bytes after the last record");
  return c;
}

}  // namespace odvc
