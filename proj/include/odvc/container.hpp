#pragma once

#include "odvc/model.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace odvc {

enum class FrameType : std::uint8_t { kIntra = 0, kPredicted = 1 };

inline constexpr std::uint8_t kContainerVersion = 1;
inline constexpr std::size_t kHeaderBytes = 56;
/// type + length + crc around each record payload.
inline constexpr std::size_t kRecordOverheadBytes = 9;

struct ContainerHeader {
  std::uint8_t version = kContainerVersion;
  std::uint16_t original_width = 0;
  std::uint16_t original_height = 0;
  std::uint16_t padded_width = 0;
  std::uint16_t padded_height = 0;
  std::uint32_t frame_count = 0;
  std::uint16_t gop = 10;
  Metric metric = Metric::kMse;
  float lambda = 0;
  ModelHash model_hash{};

  friend bool operator==(const ContainerHeader&, const ContainerHeader&) = default;
};

struct FrameRecord {
  FrameType type = FrameType::kIntra;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct Container {
  ContainerHeader header;
  std::vector<FrameRecord> records;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

/// Little-endian: "ODVC", u8 version, u16 W,H original, u16 W,H padded,
/// u32 N, u16 G, u8 metric, f32 lambda, 32-byte hash, then per frame
/// [u8 type][u32 len][payload][u32 crc].
std::vector<std::uint8_t> write_container(const Container& container);
/// Checks magic, version, record count, every CRC and the total length.
Container parse_container(std::span<const std::uint8_t> bytes);

/// Minimal little-endian cursor helpers shared by the payload formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t& pos);

}  // namespace odvc
