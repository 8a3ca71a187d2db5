#pragma once

#include "odvc/frames_io.hpp"
#include "odvc/model.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace odvc {

struct IFrameResult {
  std::vector<std::uint8_t> bytes;
  Frame reconstruction;
};

/// Still-image codec for GOP anchors. decode(encode(f).bytes) must equal
/// encode(f).reconstruction exactly.
class IFrameCodec {
 public:
  virtual ~IFrameCodec() = default;
  [[nodiscard]] virtual std::uint8_t id() const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual IFrameResult encode(const Frame& frame, int quality) const = 0;
  [[nodiscard]] virtual Frame decode(std::span<const std::uint8_t> bytes) const = 0;
};

inline constexpr std::uint8_t kLosslessCodecId = 1;
inline constexpr std::uint8_t kBpgCodecId = 2;

/// 8-bit PNG. Exact for 8-bit sources, quality is ignored.
class LosslessPngCodec final : public IFrameCodec {
 public:
  [[nodiscard]] std::uint8_t id() const override { return kLosslessCodecId; }
  [[nodiscard]] std::string name() const override { return "lossless"; }
  [[nodiscard]] IFrameResult encode(const Frame& frame, int quality) const override;
  [[nodiscard]] Frame decode(std::span<const std::uint8_t> bytes) const override;
};

/// Drives external bpgenc/bpgdec binaries. Paths come from ODVC_BPGENC and
/// ODVC_BPGDEC, falling back to the names on PATH. quality is the QP.
class BpgCodec final : public IFrameCodec {
 public:
  BpgCodec();
  BpgCodec(std::string encoder, std::string decoder);
  [[nodiscard]] std::uint8_t id() const override { return kBpgCodecId; }
  [[nodiscard]] std::string name() const override { return "bpg"; }
  [[nodiscard]] IFrameResult encode(const Frame& frame, int quality) const override;
  [[nodiscard]] Frame decode(std::span<const std::uint8_t> bytes) const override;
  /// True when both binaries can be executed.
  [[nodiscard]] bool available() const;

 private:
  std::string encoder_;
  std::string decoder_;
};

/// QP 37/32/27/22 for lambda 256/512/1024/2048; nearest entry otherwise.
int bpg_qp_for_lambda(double lambda);
/// Learned image codec quality 2/3/5/7 for lambda 8/16/32/64.
int learned_quality_for_lambda(double lambda);
int iframe_quality_for(const ModelMeta& meta);

/// "lossless" or "bpg".
std::unique_ptr<IFrameCodec> make_iframe_codec(const std::string& name);
std::unique_ptr<IFrameCodec> iframe_codec_for_id(std::uint8_t id);

}  // namespace odvc
