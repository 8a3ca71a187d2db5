#pragma once

#include "odvc/bottleneck.hpp"
#include "odvc/container.hpp"
#include "odvc/frames_io.hpp"
#include "odvc/iframe.hpp"
#include "odvc/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace odvc {

/// Two independently decodable range-coded streams for one P-frame.
struct PFramePayload {
  std::vector<std::uint8_t> motion;
  std::vector<std::uint8_t> residual;
  std::int64_t motion_symbols = 0;
  std::int64_t residual_symbols = 0;
  int latent_height = 0;
  int latent_width = 0;
  ModelHash model_hash{};
  /// CRC32 of serialize().
  std::uint32_t checksum = 0;

  /// [u32 mv_len][mv][u32 res_len][res]
  [[nodiscard]] std::vector<std::uint8_t> serialize() const;
  static PFramePayload parse(std::span<const std::uint8_t> bytes, int latent_height, int latent_width,
                             const ModelHash& hash);
};

/// Named intermediate shapes of one encode_pframe call, in execution order.
struct PFrameTrace {
  std::vector<std::pair<std::string, Shape>> tensors;
  std::vector<std::pair<Shape, Shape>> additions;

  [[nodiscard]] std::optional<Shape> shape_of(const std::string& name) const;
};

struct PFrameResult {
  PFramePayload payload;
  Frame reconstruction;
};

/// A model prepared for test-time coding: weights, hash and CDF tables are
/// fixed at construction.
class Codec {
 public:
  explicit Codec(CodecModel<float> model);

  [[nodiscard]] const CodecModel<float>& model() const { return model_; }
  [[nodiscard]] const ModelHash& hash() const { return hash_; }
  [[nodiscard]] const CdfTable& motion_tables() const { return motion_tables_; }
  [[nodiscard]] const CdfTable& residual_tables() const { return residual_tables_; }

  PFrameResult encode_pframe(const Frame& reference, const Frame& raw, PFrameTrace* trace = nullptr) const;
  Frame decode_pframe(const Frame& reference, const PFramePayload& payload) const;

 private:
  struct Prediction {
    Var<float> flow_hat;
    Var<float> warped;
    Var<float> x_bar;
  };
  Prediction predict(const Frame& reference, const SymbolGrid& motion, PFrameTrace* trace) const;
  Frame reconstruct(const Prediction& prediction, const SymbolGrid& residual, PFrameTrace* trace) const;

  CodecModel<float> model_;
  ModelHash hash_;
  CdfTable motion_tables_;
  CdfTable residual_tables_;
};

PFrameResult encode_pframe(const Frame& reference, const Frame& raw, const CodecModel<float>& model);
Frame decode_pframe(const Frame& reference, const PFramePayload& payload, const CodecModel<float>& model);

struct SequenceOptions {
  int gop = 10;
  ResolutionPolicy policy = ResolutionPolicy::kPad;
  /// Defaults to the QP / quality paired with the model's lambda.
  std::optional<int> iframe_quality;
  /// Called before each P-frame with (index, reference used, raw frame); both padded.
  std::function<void(int, const Frame&, const Frame&)> on_pframe;
};

struct EncodedSequence {
  std::vector<std::uint8_t> bytes;
  /// Encoder-side reconstructions at the original size.
  std::vector<Frame> reconstructions;
  std::vector<FrameType> types;
  std::size_t header_bytes = kHeaderBytes;
  /// Framed size of each record, overhead included.
  std::vector<std::size_t> record_bytes;
};

/// Frame 0 and every gop-th frame are I-frames; the others predict from the
/// previous reconstruction.
EncodedSequence encode_sequence(const std::vector<Frame>& frames, const Codec& codec, const IFrameCodec& iframe,
                                const SequenceOptions& options = {});
EncodedSequence encode_sequence(const SequenceManifest& manifest, const Codec& codec, const IFrameCodec& iframe,
                                SequenceOptions options = {});

/// iframe may be null, in which case the codec named in each I-frame record is used.
std::vector<Frame> decode_sequence(std::span<const std::uint8_t> bytes, const Codec& codec,
                                   const IFrameCodec* iframe = nullptr);

}  // namespace odvc
