#include "odvc/codec.hpp"

#include "odvc/errors.hpp"
#include "odvc/range_coder.hpp"

#include <algorithm>
#include <limits>

namespace odvc {

std::vector<std::uint8_t> PFramePayload::serialize() const {
  std::vector<std::uint8_t> out;
  out.reserve(8 + motion.size() + residual.size());
  put_u32(out, static_cast<std::uint32_t>(motion.size()));
  out.insert(out.end(), motion.begin(), motion.end());
  put_u32(out, static_cast<std::uint32_t>(residual.size()));
  out.insert(out.end(), residual.begin(), residual.end());
  return out;
}

PFramePayload PFramePayload::parse(std::span<const std::uint8_t> bytes, int latent_height, int latent_width,
                                   const ModelHash& hash) {
  PFramePayload p;
  std::size_t pos = 0;
  const std::uint32_t mv_len = get_u32(bytes, pos);
  if (mv_len > bytes.size() - pos) throw CorruptStreamError("P-frame payload: motion length out of range");
  p.motion.assign(bytes.begin() + pos, bytes.begin() + pos + mv_len);
  pos += mv_len;
  const std::uint32_t res_len = get_u32(bytes, pos);
  if (res_len != bytes.size() - pos) throw CorruptStreamError("P-frame payload: residual length mismatch");
  p.residual.assign(bytes.begin() + pos, bytes.end());
  p.latent_height = latent_height;
  p.latent_width = latent_width;
  p.motion_symbols = p.residual_symbols = std::int64_t(latent_height) * latent_width * kLatentChannels;
  p.model_hash = hash;
  p.checksum = crc32_of(bytes);
  return p;
}

std::optional<Shape> PFrameTrace::shape_of(const std::string& name) const {
  for (const auto& [n, s] : tensors) {
    if (n == name) return s;
  }
  return std::nullopt;
}

namespace {

void record(PFrameTrace* trace, const char* name, const Shape& shape) {
  if (trace != nullptr) trace->tensors.emplace_back(name, shape);
}

void check_frame_pair(const Frame& reference, const Frame& raw) {
  if (reference.pixels().shape() != raw.pixels().shape()) {
    throw ResolutionError("reference " + reference.pixels().shape().str() + " and frame " +
                          raw.pixels().shape().str() + " differ in shape");
  }
  if (raw.height() % 16 != 0 || raw.width() % 16 != 0) {
    throw ResolutionError("P-frame " + raw.pixels().shape().str() + " is not a multiple of 16");
  }
}

}  // namespace

Codec::Codec(CodecModel<float> model)
    : model_(std::move(model)),
      hash_(model_.topology_hash()),
      motion_tables_(build_cdf_tables(model_.motion_prior)),
      residual_tables_(build_cdf_tables(model_.residual_prior)) {}

Codec::Prediction Codec::predict(const Frame& reference, const SymbolGrid& motion, PFrameTrace* trace) const {
  const Var<float> m_hat(from_symbols(motion));
  Prediction p;
  p.flow_hat = mv_synthesis(m_hat, model_.motion);
  record(trace, "v_hat", p.flow_hat.shape());
  p.warped = warp(reference.var(), p.flow_hat);
  record(trace, "warped", p.warped.shape());
  MotionCompensationNet<float>::Trace mc_trace;
  p.x_bar = model_.mc.forward(reference.var(), p.warped, p.flow_hat, trace != nullptr ? &mc_trace : nullptr);
  record(trace, "x_bar", p.x_bar.shape());
  if (trace != nullptr) trace->additions = mc_trace.additions;
  return p;
}

Frame Codec::reconstruct(const Prediction& prediction, const SymbolGrid& residual, PFrameTrace* trace) const {
  const Var<float> y_hat(from_symbols(residual));
  const Var<float> r_hat = res_synthesis(y_hat, model_.residual);
  record(trace, "r_hat", r_hat.shape());
  require_same_shape(prediction.x_bar.shape(), r_hat.shape(), "reconstruction");
  if (trace != nullptr) trace->additions.emplace_back(prediction.x_bar.shape(), r_hat.shape());
  Frame out = clip_to_frame(add(prediction.x_bar, r_hat).value());
  record(trace, "x_hat", out.pixels().shape());
  return out;
}

PFrameResult Codec::encode_pframe(const Frame& reference, const Frame& raw, PFrameTrace* trace) const {
  check_frame_pair(reference, raw);
  NoGradGuard no_grad;
  record(trace, "x_ref", reference.pixels().shape());
  record(trace, "x_t", raw.pixels().shape());
  const Var<float> flow = model_.flow.estimate(reference.var(), raw.var());
  record(trace, "v_t", flow.shape());
  const Var<float> m = mv_analysis(flow, model_.motion);
  record(trace, "m_t", m.shape());
  const SymbolGrid m_sym = to_symbols(quantize(m, QuantizeMode::kTest).value());
  record(trace, "m_hat", m_sym.shape);

  const Prediction pred = predict(reference, m_sym, trace);
  const Var<float> r = sub(raw.var(), pred.x_bar);
  record(trace, "r_t", r.shape());
  const Var<float> y = res_analysis(r, model_.residual);
  record(trace, "y_t", y.shape());
  const SymbolGrid y_sym = to_symbols(quantize(y, QuantizeMode::kTest).value());
  record(trace, "y_hat", y_sym.shape);

  PFrameResult out;
  out.reconstruction = reconstruct(pred, y_sym, trace);
  out.payload.motion = range_encode(m_sym, motion_tables_);
  out.payload.residual = range_encode(y_sym, residual_tables_);
  out.payload.motion_symbols = m_sym.shape.size();
  out.payload.residual_symbols = y_sym.shape.size();
  out.payload.latent_height = m_sym.shape.height;
  out.payload.latent_width = m_sym.shape.width;
  out.payload.model_hash = hash_;
  out.payload.checksum = crc32_of(out.payload.serialize());
  return out;
}

Frame Codec::decode_pframe(const Frame& reference, const PFramePayload& payload) const {
  if (payload.model_hash != hash_) {
    throw ModelMismatchError("payload was produced by model " + hex(payload.model_hash).substr(0, 16) +
                             ", decoding model is " + hex(hash_).substr(0, 16));
  }
  if (crc32_of(payload.serialize()) != payload.checksum) throw CorruptStreamError("P-frame payload checksum mismatch");
  if (reference.height() != payload.latent_height * 16 || reference.width() != payload.latent_width * 16) {
    throw ResolutionError("reference " + reference.pixels().shape().str() + " does not match latent grid " +
                          std::to_string(payload.latent_height) + "x" + std::to_string(payload.latent_width));
  }
  const Shape latent{kLatentChannels, payload.latent_height, payload.latent_width};
  if (payload.motion_symbols != latent.size() || payload.residual_symbols != latent.size()) {
    throw CorruptStreamError("P-frame payload: symbol count does not match the latent grid");
  }
  NoGradGuard no_grad;
  const SymbolGrid m_sym = range_decode(payload.motion, motion_tables_, latent);
  const SymbolGrid y_sym = range_decode(payload.residual, residual_tables_, latent);
  return reconstruct(predict(reference, m_sym, nullptr), y_sym, nullptr);
}

PFrameResult encode_pframe(const Frame& reference, const Frame& raw, const CodecModel<float>& model) {
  return Codec(model.clone()).encode_pframe(reference, raw);
}

Frame decode_pframe(const Frame& reference, const PFramePayload& payload, const CodecModel<float>& model) {
  return Codec(model.clone()).decode_pframe(reference, payload);
}

namespace {

std::uint16_t checked_u16(int v, const char* what) {
  if (v <= 0 || v > std::numeric_limits<std::uint16_t>::max()) {
    throw ResolutionError(std::string(what) + " " + std::to_string(v) + " does not fit the container");
  }
  return static_cast<std::uint16_t>(v);
}

}  // namespace

EncodedSequence encode_sequence(const std::vector<Frame>& frames, const Codec& codec, const IFrameCodec& iframe,
                                const SequenceOptions& options) {
  if (frames.empty()) throw std::invalid_argument("encode_sequence: no frames");
  if (options.gop < 1) throw std::invalid_argument("encode_sequence: GOP must be >= 1");
  const int height = frames.front().height();
  const int width = frames.front().width();
  const int quality = options.iframe_quality.value_or(iframe_quality_for(codec.model().meta));

  Container c;
  ContainerHeader& h = c.header;
  h.original_width = checked_u16(width, "width");
  h.original_height = checked_u16(height, "height");
  h.frame_count = static_cast<std::uint32_t>(frames.size());
  h.gop = checked_u16(options.gop, "GOP");
  h.metric = codec.model().meta.metric;
  h.lambda = static_cast<float>(codec.model().meta.lambda);
  h.model_hash = codec.hash();

  EncodedSequence out;
  Frame reference;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].height() != height || frames[t].width() != width) {
      throw ResolutionError("frame " + std::to_string(t) + " is " + frames[t].pixels().shape().str() +
                            ", sequence is " + frames.front().pixels().shape().str());
    }
    const PaddedFrame padded = validate_or_pad(frames[t], options.policy);
    if (t == 0) {
      h.padded_width = checked_u16(padded.frame.width(), "padded width");
      h.padded_height = checked_u16(padded.frame.height(), "padded height");
    }
    FrameRecord rec;
    Frame recon;
    if (t % std::size_t(options.gop) == 0) {
      rec.type = FrameType::kIntra;
      IFrameResult r = iframe.encode(padded.frame, quality);
      rec.payload.push_back(iframe.id());
      rec.payload.insert(rec.payload.end(), r.bytes.begin(), r.bytes.end());
      recon = std::move(r.reconstruction);
    } else {
      rec.type = FrameType::kPredicted;
      if (options.on_pframe) options.on_pframe(static_cast<int>(t), reference, padded.frame);
      PFrameResult r = codec.encode_pframe(reference, padded.frame);
      rec.payload = r.payload.serialize();
      recon = std::move(r.reconstruction);
    }
    out.record_bytes.push_back(rec.payload.size() + kRecordOverheadBytes);
    out.types.push_back(rec.type);
    out.reconstructions.push_back(crop(recon, height, width));
    reference = std::move(recon);
    c.records.push_back(std::move(rec));
  }
  out.bytes = write_container(c);
  return out;
}

EncodedSequence encode_sequence(const SequenceManifest& manifest, const Codec& codec, const IFrameCodec& iframe,
                                SequenceOptions options) {
  manifest.validate();
  return encode_sequence(load_frames(manifest), codec, iframe, options);
}

std::vector<Frame> decode_sequence(std::span<const std::uint8_t> bytes, const Codec& codec,
                                   const IFrameCodec* iframe) {
  const Container c = parse_container(bytes);
  const ContainerHeader& h = c.header;
  if (h.model_hash != codec.hash()) {
    throw ModelMismatchError("container was encoded with model " + hex(h.model_hash).substr(0, 16) +
                             ", decoding model is " + hex(codec.hash()).substr(0, 16));
  }
  std::vector<Frame> frames;
  frames.reserve(c.records.size());
  Frame reference;
  for (std::size_t t = 0; t < c.records.size(); ++t) {
    const FrameRecord& rec = c.records[t];
    const FrameType expected = t % h.gop == 0 ? FrameType::kIntra : FrameType::kPredicted;
    if (rec.type != expected) throw CorruptStreamError("frame " + std::to_string(t) + " has the wrong frame type");
    Frame recon;
    if (rec.type == FrameType::kIntra) {
      if (rec.payload.empty()) throw CorruptStreamError("empty I-frame record");
      const std::uint8_t id = rec.payload.front();
      const std::span<const std::uint8_t> body(rec.payload.data() + 1, rec.payload.size() - 1);
      if (iframe != nullptr) {
        if (iframe->id() != id) throw FormatError("I-frame codec mismatch: stream uses codec id " + std::to_string(id));
        recon = iframe->decode(body);
      } else {
        recon = iframe_codec_for_id(id)->decode(body);
      }
      if (recon.height() != h.padded_height || recon.width() != h.padded_width) {
        throw CorruptStreamError("I-frame " + std::to_string(t) + " has the wrong size");
      }
    } else {
      const PFramePayload p = PFramePayload::parse(rec.payload, h.padded_height / 16, h.padded_width / 16, h.model_hash);
      recon = codec.decode_pframe(reference, p);
    }
    frames.push_back(crop(recon, h.original_height, h.original_width));
    reference = std::move(recon);
  }
  return frames;
}

}  // namespace odvc
