#include "odvc/codec.hpp"
#include "odvc/container.hpp"
#include "odvc/errors.hpp"
#include "odvc/iframe.hpp"
#include "odvc/model.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>

using namespace odvc;
namespace fs = std::filesystem;

namespace {

class CodecTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { codec_ = std::make_unique<Codec>(CodecModel<float>::create(11)); }
  static void TearDownTestSuite() { codec_.reset(); }
  static const Codec& codec() { return *codec_; }

 private:
  static std::unique_ptr<Codec> codec_;
};

std::unique_ptr<Codec> CodecTest::codec_;

std::vector<Frame> clip(int size, int n, std::uint64_t seed = 3) { return make_translation_clip(size, n, 2, 1, seed); }

}  // namespace

TEST_F(CodecTest, PayloadSymbolCounts) {
  const auto frames = clip(64, 2);
  const PFrameResult r = codec().encode_pframe(frames[0], frames[1]);
  EXPECT_EQ(r.payload.motion_symbols, 4 * 4 * 128);
  EXPECT_EQ(r.payload.residual_symbols, 4 * 4 * 128);
  EXPECT_EQ(r.payload.latent_height, 4);
  EXPECT_EQ(r.payload.latent_width, 4);
  EXPECT_GE(r.reconstruction.pixels().matrix().minCoeff(), 0.0f);
  EXPECT_LE(r.reconstruction.pixels().matrix().maxCoeff(), 1.0f);
}

TEST_F(CodecTest, ShapeChain) {
  for (auto [h, w] : {std::pair{64, 64}, std::pair{256, 192}}) {
    Rng rng(h);
    Tensor<float> a = uniform_tensor<float>({3, h, w}, 0.5, rng);
    Tensor<float> b = uniform_tensor<float>({3, h, w}, 0.5, rng);
    a.array() += 0.5f;
    b.array() += 0.5f;
    PFrameTrace trace;
    codec().encode_pframe(Frame(a), Frame(b), &trace);
    const Shape frame{3, h, w};
    const Shape flow{2, h, w};
    const Shape latent{128, h / 16, w / 16};
    const std::vector<std::pair<std::string, Shape>> expected{
        {"x_ref", frame}, {"x_t", frame},    {"v_t", flow},     {"m_t", latent},  {"m_hat", latent},
        {"v_hat", flow},  {"warped", frame}, {"x_bar", frame},  {"r_t", frame},   {"y_t", latent},
        {"y_hat", latent}, {"r_hat", frame}, {"x_hat", frame}};
    EXPECT_EQ(trace.tensors, expected);
    for (const auto& [a_shape, b_shape] : trace.additions) EXPECT_EQ(a_shape, b_shape);
  }
}

TEST_F(CodecTest, DecodeMatchesEncoderReconstruction) {
  const auto frames = clip(64, 4, 5);
  for (int t = 1; t < 4; ++t) {
    const PFrameResult r = codec().encode_pframe(frames[t - 1], frames[t]);
    EXPECT_EQ(codec().decode_pframe(frames[t - 1], r.payload), r.reconstruction);
    const PFramePayload parsed =
        PFramePayload::parse(r.payload.serialize(), r.payload.latent_height, r.payload.latent_width, codec().hash());
    EXPECT_EQ(codec().decode_pframe(frames[t - 1], parsed), r.reconstruction);
  }
}

TEST_F(CodecTest, CorruptPayloadIsDetected) {
  const auto frames = clip(64, 2);
  PFrameResult r = codec().encode_pframe(frames[0], frames[1]);
  r.payload.residual[r.payload.residual.size() / 2] ^= 0x40;
  EXPECT_THROW(codec().decode_pframe(frames[0], r.payload), CorruptStreamError);
}

TEST_F(CodecTest, WrongModelIsRejected) {
  const auto frames = clip(64, 2);
  const PFrameResult r = codec().encode_pframe(frames[0], frames[1]);
  ModelMeta meta;
  meta.lambda = 512;
  const CodecModel<float> other = CodecModel<float>::create(11, meta);
  EXPECT_THROW(decode_pframe(frames[0], r.payload, other), ModelMismatchError);
}

TEST_F(CodecTest, ShapeErrors) {
  const auto small = clip(32, 1);
  const auto big = clip(64, 1);
  EXPECT_THROW(codec().encode_pframe(small[0], big[0]), ResolutionError);
}

TEST_F(CodecTest, SingleFrameSequence) {
  const auto frames = clip(64, 1);
  const LosslessPngCodec png;
  const EncodedSequence enc = encode_sequence(frames, codec(), png);
  ASSERT_EQ(enc.types.size(), 1u);
  EXPECT_EQ(enc.types[0], FrameType::kIntra);
  EXPECT_EQ(decode_sequence(enc.bytes, codec()), frames);
  const std::size_t png_bytes = encode_png(frames[0]).size();
  // header, record framing, codec id byte, PNG stream
  EXPECT_EQ(enc.bytes.size(), kHeaderBytes + kRecordOverheadBytes + 1 + png_bytes);
}

TEST_F(CodecTest, GopIndexingAndAccounting) {
  const auto frames = clip(32, 25, 7);
  const LosslessPngCodec png;
  SequenceOptions opt;
  opt.gop = 10;
  const EncodedSequence enc = encode_sequence(frames, codec(), png, opt);
  ASSERT_EQ(enc.types.size(), 25u);
  for (int i = 0; i < 25; ++i) {
    EXPECT_EQ(enc.types[i], i % 10 == 0 ? FrameType::kIntra : FrameType::kPredicted) << i;
  }
  std::size_t total = enc.header_bytes;
  for (std::size_t b : enc.record_bytes) total += b;
  EXPECT_EQ(total, enc.bytes.size());
  const Container c = parse_container(enc.bytes);
  std::size_t payload_bits = 0;
  for (const auto& r : c.records) payload_bits += 8 * (r.payload.size() + kRecordOverheadBytes);
  EXPECT_EQ(8 * enc.bytes.size(), payload_bits + 8 * kHeaderBytes);
  EXPECT_EQ(decode_sequence(enc.bytes, codec()), enc.reconstructions);
}

TEST_F(CodecTest, SequenceIsDeterministic) {
  const auto frames = clip(32, 6, 9);
  const LosslessPngCodec png;
  SequenceOptions opt;
  opt.gop = 4;
  EXPECT_EQ(encode_sequence(frames, codec(), png, opt).bytes, encode_sequence(frames, codec(), png, opt).bytes);
}

TEST_F(CodecTest, PFramesReferenceReconstructions) {
  const auto frames = clip(32, 5, 13);
  const LosslessPngCodec png;
  std::vector<Frame> refs;
  std::vector<int> indices;
  SequenceOptions opt;
  opt.gop = 10;
  opt.on_pframe = [&](int index, const Frame& ref, const Frame& raw) {
    indices.push_back(index);
    refs.push_back(ref);
    EXPECT_EQ(raw, frames[index]);
  };
  const EncodedSequence enc = encode_sequence(frames, codec(), png, opt);
  ASSERT_EQ(indices, (std::vector<int>{1, 2, 3, 4}));
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const int t = indices[k];
    EXPECT_EQ(refs[k], enc.reconstructions[t - 1]);
    if (t > 1) {
      EXPECT_FALSE(refs[k] == frames[t - 1]) << "P-frame " << t << " referenced the raw frame";
    }
  }
}

TEST_F(CodecTest, PaddingRestoresOriginalSize) {
  std::vector<Frame> frames;
  for (const Frame& f : clip(80, 3, 17)) frames.push_back(crop(f, 60, 70));
  const LosslessPngCodec png;
  SequenceOptions reject;
  reject.policy = ResolutionPolicy::kReject;
  EXPECT_THROW(encode_sequence(frames, codec(), png, reject), ResolutionError);
  const EncodedSequence enc = encode_sequence(frames, codec(), png);
  const auto decoded = decode_sequence(enc.bytes, codec());
  ASSERT_EQ(decoded.size(), 3u);
  EXPECT_EQ(decoded[0].height(), 60);
  EXPECT_EQ(decoded[0].width(), 70);
  EXPECT_EQ(decoded[0], frames[0]);
  EXPECT_EQ(decoded, enc.reconstructions);
  const Container c = parse_container(enc.bytes);
  EXPECT_EQ(c.header.original_width, 70);
  EXPECT_EQ(c.header.padded_width, 80);
  EXPECT_EQ(c.header.original_height, 60);
  EXPECT_EQ(c.header.padded_height, 64);
}

TEST_F(CodecTest, ContainerModelMismatch) {
  const auto frames = clip(32, 2);
  const LosslessPngCodec png;
  const EncodedSequence enc = encode_sequence(frames, codec(), png);
  const Codec other(CodecModel<float>::create(12));
  EXPECT_THROW(decode_sequence(enc.bytes, other), ModelMismatchError);
}

TEST(Container, HeaderRoundTrip) {
  Container c;
  c.header.original_width = 70;
  c.header.original_height = 60;
  c.header.padded_width = 80;
  c.header.padded_height = 64;
  c.header.frame_count = 2;
  c.header.gop = 7;
  c.header.metric = Metric::kMsSsim;
  c.header.lambda = 32;
  for (int i = 0; i < 32; ++i) c.header.model_hash[i] = std::uint8_t(i * 7);
  c.records = {{FrameType::kIntra, {1, 2, 3}}, {FrameType::kPredicted, {}}};
  const auto bytes = write_container(c);
  EXPECT_EQ(bytes.size(), kHeaderBytes + 2 * kRecordOverheadBytes + 3);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ODVC");
  const Container back = parse_container(bytes);
  EXPECT_EQ(back.header, c.header);
  EXPECT_EQ(back.records, c.records);
  EXPECT_EQ(write_container(back), bytes);
}

TEST(Container, Corruption) {
  Container c;
  c.header.original_width = c.header.padded_width = 32;
  c.header.original_height = c.header.padded_height = 16;
  c.header.frame_count = 1;
  c.records = {{FrameType::kIntra, {9, 9, 9, 9}}};
  const auto good = write_container(c);
  auto flipped = good;
  flipped[kHeaderBytes + 6] ^= 1;
  EXPECT_THROW(parse_container(flipped), CorruptStreamError);
  EXPECT_THROW(parse_container(std::span(good).first(good.size() - 1)), CorruptStreamError);
  auto longer = good;
  longer.push_back(0);
  EXPECT_THROW(parse_container(longer), CorruptStreamError);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(parse_container(magic), FormatError);
}

TEST(Checkpoint, RoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "odvc_test_ckpt";
  fs::create_directories(dir);
  ModelMeta meta;
  meta.lambda = 2048;
  const CodecModel<float> model = CodecModel<float>::create(21, meta);
  save_model(dir / "m.ckpt", model);
  EXPECT_FALSE(fs::exists(dir / "m.ckpt.tmp"));
  const CodecModel<float> back = load_model(dir / "m.ckpt");
  EXPECT_EQ(back.meta.lambda, 2048);
  EXPECT_EQ(back.topology_hash(), model.topology_hash());
  const auto a = model.parameters();
  const auto b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].var.value().matrix(), b[i].var.value().matrix());
  }
  // a flipped weight byte no longer matches the stored hash
  {
    std::fstream f(dir / "m.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-5, std::ios::end);
    f.put('\x7f');
  }
  EXPECT_THROW(load_model(dir / "m.ckpt"), FormatError);
  EXPECT_THROW(load_model(dir / "missing.ckpt"), IoError);
}

TEST(ModelHash, DependsOnLambdaAndWeights) {
  const auto a = CodecModel<float>::create(1);
  ModelMeta meta;
  meta.lambda = 256;
  EXPECT_NE(a.topology_hash(), CodecModel<float>::create(1, meta).topology_hash());
  EXPECT_NE(a.topology_hash(), CodecModel<float>::create(2).topology_hash());
  EXPECT_EQ(a.topology_hash(), CodecModel<float>::create(1).topology_hash());
  const auto copy = a.clone();
  copy.parameters().front().var.mutable_value().data()[0] += 1.0f;
  EXPECT_NE(a.topology_hash(), copy.topology_hash());
}

TEST(IFrame, LosslessIsExact) {
  const LosslessPngCodec png;
  const Frame f = clip(32, 1)[0];
  const IFrameResult r = png.encode(f, 0);
  EXPECT_EQ(r.reconstruction, f);
  EXPECT_EQ(png.decode(r.bytes), r.reconstruction);
}

TEST(IFrame, QualityTables) {
  EXPECT_EQ(bpg_qp_for_lambda(256), 37);
  EXPECT_EQ(bpg_qp_for_lambda(512), 32);
  EXPECT_EQ(bpg_qp_for_lambda(1024), 27);
  EXPECT_EQ(bpg_qp_for_lambda(2048), 22);
  EXPECT_EQ(learned_quality_for_lambda(8), 2);
  EXPECT_EQ(learned_quality_for_lambda(16), 3);
  EXPECT_EQ(learned_quality_for_lambda(32), 5);
  EXPECT_EQ(learned_quality_for_lambda(64), 7);
  EXPECT_EQ(pretrain_lambda_for(32), 1024.0);
  EXPECT_THROW(make_iframe_codec("jpeg"), std::invalid_argument);
  EXPECT_THROW(iframe_codec_for_id(9), FormatError);
}

TEST(IFrame, MissingBpgBinaries) {
  const BpgCodec bpg("/nonexistent/bpgenc", "/nonexistent/bpgdec");
  EXPECT_FALSE(bpg.available());
  EXPECT_THROW(bpg.encode(clip(32, 1)[0], 27), CodecUnavailableError);
}

TEST(IFrame, BpgRoundTripWhenInstalled) {
  const BpgCodec bpg;
  if (!bpg.available()) GTEST_SKIP() << "bpgenc/bpgdec not installed";
  const Frame f = clip(64, 1)[0];
  const IFrameResult r = bpg.encode(f, 27);
  EXPECT_EQ(bpg.decode(r.bytes), r.reconstruction);
}
