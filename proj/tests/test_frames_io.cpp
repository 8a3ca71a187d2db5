#include "odvc/errors.hpp"
#include "odvc/frames_io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace odvc;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("odvc_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Frame gradient_frame(int h, int w) {
  Tensor<float> t(3, h, w);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) t(c, y, x) = float((x * 7 + y * 13 + c * 61) % 256) / 255.0f;
    }
  }
  return Frame(std::move(t));
}

Frame solid(int h, int w, std::uint8_t level) {
  return Frame(Tensor<float>::constant({3, h, w}, float(level) / 255.0f));
}

}  // namespace

TEST(Frame, RejectsBadInput) {
  EXPECT_THROW(Frame(Tensor<float>(1, 16, 16)), std::invalid_argument);
  EXPECT_THROW(Frame(Tensor<float>(3, 8, 16)), std::invalid_argument);
  EXPECT_THROW(Frame(Tensor<float>::constant({3, 16, 16}, 1.5f)), std::invalid_argument);
}

TEST(FramesIo, PixelScaling) {
  const fs::path dir = scratch_dir("scaling");
  for (int level : {255, 0, 128}) {
    const fs::path p = dir / ("v" + std::to_string(level) + ".png");
    save_frame(p, solid(16, 16, std::uint8_t(level)));
    const Frame f = load_frame(p);
    EXPECT_EQ(f.height(), 16);
    EXPECT_EQ(f.pixels().data()[0], float(level) / 255.0f);
  }
}

TEST(FramesIo, PngRoundTripIsLossless) {
  const fs::path dir = scratch_dir("roundtrip");
  const Frame f = gradient_frame(32, 48);
  save_frame(dir / "a.png", f);
  const Frame once = load_frame(dir / "a.png");
  EXPECT_EQ(once, f);
  save_frame(dir / "b.png", once);
  EXPECT_EQ(load_frame(dir / "b.png"), once);
  EXPECT_EQ(decode_png(encode_png(f)), f);
}

TEST(FramesIo, Quantize8bitMatchesPng) {
  Tensor<float> t(3, 16, 16);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = float(i % 97) / 96.0f;
  const Frame f(std::move(t));
  EXPECT_EQ(decode_png(encode_png(f)), quantize_8bit(f));
}

TEST(FramesIo, MissingOrCorruptFile) {
  const fs::path dir = scratch_dir("corrupt");
  EXPECT_THROW(load_frame(dir / "none.png"), IoError);
  std::ofstream(dir / "bad.png") << "not an image";
  EXPECT_THROW(load_frame(dir / "bad.png"), FormatError);
}

TEST(ValidateOrPad, MultipleOf16Unchanged) {
  const Frame f = gradient_frame(64, 64);
  const PaddedFrame p = validate_or_pad(f, ResolutionPolicy::kReject);
  EXPECT_EQ(p.frame, f);
  EXPECT_EQ(p.original_height, 64);
  EXPECT_EQ(p.original_width, 64);
}

TEST(ValidateOrPad, PadsByEdgeReplication) {
  const Frame f = gradient_frame(60, 70);
  const PaddedFrame p = validate_or_pad(f, ResolutionPolicy::kPad);
  EXPECT_EQ(p.frame.height(), 64);
  EXPECT_EQ(p.frame.width(), 80);
  EXPECT_EQ(p.original_height, 60);
  EXPECT_EQ(p.original_width, 70);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(p.frame.pixels()(c, 63, 79), f.pixels()(c, 59, 69));
    EXPECT_EQ(p.frame.pixels()(c, 10, 75), f.pixels()(c, 10, 69));
    EXPECT_EQ(p.frame.pixels()(c, 62, 5), f.pixels()(c, 59, 5));
  }
  EXPECT_EQ(crop(p.frame, 60, 70), f);
}

TEST(ValidateOrPad, RejectNamesTheBadSide) {
  try {
    validate_or_pad(gradient_frame(60, 70), ResolutionPolicy::kReject);
    FAIL() << "expected ResolutionError";
  } catch (const ResolutionError& e) {
    EXPECT_NE(std::string(e.what()).find("width 70 not multiple of 16"), std::string::npos) << e.what();
  }
}

TEST(Sequence, ManifestRoundTrip) {
  const fs::path dir = scratch_dir("manifest");
  std::vector<Frame> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(gradient_frame(16, 32));
  write_sequence(dir, frames, 5);
  const SequenceManifest m = read_sequence(dir);
  EXPECT_EQ(m.count, 3);
  EXPECT_EQ(m.width, 32);
  EXPECT_EQ(m.height, 16);
  EXPECT_EQ(m.gop, 5);
  EXPECT_EQ(load_frames(m), frames);
  fs::remove(dir / kManifestName);
  const SequenceManifest discovered = read_sequence(dir);
  EXPECT_EQ(discovered.count, 3);
  EXPECT_EQ(discovered.frames.front().filename(), "f001.png");
}

TEST(Sequence, ManifestValidation) {
  SequenceManifest m;
  m.width = 16;
  m.height = 16;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m.frames = {"a.png"};
  m.count = 1;
  m.gop = 0;
  EXPECT_THROW(m.validate(), std::invalid_argument);
}

TEST(ClipSampler, DeterministicForSeed) {
  std::vector<Frame> frames;
  for (int i = 0; i < 7; ++i) frames.push_back(gradient_frame(64, 96));
  ClipSampler a(frames, 2, 32, 42);
  ClipSampler b(frames, 2, 32, 42);
  for (int i = 0; i < 20; ++i) {
    const TrainingClip ca = a.next();
    const TrainingClip cb = b.next();
    EXPECT_EQ(ca.top, cb.top);
    EXPECT_EQ(ca.left, cb.left);
    EXPECT_EQ(ca.first_index, cb.first_index);
    EXPECT_EQ(ca.frames, cb.frames);
  }
}

TEST(ClipSampler, CropFitsExactly) {
  std::vector<Frame> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(solid(256, 448, 9));
  ClipSampler s(frames, 2, 256, 1);
  for (int i = 0; i < 10; ++i) {
    const TrainingClip c = s.next();
    ASSERT_EQ(c.frames.size(), 2u);
    for (const Frame& f : c.frames) {
      EXPECT_EQ(f.height(), 256);
      EXPECT_EQ(f.width(), 256);
    }
    EXPECT_EQ(c.top, 0);
    EXPECT_LE(c.left + 256, 448);
  }
}

TEST(ClipSampler, SnapsCropTo16) {
  std::vector<Frame> frames(2, gradient_frame(64, 64));
  ClipSampler s(frames, 2, 40, 3);
  EXPECT_EQ(s.crop(), 32);
  EXPECT_EQ(s.next().frames.front().width(), 32);
}

TEST(ClipSampler, Preconditions) {
  std::vector<Frame> frames(7, gradient_frame(32, 32));
  EXPECT_THROW(ClipSampler(frames, 8, 32, 0), std::invalid_argument);
  EXPECT_THROW(ClipSampler(frames, 2, 48, 0), std::invalid_argument);
}

TEST(TranslationClip, ShiftHolds) {
  const auto clip = make_translation_clip(64, 3, 2, 0, 5);
  ASSERT_EQ(clip.size(), 3u);
  for (int t = 1; t < 3; ++t) {
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x + 2 < 64; ++x) {
        EXPECT_EQ(clip[t].pixels()(1, y, x), clip[t - 1].pixels()(1, y, x + 2));
      }
    }
  }
}
