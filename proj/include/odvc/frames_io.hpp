#pragma once

#include "odvc/layers.hpp"
#include "odvc/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace odvc {

/// One RGB picture, channels R,G,B, values in [0,1], both sides >= 16.
class Frame {
 public:
  Frame() = default;
  /// Validates the invariants; throws std::invalid_argument on violation.
  explicit Frame(Tensor<float> pixels);

  [[nodiscard]] const Tensor<float>& pixels() const { return pixels_; }
  [[nodiscard]] int height() const { return pixels_.height(); }
  [[nodiscard]] int width() const { return pixels_.width(); }
  [[nodiscard]] Var<float> var() const { return Var<float>(pixels_); }

  friend bool operator==(const Frame& a, const Frame& b) {
    return a.pixels_.shape() == b.pixels_.shape() && a.pixels_.matrix() == b.pixels_.matrix();
  }

 private:
  Tensor<float> pixels_;
};

/// Clips to [0,1] and wraps; for network outputs headed to reconstruction.
Frame clip_to_frame(const Tensor<float>& values);

Frame load_frame(const std::filesystem::path& path);
/// Writes an 8-bit RGB PNG (values rounded to the nearest of 256 levels).
void save_frame(const std::filesystem::path& path, const Frame& frame);
std::vector<std::uint8_t> encode_png(const Frame& frame);
Frame decode_png(const std::vector<std::uint8_t>& bytes);
/// Rounds every sample to the 8-bit grid, i.e. what a PNG round-trip yields.
Frame quantize_8bit(const Frame& frame);

enum class ResolutionPolicy { kReject, kPad };

struct PaddedFrame {
  Frame frame;
  int original_height = 0;
  int original_width = 0;
};

/// Returns multiple-of-16 frames untouched; otherwise rejects or
/// edge-replicates to the right/bottom up to the next multiple of 16.
PaddedFrame validate_or_pad(const Frame& frame, ResolutionPolicy policy);
Frame crop(const Frame& frame, int height, int width);
Frame crop(const Frame& frame, int top, int left, int height, int width);

inline int round_up16(int v) { return (v + 15) / 16 * 16; }

struct SequenceManifest {
  std::vector<std::filesystem::path> frames;
  int width = 0;
  int height = 0;
  int count = 0;
  int gop = 10;

  /// N >= 1, count matches the path list, G >= 1, positive dims.
  void validate() const;
};

inline constexpr const char* kManifestName = "manifest.txt";
inline constexpr const char* kDefaultFramePattern = "f%03d.png";

/// printf-style pattern with one integer field, frames numbered from 1.
std::string frame_name(const std::string& pattern, int index);

/// Reads `dir/manifest.txt` when present, otherwise discovers consecutive
/// frames matching `pattern` and takes the size from the first one.
SequenceManifest read_sequence(const std::filesystem::path& dir, const std::string& pattern = kDefaultFramePattern,
                               int default_gop = 10);
void write_manifest(const std::filesystem::path& dir, const SequenceManifest& manifest);
/// Writes frames as numbered PNGs plus the sidecar manifest.
SequenceManifest write_sequence(const std::filesystem::path& dir, const std::vector<Frame>& frames, int gop,
                                const std::string& pattern = kDefaultFramePattern);
std::vector<Frame> load_frames(const SequenceManifest& manifest);

/// Vimeo-style septuplet folders (im1.png ... im7.png) below `root`.
std::vector<SequenceManifest> discover_septuplets(const std::filesystem::path& root);

/// >= 2 consecutive frames cut from the same square window.
struct TrainingClip {
  std::vector<Frame> frames;
  int top = 0;
  int left = 0;
  int first_index = 0;
};

/// Deterministic stream of training clips drawn from in-memory frames.
class ClipSampler {
 public:
  /// crop is snapped down to a multiple of 16.
  ClipSampler(std::vector<Frame> frames, int clip_len, int crop, std::uint64_t seed);
  TrainingClip next();
  [[nodiscard]] int crop() const { return crop_; }
  [[nodiscard]] int clip_len() const { return clip_len_; }

 private:
  std::vector<Frame> frames_;
  int clip_len_;
  int crop_;
  Rng rng_;
};

ClipSampler sample_clips(const SequenceManifest& manifest, int clip_len, int crop, std::uint64_t seed);

/// Smooth random texture translated so that frame[t](p) == frame[t-1](p + shift).
std::vector<Frame> make_translation_clip(int size, int count, int shift_x, int shift_y, std::uint64_t seed);

}  // namespace odvc
