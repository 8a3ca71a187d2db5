#include "odvc/frames_io.hpp"

#include "odvc/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace odvc {

namespace fs = std::filesystem;

Frame::Frame(Tensor<float> pixels) : pixels_(std::move(pixels)) {
  if (pixels_.channels() != 3) {
    throw std::invalid_argument("frame must have 3 channels, got " + std::to_string(pixels_.channels()));
  }
  if (pixels_.height() < 16 || pixels_.width() < 16) {
    throw std::invalid_argument("frame must be at least 16x16, got " + pixels_.shape().str());
  }
  if (!(pixels_.array() >= 0.0f && pixels_.array() <= 1.0f).all()) {
    throw std::invalid_argument("frame values must lie in [0,1]");
  }
}

Frame clip_to_frame(const Tensor<float>& values) {
  Tensor<float> t(values.shape());
  t.array() = values.array().max(0.0f).min(1.0f);
  return Frame(std::move(t));
}

namespace {

struct PngReadState {
  const std::vector<std::uint8_t>* bytes;
  std::size_t offset;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* state = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (state->offset + n > state->bytes->size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, state->bytes->data() + state->offset, n);
  state->offset += n;
}

void write_to_memory(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_noop(png_structp) {}

}  // namespace

Frame decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a PNG image");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw FormatError("libpng initialisation failed");
  PngReadState state{&bytes, 0};
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  const char* volatile failure = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(failure ? failure : "corrupt PNG data");
  }
  png_set_read_fn(png, &state, read_from_memory);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (depth == 16) {
    failure = "16-bit PNG is not supported";
    png_error(png, failure);
  }
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      (png_get_valid(png, info, PNG_INFO_tRNS) && color == PNG_COLOR_TYPE_PALETTE)) {
    failure = "image must have exactly 3 channels (RGB)";
    png_error(png, failure);
  }
  png_read_update_info(png, info);
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int width = static_cast<int>(png_get_image_width(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<float> t(3, height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) t(c, y, x) = float(rows[y][3 * x + c]) / 255.0f;
    }
  }
  return Frame(std::move(t));
}

std::vector<std::uint8_t> encode_png(const Frame& frame) {
  const int h = frame.height();
  const int w = frame.width();
  std::vector<std::uint8_t> buffer(std::size_t(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        buffer[(std::size_t(y) * w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(frame.pixels()(c, y, x) * 255.0f));
      }
    }
  }
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw FormatError("libpng initialisation failed");
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buffer.data() + std::size_t(y) * w * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, write_to_memory, flush_noop);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Frame quantize_8bit(const Frame& frame) {
  Tensor<float> t(frame.pixels().shape());
  t.array() = (frame.pixels().array() * 255.0f).round() / 255.0f;
  return Frame(std::move(t));
}

Frame load_frame(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open frame " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_frame(const fs::path& path, const Frame& frame) {
  const auto bytes = encode_png(frame);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write frame " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

PaddedFrame validate_or_pad(const Frame& frame, ResolutionPolicy policy) {
  const int h = frame.height();
  const int w = frame.width();
  if (h % 16 == 0 && w % 16 == 0) return {frame, h, w};
  if (policy == ResolutionPolicy::kReject) {
    std::string message;
    if (h % 16) message += "height " + std::to_string(h) + " not multiple of 16";
    if (w % 16) message += (message.empty() ? "" : ", ") + std::string("width ") + std::to_string(w) + " not multiple of 16";
    throw ResolutionError(message);
  }
  const int ph = round_up16(h);
  const int pw = round_up16(w);
  Tensor<float> t(3, ph, pw);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) t(c, y, x) = frame.pixels()(c, std::min(y, h - 1), std::min(x, w - 1));
    }
  }
  return {Frame(std::move(t)), h, w};
}

Frame crop(const Frame& frame, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || top + height > frame.height() || left + width > frame.width()) {
    throw std::invalid_argument("crop window outside the frame");
  }
  Tensor<float> t(3, height, width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) t(c, y, x) = frame.pixels()(c, top + y, left + x);
    }
  }
  return Frame(std::move(t));
}

Frame crop(const Frame& frame, int height, int width) { return crop(frame, 0, 0, height, width); }

void SequenceManifest::validate() const {
  if (count < 1) throw std::invalid_argument("sequence must contain at least one frame");
  if (static_cast<int>(frames.size()) != count) {
    throw std::invalid_argument("manifest declares " + std::to_string(count) + " frames but lists " +
                                std::to_string(frames.size()));
  }
  if (gop < 1) throw std::invalid_argument("GOP size must be >= 1");
  if (width < 16 || height < 16) throw std::invalid_argument("frames must be at least 16x16");
}

std::string frame_name(const std::string& pattern, int index) {
  char buf[512];
  const int n = std::snprintf(buf, sizeof(buf), pattern.c_str(), index);
  if (n < 0 || n >= int(sizeof(buf))) throw std::invalid_argument("bad frame pattern " + pattern);
  return buf;
}

SequenceManifest read_sequence(const fs::path& dir, const std::string& pattern, int default_gop) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  SequenceManifest m;
  m.gop = default_gop;
  const fs::path sidecar = dir / kManifestName;
  if (fs::exists(sidecar)) {
    std::ifstream in(sidecar);
    std::string key;
    std::string file_pattern = pattern;
    while (in >> key) {
      if (key == "width") in >> m.width;
      else if (key == "height") in >> m.height;
      else if (key == "count") in >> m.count;
      else if (key == "gop") in >> m.gop;
      else if (key == "pattern") in >> file_pattern;
      else throw FormatError("unknown manifest key '" + key + "' in " + sidecar.string());
      if (!in) throw FormatError("malformed manifest " + sidecar.string());
    }
    for (int i = 1; i <= m.count; ++i) {
      const fs::path p = dir / frame_name(file_pattern, i);
      if (!fs::exists(p)) throw IoError("manifest lists missing frame " + p.string());
      m.frames.push_back(p);
    }
  } else {
    for (int i = 1;; ++i) {
      const fs::path p = dir / frame_name(pattern, i);
      if (!fs::exists(p)) break;
      m.frames.push_back(p);
    }
    if (m.frames.empty()) throw IoError("no frames matching " + pattern + " in " + dir.string());
    const Frame first = load_frame(m.frames.front());
    m.width = first.width();
    m.height = first.height();
    m.count = static_cast<int>(m.frames.size());
  }
  m.validate();
  return m;
}

void write_manifest(const fs::path& dir, const SequenceManifest& manifest) {
  std::ofstream out(dir / kManifestName);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << "width " << manifest.width << "\nheight " << manifest.height << "\ncount " << manifest.count << "\ngop "
      << manifest.gop << "\n";
}

SequenceManifest write_sequence(const fs::path& dir, const std::vector<Frame>& frames, int gop,
                                const std::string& pattern) {
  if (frames.empty()) throw std::invalid_argument("write_sequence: no frames");
  fs::create_directories(dir);
  SequenceManifest m;
  m.width = frames.front().width();
  m.height = frames.front().height();
  m.count = static_cast<int>(frames.size());
  m.gop = gop;
  for (int i = 0; i < m.count; ++i) {
    const fs::path p = dir / frame_name(pattern, i + 1);
    save_frame(p, frames[i]);
    m.frames.push_back(p);
  }
  std::ofstream out(dir / kManifestName);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << "width " << m.width << "\nheight " << m.height << "\ncount " << m.count << "\ngop " << m.gop << "\npattern "
      << pattern << "\n";
  return m;
}

std::vector<Frame> load_frames(const SequenceManifest& manifest) {
  manifest.validate();
  std::vector<Frame> frames;
  frames.reserve(manifest.frames.size());
  for (const auto& p : manifest.frames) {
    Frame f = load_frame(p);
    if (f.width() != manifest.width || f.height() != manifest.height) {
      throw FormatError(p.string() + " is " + f.pixels().shape().str() + ", manifest declares " +
                        std::to_string(manifest.height) + "x" + std::to_string(manifest.width));
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<SequenceManifest> discover_septuplets(const fs::path& root) {
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "im1.png")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<SequenceManifest> out;
  for (const auto& d : dirs) out.push_back(read_sequence(d, "im%d.png"));
  return out;
}

ClipSampler::ClipSampler(std::vector<Frame> frames, int clip_len, int crop, std::uint64_t seed)
    : frames_(std::move(frames)), clip_len_(clip_len), crop_(crop / 16 * 16), rng_(seed) {
  if (clip_len_ < 2) throw std::invalid_argument("clip length must be >= 2");
  if (clip_len_ > static_cast<int>(frames_.size())) {
    throw std::invalid_argument("clip length " + std::to_string(clip_len_) + " exceeds sequence length " +
                                std::to_string(frames_.size()));
  }
  if (crop_ < 16) throw std::invalid_argument("crop must be at least 16");
  const Frame& f = frames_.front();
  if (crop_ > std::min(f.height(), f.width())) {
    throw std::invalid_argument("crop " + std::to_string(crop_) + " larger than frame " + f.pixels().shape().str());
  }
}

TrainingClip ClipSampler::next() {
  const Frame& f = frames_.front();
  TrainingClip clip;
  clip.first_index = static_cast<int>(rng_.below(frames_.size() - clip_len_ + 1));
  clip.top = static_cast<int>(rng_.below(f.height() - crop_ + 1));
  clip.left = static_cast<int>(rng_.below(f.width() - crop_ + 1));
  for (int i = 0; i < clip_len_; ++i) {
    clip.frames.push_back(odvc::crop(frames_[clip.first_index + i], clip.top, clip.left, crop_, crop_));
  }
  return clip;
}

ClipSampler sample_clips(const SequenceManifest& manifest, int clip_len, int crop, std::uint64_t seed) {
  if (clip_len > manifest.count) {
    throw std::invalid_argument("clip length " + std::to_string(clip_len) + " exceeds sequence length " +
                                std::to_string(manifest.count));
  }
  return ClipSampler(load_frames(manifest), clip_len, crop, seed);
}

std::vector<Frame> make_translation_clip(int size, int count, int shift_x, int shift_y, std::uint64_t seed) {
  const int margin = 8 + std::abs(shift_x) * count + std::abs(shift_y) * count;
  const int canvas = size + 2 * margin;
  Rng rng(seed);
  // blurred noise: sigma 2.5 separable Gaussian, normalised per channel
  const int radius = 7;
  std::vector<double> taps(2 * radius + 1);
  double norm = 0;
  for (int i = -radius; i <= radius; ++i) norm += taps[i + radius] = std::exp(-0.5 * i * i / (2.5 * 2.5));
  for (auto& t : taps) t /= norm;
  std::vector<Eigen::MatrixXd> planes;
  for (int c = 0; c < 3; ++c) {
    Eigen::MatrixXd noise(canvas, canvas);
    for (int y = 0; y < canvas; ++y) {
      for (int x = 0; x < canvas; ++x) noise(y, x) = rng.uniform();
    }
    Eigen::MatrixXd tmp = Eigen::MatrixXd::Zero(canvas, canvas);
    Eigen::MatrixXd blurred = Eigen::MatrixXd::Zero(canvas, canvas);
    for (int y = 0; y < canvas; ++y) {
      for (int x = 0; x < canvas; ++x) {
        for (int t = -radius; t <= radius; ++t) tmp(y, x) += taps[t + radius] * noise(y, std::clamp(x + t, 0, canvas - 1));
      }
    }
    for (int y = 0; y < canvas; ++y) {
      for (int x = 0; x < canvas; ++x) {
        for (int t = -radius; t <= radius; ++t) blurred(y, x) += taps[t + radius] * tmp(std::clamp(y + t, 0, canvas - 1), x);
      }
    }
    const double lo = blurred.minCoeff();
    const double hi = blurred.maxCoeff();
    planes.push_back(((blurred.array() - lo) / (hi - lo) * 0.8 + 0.1).matrix());
  }
  std::vector<Frame> frames;
  for (int t = 0; t < count; ++t) {
    Tensor<float> px(3, size, size);
    const int oy = margin + t * shift_y;
    const int ox = margin + t * shift_x;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) px(c, y, x) = float(planes[c](oy + y, ox + x));
      }
    }
    frames.push_back(quantize_8bit(Frame(std::move(px))));
  }
  return frames;
}

}  // namespace odvc
