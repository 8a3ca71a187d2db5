#include "odvc/iframe.hpp"

#include "odvc/errors.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <unistd.h>

namespace odvc {

namespace fs = std::filesystem;

IFrameResult LosslessPngCodec::encode(const Frame& frame, int) const {
  IFrameResult out;
  out.bytes = encode_png(frame);
  out.reconstruction = decode_png(out.bytes);
  return out;
}

Frame LosslessPngCodec::decode(std::span<const std::uint8_t> bytes) const {
  return decode_png(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

namespace {

std::string env_or(const char* name, const char* fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? v : fallback;
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') {
      q += "'\\''";
    } else {
      q += c;
    }
  }
  return q + "'";
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("odvc-bpg-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, std::span<const std::uint8_t> bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("cannot write " + p.string());
}

void run(const std::string& command, const std::string& what) {
  const int status = std::system((command + " >/dev/null 2>&1").c_str());
  if (status != 0) throw CodecUnavailableError(what + " failed (status " + std::to_string(status) + ")");
}

bool executable(const std::string& name) {
  if (name.find('/') != std::string::npos) return ::access(name.c_str(), X_OK) == 0;
  const char* path = std::getenv("PATH");
  if (path == nullptr) return false;
  std::string dirs = path;
  std::size_t start = 0;
  while (start <= dirs.size()) {
    const std::size_t end = std::min(dirs.find(':', start), dirs.size());
    const fs::path candidate = fs::path(dirs.substr(start, end - start)) / name;
    if (::access(candidate.c_str(), X_OK) == 0) return true;
    start = end + 1;
  }
  return false;
}

}  // namespace

BpgCodec::BpgCodec() : BpgCodec(env_or("ODVC_BPGENC", "bpgenc"), env_or("ODVC_BPGDEC", "bpgdec")) {}

BpgCodec::BpgCodec(std::string encoder, std::string decoder)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {}

bool BpgCodec::available() const { return executable(encoder_) && executable(decoder_); }

IFrameResult BpgCodec::encode(const Frame& frame, int quality) const {
  if (!available()) {
    throw CodecUnavailableError("BPG binaries not found (set ODVC_BPGENC / ODVC_BPGDEC or use the lossless I-frame codec)");
  }
  TempDir tmp;
  const fs::path png = tmp.path() / "in.png";
  const fs::path bpg = tmp.path() / "out.bpg";
  save_frame(png, frame);
  run(quote(encoder_) + " -q " + std::to_string(quality) + " -o " + quote(bpg.string()) + " " + quote(png.string()),
      "bpgenc");
  IFrameResult out;
  out.bytes = read_bytes(bpg);
  out.reconstruction = decode(out.bytes);
  return out;
}

Frame BpgCodec::decode(std::span<const std::uint8_t> bytes) const {
  if (!executable(decoder_)) throw CodecUnavailableError("bpgdec not found (set ODVC_BPGDEC)");
  TempDir tmp;
  const fs::path bpg = tmp.path() / "in.bpg";
  const fs::path png = tmp.path() / "out.png";
  write_bytes(bpg, bytes);
  run(quote(decoder_) + " -o " + quote(png.string()) + " " + quote(bpg.string()), "bpgdec");
  return load_frame(png);
}

namespace {

template <std::size_t N>
int nearest(const std::array<double, N>& lambdas, const std::array<int, N>& values, double lambda) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < N; ++i) {
    if (std::abs(std::log(lambdas[i] / lambda)) < std::abs(std::log(lambdas[best] / lambda))) best = i;
  }
  return values[best];
}

}  // namespace

int bpg_qp_for_lambda(double lambda) { return nearest(kMseLambdas, std::array<int, 4>{37, 32, 27, 22}, lambda); }

int learned_quality_for_lambda(double lambda) {
  return nearest(kMsSsimLambdas, std::array<int, 4>{2, 3, 5, 7}, lambda);
}

int iframe_quality_for(const ModelMeta& meta) {
  return meta.metric == Metric::kMse ? bpg_qp_for_lambda(meta.lambda) : learned_quality_for_lambda(meta.lambda);
}

std::unique_ptr<IFrameCodec> make_iframe_codec(const std::string& name) {
  if (name == "lossless") return std::make_unique<LosslessPngCodec>();
  if (name == "bpg") return std::make_unique<BpgCodec>();
  throw std::invalid_argument("unknown I-frame codec '" + name + "' (expected bpg or lossless)");
}

std::unique_ptr<IFrameCodec> iframe_codec_for_id(std::uint8_t id) {
  switch (id) {
    case kLosslessCodecId: return std::make_unique<LosslessPngCodec>();
    case kBpgCodecId: return std::make_unique<BpgCodec>();
    default: throw FormatError("unknown I-frame codec id " + std::to_string(id));
  }
}

}  // namespace odvc
