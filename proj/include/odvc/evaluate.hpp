#pragma once

#include "odvc/codec.hpp"
#include "odvc/metrics.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace odvc {

struct RdPoint {
  std::string sequence;
  double lambda = 0;
  Metric metric = Metric::kMse;
  /// container bits / (N * W * H), original size.
  double bpp = 0;
  double psnr_db = 0;
  double msssim = 0;
};

struct Evaluation {
  RdPoint point;
  std::vector<double> frame_psnr;
  std::vector<double> frame_msssim;
  std::size_t container_bytes = 0;
  int msssim_scales = 0;
};

/// Encodes, decodes, checks the decoder reproduces the encoder exactly
/// (VerificationError otherwise) and averages per-frame metrics over all frames.
Evaluation evaluate(const std::vector<Frame>& frames, const std::string& sequence, const Codec& codec,
                    const IFrameCodec& iframe, const SequenceOptions& options = {});
Evaluation evaluate(const SequenceManifest& manifest, const std::string& sequence, const Codec& codec,
                    const IFrameCodec& iframe, SequenceOptions options = {});

/// Re-encodes frames and checks an existing container matches byte for byte and
/// decodes to the same reconstructions. Any difference is a VerificationError.
Evaluation verify_container(const std::vector<std::uint8_t>& container, const std::vector<Frame>& frames,
                            const std::string& sequence, const Codec& codec, const IFrameCodec& iframe,
                            const SequenceOptions& options = {});

inline constexpr const char* kRdCsvHeader = "sequence,lambda,metric,bpp,psnr_db,msssim";

void write_rd_csv(const std::filesystem::path& path, const std::vector<RdPoint>& points);
std::string format_rd_csv(const std::vector<RdPoint>& points);
std::vector<RdPoint> read_rd_csv(const std::filesystem::path& path);

/// Merges points and orders them by (sequence, metric, bpp).
std::vector<RdPoint> rd_table(std::vector<RdPoint> points);
/// bpp-vs-PSNR and bpp-vs-MS-SSIM panels, one polyline per (sequence, metric).
std::string rd_plot_svg(const std::vector<RdPoint>& points);

}  // namespace odvc
