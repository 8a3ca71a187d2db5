#include "odvc/evaluate.hpp"

#include "odvc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace odvc {

namespace {

Evaluation score(const std::vector<Frame>& frames, const std::vector<Frame>& decoded, std::size_t bytes,
                 const std::string& sequence, const Codec& codec) {
  Evaluation e;
  e.container_bytes = bytes;
  e.point.sequence = sequence;
  e.point.lambda = codec.model().meta.lambda;
  e.point.metric = codec.model().meta.metric;
  const int h = frames.front().height();
  const int w = frames.front().width();
  e.msssim_scales = max_msssim_scales(h, w);
  double psnr_sum = 0;
  double ssim_sum = 0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    e.frame_psnr.push_back(psnr(frames[t], decoded[t]));
    e.frame_msssim.push_back(msssim(frames[t], decoded[t], e.msssim_scales));
    psnr_sum += e.frame_psnr.back();
    ssim_sum += e.frame_msssim.back();
  }
  const double n = double(frames.size());
  e.point.bpp = double(bytes) * 8.0 / (n * double(w) * double(h));
  e.point.psnr_db = psnr_sum / n;
  e.point.msssim = ssim_sum / n;
  return e;
}

void require_equal(const std::vector<Frame>& encoder, const std::vector<Frame>& decoder) {
  if (encoder.size() != decoder.size()) {
    throw VerificationError("decoder produced " + std::to_string(decoder.size()) + " frames, encoder " +
                            std::to_string(encoder.size()));
  }
  for (std::size_t t = 0; t < encoder.size(); ++t) {
    if (!(encoder[t] == decoder[t])) {
      throw VerificationError("decoder reconstruction of frame " + std::to_string(t) + " differs from the encoder");
    }
  }
}

}  // namespace

Evaluation evaluate(const std::vector<Frame>& frames, const std::string& sequence, const Codec& codec,
                    const IFrameCodec& iframe, const SequenceOptions& options) {
  const EncodedSequence enc = encode_sequence(frames, codec, iframe, options);
  std::vector<Frame> decoded;
  try {
    decoded = decode_sequence(enc.bytes, codec, &iframe);
  } catch (const CorruptStreamError& e) {
    throw VerificationError(std::string("decoding the fresh container failed: ") + e.what());
  }
  require_equal(enc.reconstructions, decoded);
  return score(frames, decoded, enc.bytes.size(), sequence, codec);
}

Evaluation evaluate(const SequenceManifest& manifest, const std::string& sequence, const Codec& codec,
                    const IFrameCodec& iframe, SequenceOptions options) {
  manifest.validate();
  options.gop = manifest.gop;
  return evaluate(load_frames(manifest), sequence, codec, iframe, options);
}

Evaluation verify_container(const std::vector<std::uint8_t>& container, const std::vector<Frame>& frames,
                            const std::string& sequence, const Codec& codec, const IFrameCodec& iframe,
                            const SequenceOptions& options) {
  std::vector<Frame> decoded;
  try {
    decoded = decode_sequence(container, codec, &iframe);
  } catch (const CorruptStreamError& e) {
    throw VerificationError(std::string("container does not decode: ") + e.what());
  } catch (const FormatError& e) {
    throw VerificationError(std::string("container does not decode: ") + e.what());
  }
  const EncodedSequence enc = encode_sequence(frames, codec, iframe, options);
  if (enc.bytes != container) throw VerificationError("container differs from a fresh encode of the input");
  require_equal(enc.reconstructions, decoded);
  return score(frames, decoded, container.size(), sequence, codec);
}

std::string format_rd_csv(const std::vector<RdPoint>& points) {
  std::string out = std::string(kRdCsvHeader) + "\n";
  char line[512];
  for (const auto& p : points) {
    std::snprintf(line, sizeof(line), "%s,%g,%s,%.6f,%.4f,%.6f\n", p.sequence.c_str(), p.lambda,
                  to_string(p.metric).c_str(), p.bpp, p.psnr_db, p.msssim);
    out += line;
  }
  return out;
}

void write_rd_csv(const std::filesystem::path& path, const std::vector<RdPoint>& points) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_rd_csv(points);
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<RdPoint> read_rd_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kRdCsvHeader) throw FormatError(path.string() + ": not an RD CSV");
  std::vector<RdPoint> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw FormatError(path.string() + ": bad row '" + line + "'");
    try {
      RdPoint p;
      p.sequence = cells[0];
      p.lambda = std::stod(cells[1]);
      p.metric = parse_metric(cells[2]);
      p.bpp = std::stod(cells[3]);
      p.psnr_db = std::stod(cells[4]);
      p.msssim = std::stod(cells[5]);
      points.push_back(p);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad row '" + line + "'");
    }
  }
  return points;
}

std::vector<RdPoint> rd_table(std::vector<RdPoint> points) {
  std::stable_sort(points.begin(), points.end(), [](const RdPoint& a, const RdPoint& b) {
    if (a.sequence != b.sequence) return a.sequence < b.sequence;
    if (a.metric != b.metric) return a.metric < b.metric;
    if (a.bpp != b.bpp) return a.bpp < b.bpp;
    return a.lambda < b.lambda;
  });
  return points;
}

std::string rd_plot_svg(const std::vector<RdPoint>& raw) {
  const std::vector<RdPoint> points = rd_table(raw);
  constexpr double kPanelW = 420, kPanelH = 300, kMargin = 50;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::map<std::string, std::vector<RdPoint>> series;
  for (const auto& p : points) series[p.sequence + " (" + to_string(p.metric) + ")"].push_back(p);

  double bmin = 0, bmax = 1;
  if (!points.empty()) {
    bmin = bmax = points.front().bpp;
    for (const auto& p : points) {
      bmin = std::min(bmin, p.bpp);
      bmax = std::max(bmax, p.bpp);
    }
  }
  if (bmax - bmin < 1e-9) bmax = bmin + 1;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * (kPanelW + 2 * kMargin) << "\" height=\""
      << kPanelH + 2 * kMargin + 20 * double(series.size()) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  auto panel = [&](int index, const char* label, auto value) {
    double vmin = 0, vmax = 1;
    bool first = true;
    for (const auto& p : points) {
      const double v = value(p);
      vmin = first ? v : std::min(vmin, v);
      vmax = first ? v : std::max(vmax, v);
      first = false;
    }
    if (vmax - vmin < 1e-9) vmax = vmin + 1;
    const double x0 = index * (kPanelW + 2 * kMargin) + kMargin;
    const double y0 = kMargin;
    svg << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << kPanelW << "\" height=\"" << kPanelH
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << x0 + kPanelW / 2 << "\" y=\"" << y0 + kPanelH + 30 << "\" text-anchor=\"middle\">bpp</text>\n";
    svg << "<text x=\"" << x0 + 4 << "\" y=\"" << y0 - 8 << "\">" << label << "</text>\n";
    svg << "<text x=\"" << x0 << "\" y=\"" << y0 + kPanelH + 14 << "\">" << bmin << "</text>\n";
    svg << "<text x=\"" << x0 + kPanelW << "\" y=\"" << y0 + kPanelH + 14 << "\" text-anchor=\"end\">" << bmax
        << "</text>\n";
    svg << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + kPanelH << "\" text-anchor=\"end\">" << vmin << "</text>\n";
    svg << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + 10 << "\" text-anchor=\"end\">" << vmax << "</text>\n";
    int color = 0;
    for (const auto& [name, pts] : series) {
      const char* c = kColors[color++ % 6];
      svg << "<polyline fill=\"none\" stroke=\"" << c << "\" points=\"";
      for (const auto& p : pts) {
        svg << x0 + (p.bpp - bmin) / (bmax - bmin) * kPanelW << "," << y0 + kPanelH - (value(p) - vmin) / (vmax - vmin) * kPanelH
            << " ";
      }
      svg << "\"/>\n";
      for (const auto& p : pts) {
        svg << "<circle r=\"3\" fill=\"" << c << "\" cx=\"" << x0 + (p.bpp - bmin) / (bmax - bmin) * kPanelW
            << "\" cy=\"" << y0 + kPanelH - (value(p) - vmin) / (vmax - vmin) * kPanelH << "\"/>\n";
      }
    }
  };
  panel(0, "PSNR (dB)", [](const RdPoint& p) { return p.psnr_db; });
  panel(1, "MS-SSIM", [](const RdPoint& p) { return p.msssim; });
  int row = 0;
  for (const auto& [name, pts] : series) {
    svg << "<text x=\"" << kMargin << "\" y=\"" << kPanelH + 2 * kMargin + 14 + 20 * row << "\" fill=\""
        << kColors[row % 6] << "\">" << name << "</text>\n";
    ++row;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace odvc
