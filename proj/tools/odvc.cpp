#include "odvc/codec.hpp"
#include "odvc/errors.hpp"
#include "odvc/evaluate.hpp"
#include "odvc/training.hpp"

#include <CLI11.hpp>
#include <malloc.h>

#include <fstream>
#include <iostream>
#include <iterator>

namespace fs = std::filesystem;
using namespace odvc;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kBadArgs = 2, kIo = 3, kVerification = 4 };

std::vector<std::uint8_t> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("cannot write " + p.string());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

ResolutionPolicy parse_policy(const std::string& s) {
  if (s == "pad") return ResolutionPolicy::kPad;
  if (s == "reject") return ResolutionPolicy::kReject;
  throw std::invalid_argument("unknown resolution policy '" + s + "'");
}

/// Clips from one sequence directory or from every septuplet under a root.
ClipSource training_data(const fs::path& dir, const std::string& pattern, int crop, std::uint64_t seed) {
  std::vector<SequenceManifest> sequences;
  if (fs::exists(dir / kManifestName) || fs::exists(dir / frame_name(pattern, 1))) {
    sequences.push_back(read_sequence(dir, pattern));
  } else {
    sequences = discover_septuplets(dir);
  }
  if (sequences.empty()) throw IoError("no training sequences under " + dir.string());
  auto samplers = std::make_shared<std::vector<ClipSampler>>();
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const int side = std::min({crop, sequences[i].width, sequences[i].height});
    samplers->push_back(sample_clips(sequences[i], 2, side, seed + i));
  }
  auto pick = std::make_shared<Rng>(seed ^ 0x5DEECE66Dull);
  return [samplers, pick] { return (*samplers)[pick->below(samplers->size())].next().frames; };
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Learned P-frame video codec"};
  app.require_subcommand(1);

  std::string input, model_path, out, iframe_name = "lossless", policy = "pad", in_file, sequence_name;
  std::string pattern = kDefaultFramePattern;
  std::string container_path, data_dir, metric_name = "psnr", init_path, log_path, plot_path;
  int gop = 0;
  double lambda = 1024;
  std::uint64_t seed = 0;
  std::vector<std::string> csv_inputs;

  TrainingSchedule schedule;
  int steps_me = schedule.max_steps[Stage::kMe];
  int steps_m = schedule.max_steps[Stage::kM];
  int steps_mc = schedule.max_steps[Stage::kMc];
  int steps_all = schedule.max_steps[Stage::kAll];
  int crop = 256;

  auto* encode = app.add_subcommand("encode", "Encode a frame sequence into a container");
  encode->add_option("--input", input, "Sequence directory")->required();
  encode->add_option("--model", model_path, "Model checkpoint")->required();
  encode->add_option("--gop", gop, "GOP size (default: manifest value)")->check(CLI::PositiveNumber);
  encode->add_option("--iframe", iframe_name, "I-frame codec")->check(CLI::IsMember({"bpg", "lossless"}));
  encode->add_option("--policy", policy, "Non multiple-of-16 sizes")->check(CLI::IsMember({"pad", "reject"}));
  encode->add_option("--out", out, "Container file")->required();
  encode->add_option("--frame-pattern", pattern, "printf pattern of frame files");

  auto* decode = app.add_subcommand("decode", "Decode a container into PNG frames");
  decode->add_option("--in", in_file, "Container file")->required();
  decode->add_option("--model", model_path, "Model checkpoint")->required();
  decode->add_option("--out", out, "Output directory")->required();
  decode->add_option("--frame-pattern", pattern, "printf pattern of frame files");

  auto* train = app.add_subcommand("train", "Progressive ME -> M -> MC -> ALL training");
  train->add_option("--data", data_dir, "Sequence directory or septuplet root")->required();
  train->add_option("--lambda", lambda, "Rate-distortion trade-off")->required();
  train->add_option("--metric", metric_name, "Distortion")->check(CLI::IsMember({"psnr", "mse", "msssim"}));
  train->add_option("--seed", seed, "Seed");
  train->add_option("--out", out, "Checkpoint to write")->required();
  train->add_option("--init", init_path, "Pretrained MSE checkpoint (required for msssim)");
  train->add_option("--lr", schedule.learning_rate, "Initial learning rate");
  train->add_option("--final-lr", schedule.final_learning_rate, "Stage ALL stops after converging at this rate");
  train->add_option("--prior-lr-scale", schedule.prior_lr_scale, "Learning-rate multiplier for entropy models");
  train->add_option("--window", schedule.convergence.window, "Convergence window (steps)");
  train->add_option("--min-improvement", schedule.convergence.min_relative_improvement,
                    "Relative windowed-mean improvement below which a stage has converged");
  train->add_option("--steps-me", steps_me, "Step cap, stage ME");
  train->add_option("--steps-m", steps_m, "Step cap, stage M");
  train->add_option("--steps-mc", steps_mc, "Step cap, stage MC");
  train->add_option("--steps-all", steps_all, "Step cap per learning rate, stage ALL");
  train->add_option("--batch", schedule.batch_size, "Clips per step");
  train->add_option("--crop", crop, "Training crop (multiple of 16)");
  train->add_option("--log", log_path, "Per-step CSV log");
  train->add_option("--frame-pattern", pattern, "printf pattern of frame files");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Encode, verify and report one RD point");
  evaluate_cmd->add_option("--input", input, "Sequence directory")->required();
  evaluate_cmd->add_option("--model", model_path, "Model checkpoint")->required();
  evaluate_cmd->add_option("--gop", gop, "GOP size (default: manifest value)")->check(CLI::PositiveNumber);
  evaluate_cmd->add_option("--frame-pattern", pattern, "printf pattern of frame files");
  evaluate_cmd->add_option("--iframe", iframe_name, "I-frame codec")->check(CLI::IsMember({"bpg", "lossless"}));
  evaluate_cmd->add_option("--policy", policy, "Non multiple-of-16 sizes")->check(CLI::IsMember({"pad", "reject"}));
  evaluate_cmd->add_option("--sequence", sequence_name, "Sequence id in the report (default: directory name)");
  evaluate_cmd->add_option("--container", container_path, "Verify this container instead of encoding afresh");
  evaluate_cmd->add_option("--out", out, "RD CSV (default: stdout)");

  auto* curves = app.add_subcommand("curves", "Merge RD CSVs into a table and plot");
  curves->add_option("--csv", csv_inputs, "RD CSV files")->required();
  curves->add_option("--out", out, "Merged CSV (default: stdout)");
  curves->add_option("--plot", plot_path, "SVG plot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadArgs;
  }

  try {
    if (encode->parsed() || evaluate_cmd->parsed()) {
      const SequenceManifest manifest = read_sequence(input, pattern);
      SequenceOptions options;
      options.gop = gop > 0 ? gop : manifest.gop;
      options.policy = parse_policy(policy);
      const Codec codec(load_model(model_path));
      const auto iframe = make_iframe_codec(iframe_name);
      if (encode->parsed()) {
        const EncodedSequence enc = encode_sequence(manifest, codec, *iframe, options);
        write_file(out, enc.bytes);
        std::cerr << "encoded " << manifest.count << " frames, " << enc.bytes.size() << " bytes\n";
        return kOk;
      }
      const std::string name = sequence_name.empty() ? fs::path(input).lexically_normal().filename().string()
                                                     : sequence_name;
      const std::vector<Frame> frames = load_frames(manifest);
      const Evaluation e = container_path.empty()
                               ? evaluate(frames, name, codec, *iframe, options)
                               : verify_container(read_file(container_path), frames, name, codec, *iframe, options);
      if (out.empty()) {
        std::cout << format_rd_csv({e.point});
      } else {
        write_rd_csv(out, {e.point});
      }
      return kOk;
    }
    if (decode->parsed()) {
      const Codec codec(load_model(model_path));
      const std::vector<Frame> frames = decode_sequence(read_file(in_file), codec);
      const Container c = parse_container(read_file(in_file));
      fs::create_directories(out);
      write_sequence(out, frames, c.header.gop, pattern);
      std::cerr << "decoded " << frames.size() << " frames\n";
      return kOk;
    }
    if (train->parsed()) {
      TrainingOptions options;
      options.weights.lambda = lambda;
      options.weights.metric = parse_metric(metric_name);
      options.seed = seed;
      schedule.max_steps = {{Stage::kMe, steps_me}, {Stage::kM, steps_m}, {Stage::kMc, steps_mc}, {Stage::kAll, steps_all}};
      if (!init_path.empty()) options.init = load_model(init_path);
      if (options.weights.metric == Metric::kMsSsim) schedule.stages = TrainingSchedule::fine_tune().stages;
      options.schedule = schedule;
      options.divergence_checkpoint = out + ".diverged";
      const ClipSource data = training_data(data_dir, pattern, crop, seed);
      if (options.weights.metric == Metric::kMsSsim) {
        const std::vector<Frame> probe = data();
        options.weights.msssim_scales = max_msssim_scales(probe.front().height(), probe.front().width());
      }
      options.on_step = [](const LogRow& r) {
        if (r.step % 100 == 0) {
          std::cerr << "step " << r.step << " " << to_string(r.stage) << " lr " << r.lr << " loss " << r.loss << "\n";
        }
      };
      const TrainingResult result = train_progressive(data, options);
      save_model(out, result.model);
      if (!log_path.empty()) result.log.write_csv(log_path);
      return kOk;
    }
    if (curves->parsed()) {
      std::vector<RdPoint> points;
      for (const auto& path : csv_inputs) {
        auto part = read_rd_csv(path);
        points.insert(points.end(), part.begin(), part.end());
      }
      const std::vector<RdPoint> table = rd_table(points);
      if (out.empty()) {
        std::cout << format_rd_csv(table);
      } else {
        write_rd_csv(out, table);
      }
      if (!plot_path.empty()) write_text(plot_path, rd_plot_svg(table));
      return kOk;
    }
  } catch (const VerificationError& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return kVerification;
  } catch (const CorruptStreamError& e) {
    std::cerr << "corrupt stream: " << e.what() << "\n";
    return kVerification;
  } catch (const ModelMismatchError& e) {
    std::cerr << "model mismatch: " << e.what() << "\n";
    return kVerification;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const CodecUnavailableError& e) {
    std::cerr << "codec unavailable: " << e.what() << "\n";
    return kIo;
  } catch (const ResolutionError& e) {
    std::cerr << "resolution: " << e.what() << "\n";
    return kBadArgs;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kBadArgs;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
