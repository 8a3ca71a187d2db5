#pragma once

#include "odvc/bottleneck.hpp"
#include "odvc/frames_io.hpp"
#include "odvc/metrics.hpp"
#include "odvc/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace odvc {

struct LossWeights {
  double lambda = 1024;
  Metric metric = Metric::kMse;
  int msssim_scales = kMsSsimScales;

  /// Throws on a non-positive lambda; returns a warning for non-standard values.
  [[nodiscard]] std::optional<std::string> validate() const;
};

/// MSE, or 1 - MS-SSIM.
template <typename Scalar>
Var<Scalar> distortion(const Var<Scalar>& x, const Var<Scalar>& y, const LossWeights& w);

/// bits / (H*W) of the coded frame.
template <typename Scalar>
Var<Scalar> rate_bpp(const Var<Scalar>& bits, const Shape& frame);

template <typename Scalar>
Var<Scalar> loss_me(const Var<Scalar>& x_t, const Var<Scalar>& x_prev, const Var<Scalar>& flow);
template <typename Scalar>
Var<Scalar> loss_m(const Var<Scalar>& x_t, const Var<Scalar>& x_prev, const Var<Scalar>& flow_hat,
                   const Var<Scalar>& rate_m_bpp, const LossWeights& w);
template <typename Scalar>
Var<Scalar> loss_mc(const Var<Scalar>& x_t, const Var<Scalar>& x_bar, const Var<Scalar>& rate_m_bpp,
                    const LossWeights& w);
template <typename Scalar>
Var<Scalar> loss_total(const Var<Scalar>& x_t, const Var<Scalar>& x_hat, const Var<Scalar>& rate_m_bpp,
                       const Var<Scalar>& rate_y_bpp, const LossWeights& w);

enum class Stage { kMe, kM, kMc, kAll };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);
/// Parameter groups a stage is allowed to update.
std::vector<ParamGroup> trainable_groups(Stage s);

struct ConvergenceRule {
  int window = 500;
  double min_relative_improvement = 1e-3;
};

/// Windowed-mean plateau detector; checks once per completed window.
class ConvergenceMonitor {
 public:
  explicit ConvergenceMonitor(ConvergenceRule rule) : rule_(rule) {}
  /// Returns true when the latest window improved on the previous one by
  /// less than the rule's relative threshold.
  bool push(double loss);
  void reset();
  [[nodiscard]] const std::vector<double>& window_means() const { return means_; }

 private:
  ConvergenceRule rule_;
  double running_ = 0;
  int count_ = 0;
  std::vector<double> means_;
};

struct TrainingSchedule {
  std::vector<Stage> stages{Stage::kMe, Stage::kM, Stage::kMc, Stage::kAll};
  double learning_rate = 1e-4;
  double final_learning_rate = 1e-6;
  ConvergenceRule convergence;
  /// Step cap per stage; in stage ALL the cap applies to each learning-rate level.
  std::map<Stage, int> max_steps{{Stage::kMe, 200000}, {Stage::kM, 200000}, {Stage::kMc, 200000}, {Stage::kAll, 200000}};
  int batch_size = 4;
  /// Learning-rate multiplier for the entropy-model parameters.
  double prior_lr_scale = 1.0;

  /// Single ALL stage, used for MS-SSIM fine-tuning.
  static TrainingSchedule fine_tune();
};

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  /// Updates every parameter that holds a gradient, then clears it.
  void step(ParameterList<float>& params, double learning_rate);

 private:
  struct Slot {
    Tensor<float> m;
    Tensor<float> v;
    std::int64_t t = 0;
  };
  double beta1_;
  double beta2_;
  double eps_;
  std::map<std::string, Slot> slots_;
};

struct LogRow {
  std::int64_t step = 0;
  Stage stage = Stage::kMe;
  double lr = 0;
  double loss = 0;
  double distortion = 0;
  double rate_m_bpp = 0;
  double rate_y_bpp = 0;
};

struct TrainingLog {
  std::vector<LogRow> rows;

  /// step,stage,lr,loss,distortion,rate_m_bpp,rate_y_bpp
  void write_csv(const std::filesystem::path& path) const;
  static TrainingLog read_csv(const std::filesystem::path& path);
};

/// Forward pass of one stage on a frame pair, in train mode.
struct StepOutput {
  Var<float> loss;
  double distortion = 0;
  double rate_m_bpp = 0;
  double rate_y_bpp = 0;
};
StepOutput training_step(const CodecModel<float>& model, Stage stage, const Frame& reference, const Frame& target,
                         const LossWeights& weights, Rng& noise);

/// Returns consecutive frames; the first two are used as (reference, target).
using ClipSource = std::function<std::vector<Frame>()>;
ClipSource fixed_clip(std::vector<Frame> frames);
ClipSource sampled_clips(ClipSampler sampler);

struct TrainingOptions {
  LossWeights weights;
  TrainingSchedule schedule;
  std::uint64_t seed = 0;
  /// Required for MS-SSIM; optional warm start for MSE.
  std::optional<CodecModel<float>> init;
  /// Where the model is saved when the loss turns NaN/Inf.
  std::filesystem::path divergence_checkpoint;
  std::function<void(const LogRow&)> on_step;
  std::function<void(Stage, const CodecModel<float>&)> on_stage_end;
};

struct TrainingResult {
  CodecModel<float> model;
  TrainingLog log;
};

TrainingResult train_progressive(const ClipSource& data, const TrainingOptions& options);

}  // namespace odvc
