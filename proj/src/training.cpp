#include "odvc/training.hpp"

#include "odvc/errors.hpp"
#include "odvc/motion_comp.hpp"
#include "odvc/ops.hpp"
#include "odvc/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace odvc {

std::optional<std::string> LossWeights::validate() const {
  if (!(lambda > 0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be a positive finite number");
  if (!is_standard_lambda(lambda, metric)) {
    std::ostringstream msg;
    msg << "lambda " << lambda << " is not one of the standard " << to_string(metric) << " operating points";
    return msg.str();
  }
  return std::nullopt;
}

template <typename Scalar>
Var<Scalar> distortion(const Var<Scalar>& x, const Var<Scalar>& y, const LossWeights& w) {
  if (w.metric == Metric::kMse) return mse(x, y);
  return add_scalar(scale(msssim(x, y, w.msssim_scales), Scalar(-1)), Scalar(1));
}

template <typename Scalar>
Var<Scalar> rate_bpp(const Var<Scalar>& bits, const Shape& frame) {
  return scale(bits, Scalar(1.0 / double(frame.plane())));
}

template <typename Scalar>
Var<Scalar> loss_me(const Var<Scalar>& x_t, const Var<Scalar>& x_prev, const Var<Scalar>& flow) {
  return mse(warp(x_prev, flow), x_t);
}

template <typename Scalar>
Var<Scalar> loss_m(const Var<Scalar>& x_t, const Var<Scalar>& x_prev, const Var<Scalar>& flow_hat,
                   const Var<Scalar>& rate_m_bpp, const LossWeights& w) {
  return add(scale(distortion(warp(x_prev, flow_hat), x_t, w), Scalar(w.lambda)), rate_m_bpp);
}

template <typename Scalar>
Var<Scalar> loss_mc(const Var<Scalar>& x_t, const Var<Scalar>& x_bar, const Var<Scalar>& rate_m_bpp,
                    const LossWeights& w) {
  return add(scale(distortion(x_bar, x_t, w), Scalar(w.lambda)), rate_m_bpp);
}

template <typename Scalar>
Var<Scalar> loss_total(const Var<Scalar>& x_t, const Var<Scalar>& x_hat, const Var<Scalar>& rate_m_bpp,
                       const Var<Scalar>& rate_y_bpp, const LossWeights& w) {
  return add(add(scale(distortion(x_hat, x_t, w), Scalar(w.lambda)), rate_m_bpp), rate_y_bpp);
}

#define ODVC_INSTANTIATE_LOSSES(S)                                                                         \
  template Var<S> distortion(const Var<S>&, const Var<S>&, const LossWeights&);                            \
  template Var<S> rate_bpp(const Var<S>&, const Shape&);                                                   \
  template Var<S> loss_me(const Var<S>&, const Var<S>&, const Var<S>&);                                    \
  template Var<S> loss_m(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, const LossWeights&);  \
  template Var<S> loss_mc(const Var<S>&, const Var<S>&, const Var<S>&, const LossWeights&);                \
  template Var<S> loss_total(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, const LossWeights&);

ODVC_INSTANTIATE_LOSSES(float)
ODVC_INSTANTIATE_LOSSES(double)

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kMe: return "ME";
    case Stage::kM: return "M";
    case Stage::kMc: return "MC";
    case Stage::kAll: return "ALL";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  if (s == "ME") return Stage::kMe;
  if (s == "M") return Stage::kM;
  if (s == "MC") return Stage::kMc;
  if (s == "ALL") return Stage::kAll;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

std::vector<ParamGroup> trainable_groups(Stage s) {
  std::vector<ParamGroup> g{ParamGroup::kFlow};
  if (s == Stage::kMe) return g;
  g.push_back(ParamGroup::kMotionTransform);
  g.push_back(ParamGroup::kMotionPrior);
  if (s == Stage::kM) return g;
  g.push_back(ParamGroup::kMotionCompensation);
  if (s == Stage::kMc) return g;
  g.push_back(ParamGroup::kResidualTransform);
  g.push_back(ParamGroup::kResidualPrior);
  return g;
}

bool ConvergenceMonitor::push(double loss) {
  running_ += loss;
  if (++count_ < rule_.window) return false;
  means_.push_back(running_ / count_);
  running_ = 0;
  count_ = 0;
  if (means_.size() < 2) return false;
  const double prev = means_[means_.size() - 2];
  const double cur = means_.back();
  return (prev - cur) / std::abs(prev) < rule_.min_relative_improvement;
}

void ConvergenceMonitor::reset() {
  running_ = 0;
  count_ = 0;
  means_.clear();
}

TrainingSchedule TrainingSchedule::fine_tune() {
  TrainingSchedule s;
  s.stages = {Stage::kAll};
  return s;
}

void Adam::step(ParameterList<float>& params, double learning_rate) {
  for (auto& p : params) {
    if (!p.var.has_grad()) continue;
    Slot& s = slots_[p.name];
    const Tensor<float>& g = p.var.grad();
    if (s.m.empty()) {
      s.m = Tensor<float>(g.shape());
      s.v = Tensor<float>(g.shape());
    }
    ++s.t;
    s.m.array() = float(beta1_) * s.m.array() + float(1 - beta1_) * g.array();
    s.v.array() = float(beta2_) * s.v.array() + float(1 - beta2_) * g.array().square();
    const float c1 = float(1 - std::pow(beta1_, double(s.t)));
    const float c2 = float(1 - std::pow(beta2_, double(s.t)));
    p.var.mutable_value().array() -=
        float(learning_rate) * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + float(eps_));
    p.var.zero_grad();
  }
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,stage,lr,loss,distortion,rate_m_bpp,rate_y_bpp\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%lld,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.step),
                  to_string(r.stage).c_str(), r.lr, r.loss, r.distortion, r.rate_m_bpp, r.rate_y_bpp);
    out << line;
  }
}

TrainingLog TrainingLog::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  TrainingLog log;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw FormatError("bad training log row: " + line);
    LogRow r;
    r.step = std::stoll(cells[0]);
    r.stage = parse_stage(cells[1]);
    r.lr = std::stod(cells[2]);
    r.loss = std::stod(cells[3]);
    r.distortion = std::stod(cells[4]);
    r.rate_m_bpp = std::stod(cells[5]);
    r.rate_y_bpp = std::stod(cells[6]);
    log.rows.push_back(r);
  }
  return log;
}

StepOutput training_step(const CodecModel<float>& model, Stage stage, const Frame& reference, const Frame& target,
                         const LossWeights& weights, Rng& noise) {
  const Var<float> x_prev = reference.var();
  const Var<float> x_t = target.var();
  const Shape frame = x_t.shape();
  const Var<float> flow = model.flow.estimate(x_prev, x_t);
  StepOutput out;
  if (stage == Stage::kMe) {
    out.loss = loss_me(x_t, x_prev, flow);
    out.distortion = out.loss.item();
    return out;
  }
  const Var<float> m = quantize(mv_analysis(flow, model.motion), QuantizeMode::kTrain, &noise);
  const Var<float> flow_hat = mv_synthesis(m, model.motion);
  const Var<float> rate_m = rate_bpp(neg_log2_sum(model.motion_prior.likelihood(m)), frame);
  out.rate_m_bpp = rate_m.item();
  if (stage == Stage::kM) {
    out.loss = loss_m(x_t, x_prev, flow_hat, rate_m, weights);
    out.distortion = (out.loss.item() - out.rate_m_bpp) / weights.lambda;
    return out;
  }
  const Var<float> warped = warp(x_prev, flow_hat);
  const Var<float> x_bar = model.mc.forward(x_prev, warped, flow_hat);
  if (stage == Stage::kMc) {
    out.loss = loss_mc(x_t, x_bar, rate_m, weights);
    out.distortion = (out.loss.item() - out.rate_m_bpp) / weights.lambda;
    return out;
  }
  const Var<float> y = quantize(res_analysis(sub(x_t, x_bar), model.residual), QuantizeMode::kTrain, &noise);
  const Var<float> x_hat = add(x_bar, res_synthesis(y, model.residual));
  const Var<float> rate_y = rate_bpp(neg_log2_sum(model.residual_prior.likelihood(y)), frame);
  out.rate_y_bpp = rate_y.item();
  out.loss = loss_total(x_t, x_hat, rate_m, rate_y, weights);
  out.distortion = (out.loss.item() - out.rate_m_bpp - out.rate_y_bpp) / weights.lambda;
  return out;
}

ClipSource fixed_clip(std::vector<Frame> frames) {
  if (frames.size() < 2) throw std::invalid_argument("training clip needs at least two frames");
  return [frames = std::move(frames)] { return frames; };
}

ClipSource sampled_clips(ClipSampler sampler) {
  if (sampler.clip_len() < 2) throw std::invalid_argument("training clips need at least two frames");
  auto shared = std::make_shared<ClipSampler>(std::move(sampler));
  return [shared] { return shared->next().frames; };
}

namespace {

void check_stage_order(const std::vector<Stage>& stages) {
  if (stages.empty()) throw std::invalid_argument("training schedule has no stages");
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (static_cast<int>(stages[i]) <= static_cast<int>(stages[i - 1])) {
      throw std::invalid_argument("training stages must be strictly ordered ME -> M -> MC -> ALL");
    }
  }
}

bool is_prior(ParamGroup g) { return g == ParamGroup::kMotionPrior || g == ParamGroup::kResidualPrior; }

ParameterList<float> stage_parameters(const CodecModel<float>& model, Stage stage, bool priors) {
  ParameterList<float> out;
  for (ParamGroup g : trainable_groups(stage)) {
    if (is_prior(g) != priors) continue;
    auto part = model.parameters(g);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace

TrainingResult train_progressive(const ClipSource& data, const TrainingOptions& options) {
  const LossWeights& w = options.weights;
  if (auto warning = w.validate()) std::cerr << "warning: " << *warning << "\n";
  const TrainingSchedule& sched = options.schedule;
  check_stage_order(sched.stages);
  if (sched.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(sched.learning_rate > 0) || !(sched.final_learning_rate > 0)) {
    throw std::invalid_argument("learning rates must be positive");
  }

  if (w.metric == Metric::kMsSsim) {
    if (!options.init) throw std::invalid_argument("MS-SSIM training requires a pretrained MSE model (--init)");
    if (options.init->meta.metric != Metric::kMse) {
      throw std::invalid_argument("MS-SSIM fine-tuning must start from an MSE model");
    }
    const auto paired = pretrain_lambda_for(w.lambda);
    if (paired && options.init->meta.lambda != *paired) {
      std::cerr << "warning: MS-SSIM lambda " << w.lambda << " is paired with MSE lambda " << *paired
                << ", init model has lambda " << options.init->meta.lambda << "\n";
    }
  }

  const ModelMeta meta{w.lambda, w.metric, 1};
  TrainingResult result{options.init ? options.init->clone() : CodecModel<float>::create(options.seed, meta), {}};
  CodecModel<float>& model = result.model;
  model.meta = meta;
  ParameterList<float> all = model.parameters();

  Rng noise(options.seed ^ 0x9E3779B97F4A7C15ull);
  Adam adam;
  std::int64_t step = 0;
  for (Stage stage : sched.stages) {
    ParameterList<float> active = stage_parameters(model, stage, false);
    ParameterList<float> active_priors = stage_parameters(model, stage, true);
    const auto cap_it = sched.max_steps.find(stage);
    const int cap = cap_it == sched.max_steps.end() ? 200000 : cap_it->second;
    double lr = sched.learning_rate;
    ConvergenceMonitor monitor(sched.convergence);
    int level_steps = 0;
    while (true) {
      if (level_steps >= cap) {
        if (stage != Stage::kAll || lr <= sched.final_learning_rate * (1 + 1e-9)) break;
        lr /= 10;
        monitor.reset();
        level_steps = 0;
        continue;
      }
      LogRow row;
      row.step = step;
      row.stage = stage;
      row.lr = lr;
      for (int b = 0; b < sched.batch_size; ++b) {
        const std::vector<Frame> clip = data();
        if (clip.size() < 2) throw std::invalid_argument("training clip needs at least two frames");
        StepOutput out = training_step(model, stage, clip[0], clip[1], w, noise);
        const double inv = 1.0 / sched.batch_size;
        row.loss += out.loss.item() * inv;
        row.distortion += out.distortion * inv;
        row.rate_m_bpp += out.rate_m_bpp * inv;
        row.rate_y_bpp += out.rate_y_bpp * inv;
        if (!std::isfinite(out.loss.item())) break;
        scale(out.loss, float(inv)).backward();
      }
      if (!std::isfinite(row.loss)) {
        std::string where = "no checkpoint path configured";
        if (!options.divergence_checkpoint.empty()) {
          save_model(options.divergence_checkpoint, model);
          where = "model saved to " + options.divergence_checkpoint.string();
        }
        throw DivergenceError("loss became non-finite at step " + std::to_string(step) + " in stage " +
                              to_string(stage) + "; " + where);
      }
      adam.step(active, lr);
      adam.step(active_priors, lr * sched.prior_lr_scale);
      for (auto& p : all) {
        if (p.var.has_grad()) p.var.zero_grad();
      }
      result.log.rows.push_back(row);
      if (options.on_step) options.on_step(row);
      ++step;
      ++level_steps;
      if (monitor.push(row.loss)) {
        if (stage != Stage::kAll || lr <= sched.final_learning_rate * (1 + 1e-9)) break;
        lr /= 10;
        monitor.reset();
        level_steps = 0;
      }
    }
    if (options.on_stage_end) options.on_stage_end(stage, model);
  }
  return result;
}

}  // namespace odvc
