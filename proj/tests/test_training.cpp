#include "test_util.hpp"

#include <gtest/gtest.h>

#include "odvc/errors.hpp"
#include "odvc/frames_io.hpp"
#include "odvc/metrics.hpp"
#include "odvc/training.hpp"

#include <filesystem>
#include <map>
#include <set>

using namespace odvc;
using odvc::testing::gradient_error;
using odvc::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

LossWeights mse_weights(double lambda) {
  LossWeights w;
  w.lambda = lambda;
  return w;
}

Var<double> constant(Shape s, double v) { return Var<double>(Tensor<double>::constant(s, v)); }

const Shape kFrame{3, 8, 8};

TrainingOptions tiny_options(std::uint64_t seed) {
  TrainingOptions opt;
  opt.seed = seed;
  opt.schedule.batch_size = 1;
  opt.schedule.convergence.window = 1000;
  for (Stage s : {Stage::kMe, Stage::kM, Stage::kMc, Stage::kAll}) opt.schedule.max_steps[s] = 2;
  return opt;
}

std::map<std::string, Tensor<float>> snapshot(const CodecModel<float>& m) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& p : m.parameters()) out.emplace(p.name, p.var.value());
  return out;
}

std::string group_of(const std::string& name) { return name.substr(0, name.find('.')); }

}  // namespace

TEST(Losses, MotionEstimationExamples) {
  const Var<double> x = constant(kFrame, 0.4);
  const Var<double> zero_flow(Tensor<double>(2, 8, 8));
  EXPECT_DOUBLE_EQ(loss_me(x, x, zero_flow).item(), 0.0);
  EXPECT_NEAR(loss_me(constant(kFrame, 0.5), x, zero_flow).item(), 0.01, 1e-12);
}

TEST(Losses, RateDistortionExamples) {
  const Var<double> x = constant(kFrame, 0.4);
  const Var<double> y = constant(kFrame, 0.5);
  const Var<double> zero_flow(Tensor<double>(2, 8, 8));
  const Var<double> rate = constant({1, 1, 1}, 0.1);
  const Var<double> no_rate = constant({1, 1, 1}, 0.0);
  EXPECT_NEAR(loss_m(x, x, zero_flow, rate, mse_weights(256)).item(), 0.1, 1e-12);
  EXPECT_NEAR(loss_m(y, x, zero_flow, rate, mse_weights(256)).item(), 2.66, 1e-9);
  EXPECT_NEAR(loss_mc(y, x, rate, mse_weights(256)).item(), 2.66, 1e-9);
  EXPECT_NEAR(loss_mc(x, x, rate, mse_weights(256)).item(), 0.1, 1e-12);
  EXPECT_NEAR(loss_total(y, x, rate, rate, mse_weights(256)).item(), 2.76, 1e-9);
  EXPECT_NEAR(loss_total(y, x, no_rate, no_rate, mse_weights(256)).item(), 2.56, 1e-9);
  // doubling lambda doubles only the distortion term
  for (double lambda : {256.0, 1024.0}) {
    const double a = loss_mc(y, x, rate, mse_weights(lambda)).item();
    const double b = loss_mc(y, x, rate, mse_weights(2 * lambda)).item();
    EXPECT_NEAR(b - 0.1, 2 * (a - 0.1), 1e-9);
    const double c = loss_m(y, x, zero_flow, rate, mse_weights(lambda)).item();
    const double d = loss_m(y, x, zero_flow, rate, mse_weights(2 * lambda)).item();
    EXPECT_NEAR(d - 0.1, 2 * (c - 0.1), 1e-9);
  }
}

TEST(Losses, MsSsimDistortion) {
  Rng rng(1);
  const Var<double> x(random_tensor({3, 32, 32}, rng, 0, 1));
  LossWeights w;
  w.lambda = 32;
  w.metric = Metric::kMsSsim;
  w.msssim_scales = 2;
  const Var<double> rate = constant({1, 1, 1}, 0.0);
  EXPECT_NEAR(loss_total(x, x, rate, rate, w).item(), 0.0, 1e-9);
  const Var<double> y(random_tensor({3, 32, 32}, rng, 0, 1));
  const double d = distortion(x, y, w).item();
  EXPECT_NEAR(loss_total(x, y, rate, rate, w).item(), 32 * d, 1e-9);
  EXPECT_GT(d, 0.0);
}

TEST(Losses, NonNegative) {
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    const Var<double> x(random_tensor(kFrame, rng, 0, 1));
    const Var<double> y(random_tensor(kFrame, rng, 0, 1));
    const Var<double> flow(random_tensor({2, 8, 8}, rng, -2, 2));
    const Var<double> rate = constant({1, 1, 1}, rng.uniform(0, 1));
    EXPECT_GT(loss_me(x, y, flow).item(), 0.0);
    EXPECT_GT(loss_m(x, y, flow, rate, mse_weights(512)).item(), 0.0);
    EXPECT_GT(loss_total(x, y, rate, rate, mse_weights(512)).item(), 0.0);
  }
}

TEST(Losses, RateIsBitsPerPixel) {
  EXPECT_DOUBLE_EQ(rate_bpp(constant({1, 1, 1}, 4096.0), Shape{3, 64, 64}).item(), 1.0);
}

TEST(Losses, RejectsBadLambda) {
  EXPECT_THROW(mse_weights(0).validate(), std::invalid_argument);
  EXPECT_THROW(mse_weights(-5).validate(), std::invalid_argument);
  EXPECT_NO_THROW(mse_weights(300).validate());
}

TEST(LossGradient, MotionEstimation) {
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const auto x = random_tensor(kFrame, rng, 0, 1);
    const auto prev = random_tensor(kFrame, rng, 0, 1);
    Tensor<double> flow(2, 8, 8);
    for (Eigen::Index k = 0; k < flow.size(); ++k) flow.data()[k] = double(int(rng.below(3)) - 1) + rng.uniform(0.1, 0.9);
    auto f = [](const std::vector<Var<double>>& v) { return loss_me(v[0], v[1], v[2]); };
    EXPECT_LT(gradient_error(f, {x, prev, flow}), 1e-4) << i;
  }
}

TEST(LossGradient, MotionCoding) {
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    const auto x = random_tensor(kFrame, rng, 0, 1);
    const auto prev = random_tensor(kFrame, rng, 0, 1);
    Tensor<double> flow(2, 8, 8);
    for (Eigen::Index k = 0; k < flow.size(); ++k) flow.data()[k] = double(int(rng.below(3)) - 1) + rng.uniform(0.1, 0.9);
    const auto rate = random_tensor({1, 1, 1}, rng, 0, 1);
    auto f = [](const std::vector<Var<double>>& v) { return loss_m(v[0], v[1], v[2], v[3], mse_weights(256)); };
    EXPECT_LT(gradient_error(f, {x, prev, flow, rate}), 1e-4) << i;
  }
}

TEST(LossGradient, MotionCompensationAndTotal) {
  Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    const auto x = random_tensor(kFrame, rng, 0, 1);
    const auto pred = random_tensor(kFrame, rng, 0, 1);
    const auto rm = random_tensor({1, 1, 1}, rng, 0, 1);
    const auto ry = random_tensor({1, 1, 1}, rng, 0, 1);
    auto mc = [](const std::vector<Var<double>>& v) { return loss_mc(v[0], v[1], v[2], mse_weights(1024)); };
    auto total = [](const std::vector<Var<double>>& v) {
      return loss_total(v[0], v[1], v[2], v[3], mse_weights(2048));
    };
    EXPECT_LT(gradient_error(mc, {x, pred, rm}), 1e-4) << i;
    EXPECT_LT(gradient_error(total, {x, pred, rm, ry}), 1e-4) << i;
  }
}

TEST(LossGradient, TotalWithMsSsim) {
  Rng rng(6);
  LossWeights w;
  w.lambda = 32;
  w.metric = Metric::kMsSsim;
  w.msssim_scales = 2;
  for (int i = 0; i < 10; ++i) {
    const auto x = random_tensor({3, 24, 24}, rng, 0, 1);
    auto y = x;
    y.matrix() += random_tensor({3, 24, 24}, rng, -0.2, 0.2).matrix();
    const auto r = random_tensor({1, 1, 1}, rng, 0, 1);
    auto f = [&](const std::vector<Var<double>>& v) { return loss_total(v[0], v[1], v[2], v[2], w); };
    EXPECT_LT(gradient_error(f, {x, y, r}), 1e-4) << i;
  }
}

TEST(Schedule, StagesAndGroups) {
  EXPECT_EQ(to_string(Stage::kMe), "ME");
  EXPECT_EQ(parse_stage("ALL"), Stage::kAll);
  EXPECT_EQ(trainable_groups(Stage::kMe), std::vector<ParamGroup>{ParamGroup::kFlow});
  EXPECT_EQ(trainable_groups(Stage::kAll).size(), 6u);
  EXPECT_EQ(TrainingSchedule::fine_tune().stages, std::vector<Stage>{Stage::kAll});
  EXPECT_EQ(TrainingSchedule{}.learning_rate, 1e-4);
}

TEST(Schedule, ConvergenceMonitor) {
  ConvergenceMonitor m(ConvergenceRule{4, 0.1});
  for (int i = 0; i < 4; ++i) EXPECT_FALSE(m.push(10.0));
  for (int i = 0; i < 3; ++i) EXPECT_FALSE(m.push(5.0));
  EXPECT_FALSE(m.push(5.0));  // 50% better than the previous window
  for (int i = 0; i < 3; ++i) EXPECT_FALSE(m.push(4.9));
  EXPECT_TRUE(m.push(4.9));  // 2% better: converged
}

TEST(Schedule, LogCsvRoundTrip) {
  TrainingLog log;
  log.rows.push_back({0, Stage::kMe, 1e-4, 0.5, 0.5, 0, 0});
  log.rows.push_back({1, Stage::kAll, 1e-5, 2.25, 0.001, 0.125, 0.75});
  const fs::path p = fs::temp_directory_path() / "odvc_test_log.csv";
  log.write_csv(p);
  const TrainingLog back = TrainingLog::read_csv(p);
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[1].stage, Stage::kAll);
  EXPECT_DOUBLE_EQ(back.rows[1].rate_y_bpp, 0.75);
  EXPECT_DOUBLE_EQ(back.rows[1].lr, 1e-5);
}

TEST(Training, GradientsReachEveryGroupAtInit) {
  const auto clip = make_translation_clip(32, 2, 2, 0, 1);
  const CodecModel<float> model = CodecModel<float>::create(3);
  Rng noise(4);
  training_step(model, Stage::kAll, clip[0], clip[1], LossWeights{}, noise).loss.backward();
  for (ParamGroup g : trainable_groups(Stage::kAll)) {
    double largest = 0;
    for (const auto& p : model.parameters(g)) {
      if (p.var.has_grad()) largest = std::max(largest, double(p.var.grad().matrix().cwiseAbs().maxCoeff()));
    }
    EXPECT_GT(largest, 0.0) << "group " << int(g);
  }
}

TEST(Training, StageGatingOrderAndLearningRates) {
  const auto clip = make_translation_clip(32, 2, 2, 0, 5);
  TrainingOptions opt = tiny_options(7);
  opt.schedule.max_steps[Stage::kAll] = 1;
  std::vector<Stage> ended;
  std::map<std::string, Tensor<float>> before = snapshot(CodecModel<float>::create(7));
  std::map<Stage, std::set<std::string>> changed;
  opt.on_stage_end = [&](Stage s, const CodecModel<float>& m) {
    ended.push_back(s);
    auto now = snapshot(m);
    for (const auto& [name, t] : now) {
      if (t.matrix() != before.at(name).matrix()) changed[s].insert(group_of(name));
    }
    before = std::move(now);
  };
  const TrainingResult r = train_progressive(fixed_clip(clip), opt);
  EXPECT_EQ(ended, (std::vector<Stage>{Stage::kMe, Stage::kM, Stage::kMc, Stage::kAll}));
  EXPECT_EQ(changed[Stage::kMe], (std::set<std::string>{"flow"}));
  EXPECT_EQ(changed[Stage::kM], (std::set<std::string>{"flow", "mv", "mv_prior"}));
  EXPECT_EQ(changed[Stage::kMc], (std::set<std::string>{"flow", "mv", "mv_prior", "mc"}));
  EXPECT_EQ(changed[Stage::kAll], (std::set<std::string>{"flow", "mv", "mv_prior", "mc", "res", "res_prior"}));

  std::vector<Stage> order;
  std::vector<double> all_lrs;
  for (const auto& row : r.log.rows) {
    if (order.empty() || order.back() != row.stage) order.push_back(row.stage);
    if (row.stage == Stage::kAll) all_lrs.push_back(row.lr);
    else EXPECT_EQ(row.lr, 1e-4);
  }
  EXPECT_EQ(order, (std::vector<Stage>{Stage::kMe, Stage::kM, Stage::kMc, Stage::kAll}));
  ASSERT_EQ(all_lrs.size(), 3u);
  EXPECT_DOUBLE_EQ(all_lrs[0], 1e-4);
  EXPECT_DOUBLE_EQ(all_lrs[1], 1e-5);
  EXPECT_DOUBLE_EQ(all_lrs[2], 1e-6);
}

TEST(Training, ReproducibleForSeed) {
  const auto clip = make_translation_clip(32, 2, 1, 1, 9);
  const TrainingResult a = train_progressive(fixed_clip(clip), tiny_options(5));
  const TrainingResult b = train_progressive(fixed_clip(clip), tiny_options(5));
  ASSERT_EQ(a.log.rows.size(), b.log.rows.size());
  for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
    EXPECT_EQ(a.log.rows[i].loss, b.log.rows[i].loss) << i;
    EXPECT_EQ(a.log.rows[i].rate_m_bpp, b.log.rows[i].rate_m_bpp) << i;
  }
  EXPECT_EQ(a.model.topology_hash(), b.model.topology_hash());
}

TEST(Training, DivergenceGuardSavesCheckpoint) {
  const auto clip = make_translation_clip(32, 2, 1, 0, 2);
  TrainingOptions opt = tiny_options(1);
  CodecModel<float> init = CodecModel<float>::create(1);
  init.parameters(ParamGroup::kFlow).front().var.mutable_value().data()[0] = std::numeric_limits<float>::quiet_NaN();
  opt.init = init;
  const fs::path ckpt = fs::temp_directory_path() / "odvc_test_diverged.ckpt";
  fs::remove(ckpt);
  opt.divergence_checkpoint = ckpt;
  EXPECT_THROW(train_progressive(fixed_clip(clip), opt), DivergenceError);
  EXPECT_TRUE(fs::exists(ckpt));
}

TEST(Training, MsSsimNeedsMseInit) {
  const auto clip = make_translation_clip(32, 2, 1, 0, 2);
  TrainingOptions opt = tiny_options(1);
  opt.weights.metric = Metric::kMsSsim;
  opt.weights.lambda = 32;
  opt.weights.msssim_scales = 1;
  opt.schedule = TrainingSchedule::fine_tune();
  EXPECT_THROW(train_progressive(fixed_clip(clip), opt), std::invalid_argument);
}

TEST(Training, StagesMustBeOrdered) {
  const auto clip = make_translation_clip(32, 2, 1, 0, 2);
  TrainingOptions opt = tiny_options(1);
  opt.schedule.stages = {Stage::kM, Stage::kMe};
  EXPECT_THROW(train_progressive(fixed_clip(clip), opt), std::invalid_argument);
}
