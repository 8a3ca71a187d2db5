#include "test_util.hpp"

#include "odvc/bottleneck.hpp"
#include "odvc/codec.hpp"
#include "odvc/errors.hpp"
#include "odvc/evaluate.hpp"
#include "odvc/frames_io.hpp"
#include "odvc/iframe.hpp"
#include "odvc/metrics.hpp"
#include "odvc/range_coder.hpp"
#include "odvc/training.hpp"

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>

using namespace odvc;
using odvc::testing::gradient_error;
using odvc::testing::parameter_gradient_error;
using odvc::testing::probe_sum;
using odvc::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::map<int, std::pair<bool, std::string>> g_results;

void report(int id, bool pass, const std::string& detail) {
  g_results[id] = {pass, detail};
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::int32_t draw(const ChannelCdf& ch, Rng& rng) {
  const auto u = static_cast<std::uint32_t>(rng.below(kProbabilityTotal));
  const auto it = std::upper_bound(ch.cdf.begin() + 1, ch.cdf.end(), u);
  const int index = static_cast<int>(it - ch.cdf.begin()) - 1;
  if (index == ch.escape_index()) return ch.offset - 1 - std::int32_t(rng.below(1000));
  return ch.offset + index;
}

SymbolGrid sample_symbols(const CdfTable& table, Shape shape, Rng& rng) {
  SymbolGrid g;
  g.shape = shape;
  g.values.resize(shape.size());
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = draw(table.channels[i / shape.plane()], rng);
  return g;
}

Frame random_frame(int h, int w, Rng& rng) {
  Tensor<float> t(3, h, w);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = float(rng.uniform());
  return Frame(std::move(t));
}

void criterion1() {
  const auto t0 = Clock::now();
  Rng rng(101);
  const FactorizedPrior<double> prior(kLatentChannels, rng);
  const CdfTable table = build_cdf_tables(prior);
  int exact = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Shape shape{kLatentChannels, 1 + int(rng.below(4)), 1 + int(rng.below(4))};
    const SymbolGrid s = sample_symbols(table, shape, rng);
    if (range_decode(range_encode(s, table), table, shape).values == s.values) ++exact;
  }
  const double t = seconds_since(t0);
  report(1, exact == 1000 && t < 60, fmt("%d/1000 bit-exact round trips in %.1f s", exact, t));
}

void criterion2(const FactorizedPrior<float>& trained, const char* which) {
  const CdfTable table = build_cdf_tables(trained);
  Rng rng(202);
  double worst = 0;
  double smallest_estimate = 1e300;
  for (int trial = 0; trial < 20; ++trial) {
    const Shape shape{kLatentChannels, 8, 8};
    const SymbolGrid s = sample_symbols(table, shape, rng);
    const double estimate = rate_bits(trained.likelihood(Var<float>(from_symbols(s)))).total_bits();
    const double actual = 8.0 * double(range_encode(s, table).size());
    worst = std::max(worst, std::abs(actual - estimate) / std::max(estimate, 1.0));
    smallest_estimate = std::min(smallest_estimate, estimate);
  }
  report(2, worst <= 0.05,
         fmt("trained %s prior, 20 x 8192 symbols: worst |actual-estimate|/estimate = %.4f (min estimate %.0f bits)",
             which, worst, smallest_estimate));
}

void criterion3() {
  Rng rng(303);
  std::map<std::string, double> worst;
  auto track = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };
  auto fractional_flow = [&](Shape s) {
    Tensor<double> f(s);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = double(int(rng.below(4)) - 2) + rng.uniform(0.1, 0.9);
    return f;
  };
  LossWeights mse_w;
  mse_w.lambda = 1024;
  LossWeights ms_w;
  ms_w.lambda = 32;
  ms_w.metric = Metric::kMsSsim;
  ms_w.msssim_scales = 2;
  FactorizedPrior<double> prior(2, rng);
  ParameterList<double> prior_params;
  prior.collect(prior_params, "p");
  for (int i = 0; i < 10; ++i) {
    const auto x = random_tensor({4, 3, 3}, rng, -2, 2);
    const auto beta = random_tensor({4, 1, 1}, rng, 0.5, 1.5);
    const auto gamma = random_tensor({4, 1, 4}, rng, 0.0, 0.3);
    track("gdn", gradient_error([](const auto& v) { return probe_sum(gdn(v[0], v[1], v[2])); }, {x, beta, gamma}));
    track("igdn", gradient_error([](const auto& v) { return probe_sum(igdn(v[0], v[1], v[2])); }, {x, beta, gamma}));

    const auto img = random_tensor({3, 8, 8}, rng, 0, 1);
    track("warp", gradient_error([](const auto& v) { return probe_sum(warp(v[0], v[1])); },
                                 {img, fractional_flow({2, 8, 8})}));

    const auto lat = random_tensor({2, 3, 3}, rng, -4, 4);
    track("likelihood", gradient_error([&](const auto& v) { return probe_sum(prior.likelihood(v[0])); }, {lat}));
    track("likelihood", parameter_gradient_error([&] { return probe_sum(prior.likelihood(Var<double>(lat))); },
                                                 prior_params));

    const auto xt = random_tensor({3, 8, 8}, rng, 0, 1);
    const auto prev = random_tensor({3, 8, 8}, rng, 0, 1);
    const auto flow = fractional_flow({2, 8, 8});
    const auto rm = random_tensor({1, 1, 1}, rng, 0, 1);
    const auto ry = random_tensor({1, 1, 1}, rng, 0, 1);
    track("loss_me", gradient_error([](const auto& v) { return loss_me(v[0], v[1], v[2]); }, {xt, prev, flow}));
    track("loss_m", gradient_error([&](const auto& v) { return loss_m(v[0], v[1], v[2], v[3], mse_w); },
                                   {xt, prev, flow, rm}));
    track("loss_mc", gradient_error([&](const auto& v) { return loss_mc(v[0], v[1], v[2], mse_w); }, {xt, prev, rm}));
    track("loss_total", gradient_error([&](const auto& v) { return loss_total(v[0], v[1], v[2], v[3], mse_w); },
                                       {xt, prev, rm, ry}));
    const auto a = random_tensor({3, 24, 24}, rng, 0, 1);
    auto b = a;
    b.matrix() += random_tensor({3, 24, 24}, rng, -0.2, 0.2).matrix();
    track("loss_total_msssim",
          gradient_error([&](const auto& v) { return loss_total(v[0], v[1], v[2], v[3], ms_w); }, {a, b, rm, ry}));
  }
  bool pass = true;
  std::ostringstream detail;
  detail << "10 points each, worst rel. error:";
  for (const auto& [name, err] : worst) {
    pass = pass && err < 1e-4;
    detail << " " << name << "=" << fmt("%.1e", err);
  }
  report(3, pass, detail.str());
}

void criterion4() {
  const Codec codec(CodecModel<float>::create(404));
  Rng rng(404);
  bool pass = true;
  std::ostringstream detail;
  for (auto [h, w] : {std::pair{64, 64}, std::pair{256, 192}}) {
    PFrameTrace trace;
    codec.encode_pframe(random_frame(h, w, rng), random_frame(h, w, rng), &trace);
    const Shape frame{3, h, w};
    const Shape flow{2, h, w};
    const Shape latent{kLatentChannels, h / 16, w / 16};
    const std::vector<std::pair<std::string, Shape>> ledger{
        {"x_ref", frame},  {"x_t", frame},   {"v_t", flow},     {"m_t", latent}, {"m_hat", latent},
        {"v_hat", flow},   {"warped", frame}, {"x_bar", frame}, {"r_t", frame},  {"y_t", latent},
        {"y_hat", latent}, {"r_hat", frame}, {"x_hat", frame}};
    bool ok = trace.tensors == ledger;
    for (const auto& [a, b] : trace.additions) ok = ok && a == b;
    pass = pass && ok;
    detail << h << "x" << w << ": " << trace.tensors.size() << " tensors, " << trace.additions.size()
           << " additions " << (ok ? "match" : "MISMATCH") << "; ";
  }
  report(4, pass, detail.str());
}

void criterion5() {
  Rng rng(505);
  int identical = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Codec codec(CodecModel<float>::create(5000 + trial));
    const Frame ref = random_frame(32, 32, rng);
    const Frame raw = random_frame(32, 32, rng);
    const PFrameResult r = codec.encode_pframe(ref, raw);
    const PFramePayload parsed =
        PFramePayload::parse(r.payload.serialize(), r.payload.latent_height, r.payload.latent_width, codec.hash());
    if (codec.decode_pframe(ref, parsed) == r.reconstruction) ++identical;
  }
  const Codec codec(CodecModel<float>::create(55));
  const LosslessPngCodec png;
  const auto frames = make_translation_clip(32, 6, 1, 2, 55);
  SequenceOptions opt;
  opt.gop = 4;
  const auto a = encode_sequence(frames, codec, png, opt);
  const auto b = encode_sequence(frames, codec, png, opt);
  const bool same_bytes = a.bytes == b.bytes;
  const bool decodes = decode_sequence(a.bytes, codec) == a.reconstructions;
  report(5, identical == 50 && same_bytes && decodes,
         fmt("%d/50 P-frames decode bit-identical; container re-encode %s; sequence decode %s", identical,
             same_bytes ? "byte-identical" : "DIFFERS", decodes ? "matches" : "DIFFERS"));
}

/// Warped reference and reconstruction as the coder computes them.
struct CodedFrame {
  Tensor<float> warped;
  Frame reconstruction;
  std::size_t bytes = 0;
};

CodedFrame code_pframe(const CodecModel<float>& model, const Frame& ref, const Frame& raw) {
  const Codec codec(model.clone());
  CodedFrame out;
  const PFrameResult r = codec.encode_pframe(ref, raw);
  out.reconstruction = r.reconstruction;
  out.bytes = r.payload.serialize().size();
  NoGradGuard no_grad;
  const Var<float> flow = model.flow.estimate(ref.var(), raw.var());
  const Var<float> m_hat = quantize(mv_analysis(flow, model.motion), QuantizeMode::kTest);
  out.warped = warp(ref.var(), mv_synthesis(m_hat, model.motion)).value();
  return out;
}

TrainingSchedule desk_schedule() {
  TrainingSchedule s;
  s.learning_rate = 1e-4;
  s.final_learning_rate = 1e-6;
  s.batch_size = 1;
  s.convergence = {100, 1e-3};
  s.prior_lr_scale = 10;
  s.max_steps = {{Stage::kMe, 100}, {Stage::kM, 150}, {Stage::kMc, 100}, {Stage::kAll, 300}};
  return s;
}

CodecModel<float> criterion6(const std::vector<Frame>& clip) {
  const auto t0 = Clock::now();
  TrainingOptions opt;
  opt.weights.lambda = 1024;
  opt.schedule = desk_schedule();
  opt.seed = 1;
  double me_ratio = 0;
  opt.on_stage_end = [&](Stage s, const CodecModel<float>& m) {
    std::printf("  stage %-3s done at %.0f s\n", to_string(s).c_str(), seconds_since(t0));
    std::fflush(stdout);
    if (s != Stage::kMe) return;
    NoGradGuard no_grad;
    const Var<float> v = m.flow.estimate(clip[0].var(), clip[1].var());
    const double warped = mse(warp(clip[0].var(), v), clip[1].var()).item();
    const double still = mse(clip[0].var(), clip[1].var()).item();
    me_ratio = warped / still;
  };
  TrainingResult r = train_progressive(fixed_clip(clip), opt);
  const double minutes = seconds_since(t0) / 60;

  const CodedFrame coded = code_pframe(r.model, clip[0], clip[1]);
  const double recon_psnr = psnr(coded.reconstruction, clip[1]);
  const double warped_psnr = psnr(coded.warped, clip[1].pixels());

  std::vector<double> window_means;
  const int window = 100;
  std::vector<double> all_losses;
  for (const auto& row : r.log.rows) {
    if (row.stage == Stage::kAll) all_losses.push_back(row.loss);
  }
  for (std::size_t i = 0; i + window <= all_losses.size(); i += window) {
    double sum = 0;
    for (std::size_t k = i; k < i + window; ++k) sum += all_losses[k];
    window_means.push_back(sum / window);
  }
  int drops = 0;
  for (std::size_t i = 1; i < window_means.size(); ++i) drops += window_means[i] < window_means[i - 1];
  const bool decreasing = window_means.size() >= 2 && window_means.back() < window_means.front() &&
                          2 * drops >= int(window_means.size() - 1);
  std::ostringstream means;
  for (double m : window_means) means << fmt("%.3f ", m);

  const bool pass = me_ratio < 0.25 && recon_psnr > 30 && recon_psnr > warped_psnr && decreasing && minutes < 15;
  report(6, pass,
         fmt("(a) ME warp MSE / zero-motion MSE = %.4f; (b) recon PSNR %.2f dB vs warped %.2f dB at %.3f bpp; ",
             me_ratio, recon_psnr, warped_psnr, 8.0 * double(coded.bytes) / (64 * 64)) +
             "(c) ALL loss window means " + means.str() + fmt("(%d/%zu drops); %.1f min", drops,
                                                              window_means.empty() ? 0 : window_means.size() - 1,
                                                              minutes));

  // Duplicate-frame probe on the trained model.
  NoGradGuard no_grad;
  const Var<float> v = r.model.flow.estimate(clip[1].var(), clip[1].var());
  const double mean_flow = v.value().matrix().cwiseAbs().mean();
  const PFrameResult dup = Codec(r.model.clone()).encode_pframe(clip[1], clip[1]);
  std::printf("  info: raw == reference: mean |flow| %.3f px, P-frame payload %zu bytes\n", mean_flow,
              dup.payload.serialize().size());
  return std::move(r.model);
}

TrainingOptions fine_tune_options(const CodecModel<float>& init, double lambda, Metric metric, int per_level) {
  TrainingOptions opt;
  opt.weights.lambda = lambda;
  opt.weights.metric = metric;
  opt.weights.msssim_scales = max_msssim_scales(64, 64);
  opt.schedule = desk_schedule();
  opt.schedule.stages = {Stage::kAll};
  opt.schedule.max_steps[Stage::kAll] = per_level;
  opt.init = init.clone();
  opt.seed = 7;
  return opt;
}

void criterion7(const CodecModel<float>& base, const std::vector<Frame>& clip) {
  const auto t0 = Clock::now();
  const std::vector<double> lambdas{256, 512, 1024, 2048};
  std::vector<double> bpp;
  std::vector<double> err;
  for (double lambda : lambdas) {
    const TrainingResult r = train_progressive(fixed_clip(clip), fine_tune_options(base, lambda, Metric::kMse, 60));
    const CodedFrame coded = code_pframe(r.model, clip[0], clip[1]);
    bpp.push_back(8.0 * double(coded.bytes) / (64 * 64));
    NoGradGuard no_grad;
    err.push_back(mse(coded.reconstruction.var(), clip[1].var()).item());
    std::printf("  lambda %5.0f: %.4f bpp, MSE %.3e (%.0f s)\n", lambda, bpp.back(), err.back(), seconds_since(t0));
    std::fflush(stdout);
  }
  int ordered = 0;
  for (std::size_t i = 1; i < lambdas.size(); ++i) ordered += bpp[i] >= bpp[i - 1] && err[i] <= err[i - 1];
  report(7, ordered >= 3,
         fmt("%d/3 adjacent lambda pairs with bpp non-decreasing and MSE non-increasing; bpp %.3f %.3f %.3f %.3f", ordered,
             bpp[0], bpp[1], bpp[2], bpp[3]));
}

void criterion8(const CodecModel<float>& base, const std::vector<Frame>& clip) {
  const int scales = max_msssim_scales(64, 64);
  const double before = msssim(code_pframe(base, clip[0], clip[1]).reconstruction, clip[1], scales);
  TrainingOptions opt = fine_tune_options(base, 32, Metric::kMsSsim, 600);
  const TrainingResult r = train_progressive(fixed_clip(clip), opt);
  const CodedFrame coded = code_pframe(r.model, clip[0], clip[1]);
  const double after = msssim(coded.reconstruction, clip[1], scales);
  report(8, after - before >= 0.001 && r.log.rows.size() <= 2000,
         fmt("MS-SSIM (%d scales) %.5f -> %.5f after %zu steps at lambda 32; %.3f bpp", scales, before, after,
             r.log.rows.size(), 8.0 * double(coded.bytes) / (64 * 64)));
}

void criterion9() {
  const Codec codec(CodecModel<float>::create(909));
  const LosslessPngCodec png;
  std::vector<Frame> frames;
  for (const Frame& f : make_translation_clip(80, 3, 1, 1, 909)) frames.push_back(crop(f, 60, 70));
  bool rejected = false;
  try {
    SequenceOptions reject;
    reject.policy = ResolutionPolicy::kReject;
    encode_sequence(frames, codec, png, reject);
  } catch (const ResolutionError&) {
    rejected = true;
  }
  const EncodedSequence enc = encode_sequence(frames, codec, png);
  const auto decoded = decode_sequence(enc.bytes, codec);
  bool sized = decoded.size() == 3;
  for (const Frame& f : decoded) sized = sized && f.height() == 60 && f.width() == 70;
  const bool exact = decoded == enc.reconstructions && decoded[0] == frames[0];
  report(9, rejected && sized && exact,
         fmt("reject policy %s; pad policy decodes %zu frames of 60x70, %s encoder reconstructions",
             rejected ? "raises ResolutionError" : "DID NOT REJECT", decoded.size(),
             exact ? "bit-identical to" : "DIFFERENT FROM"));
}

void criterion10() {
  const Frame a(Tensor<float>::constant({3, 32, 32}, 0.2f));
  const Frame b(Tensor<float>::constant({3, 32, 32}, 0.3f));
  const double p = psnr(a, b);
  Rng rng(1010);
  const Frame n = random_frame(176, 176, rng);
  const double s = msssim(n, n);
  report(10, std::abs(p - 20.0) <= 0.01 && std::abs(s - 1.0) <= 1e-6,
         fmt("PSNR uniform 0.1 difference = %.4f dB; MS-SSIM identical = %.8f", p, s));
}

}  // namespace

int main() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  const auto t0 = Clock::now();
  const auto clip = make_translation_clip(64, 2, 2, 0, 7);
  auto guarded = [](int id, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::exception& e) {
      report(id, false, std::string("exception: ") + e.what());
    }
  };
  guarded(1, criterion1);
  guarded(3, criterion3);
  guarded(4, criterion4);
  guarded(5, criterion5);
  guarded(9, criterion9);
  guarded(10, criterion10);
  std::optional<CodecModel<float>> trained;
  guarded(6, [&] { trained = criterion6(clip); });
  if (trained) {
    guarded(2, [&] { criterion2(trained->residual_prior, "residual"); });
    guarded(7, [&] { criterion7(*trained, clip); });
    guarded(8, [&] { criterion8(*trained, clip); });
  } else {
    for (int id : {2, 7, 8}) report(id, false, "no trained model (criterion 6 failed to run)");
  }

  std::printf("\nacceptance summary (%.0f s)\n", seconds_since(t0));
  int failed = 0;
  for (const auto& [id, r] : g_results) {
    std::printf("criterion %2d: %s\n", id, r.first ? "PASS" : "FAIL");
    failed += !r.first;
  }
  return failed == 0 ? 0 : 1;
}
