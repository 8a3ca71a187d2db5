#include "odvc/transforms.hpp"

#include <cmath>
#include <stdexcept>

namespace odvc {

namespace {

// Off-diagonal gamma starts at 2^-18 instead of exactly 0 so the squared
// parameterization still receives a gradient there.
constexpr double kGammaPedestal = 0x1.0p-9;

}  // namespace

template <typename Scalar>
GdnLayer<Scalar>::GdnLayer(int channels, bool inverse_gdn) : inverse(inverse_gdn) {
  beta_raw = Var<Scalar>(Tensor<Scalar>::constant({channels, 1, 1}, Scalar(std::sqrt(1.0 - kGdnBetaMin))), true);
  Tensor<Scalar> g = Tensor<Scalar>::constant({channels, 1, channels}, Scalar(kGammaPedestal));
  for (int c = 0; c < channels; ++c) g.matrix()(c, c) = Scalar(std::sqrt(0.1));
  gamma_raw = Var<Scalar>(std::move(g), true);
}

template <typename Scalar>
GdnParams<Scalar> GdnLayer<Scalar>::params() const {
  return {add_scalar(square(beta_raw), Scalar(kGdnBetaMin)), square(gamma_raw)};
}

template <typename Scalar>
Var<Scalar> GdnLayer<Scalar>::operator()(const Var<Scalar>& x) const {
  const auto p = params();
  return inverse ? igdn(x, p) : gdn(x, p);
}

template <typename Scalar>
void GdnLayer<Scalar>::collect(ParameterList<Scalar>& out, const std::string& prefix) const {
  out.push_back({prefix + ".beta", beta_raw});
  out.push_back({prefix + ".gamma", gamma_raw});
}

template <typename Scalar>
Var<Scalar> AnalysisTransform<Scalar>::operator()(const Var<Scalar>& x) const {
  Var<Scalar> h = x;
  for (int i = 0; i < 4; ++i) {
    h = convs[i](h);
    if (i < 3) h = gdns[i](h);
  }
  return h;
}

template <typename Scalar>
Var<Scalar> SynthesisTransform<Scalar>::operator()(const Var<Scalar>& x) const {
  Var<Scalar> h = x;
  for (int i = 0; i < 4; ++i) {
    h = deconvs[i](h);
    if (i < 3) h = igdns[i](h);
  }
  return h;
}

template <typename Scalar>
TransformWeights<Scalar>::TransformWeights(int kernel_size, int channels, Rng& rng, double signal_scale)
    : kernel(kernel_size), signal_channels(channels) {
  const double gain = signal_scale * signal_scale;
  int in = channels;
  for (int i = 0; i < 4; ++i) {
    analysis.convs[i] = Conv2d<Scalar>(in, kLatentChannels, kernel, 2, rng, i == 0 ? gain : 1.0);
    in = kLatentChannels;
    if (i < 3) analysis.gdns[i] = GdnLayer<Scalar>(kLatentChannels, false);
  }
  for (int i = 0; i < 4; ++i) {
    const int out = i < 3 ? kLatentChannels : channels;
    synthesis.deconvs[i] = ConvTranspose2d<Scalar>(kLatentChannels, out, kernel, rng, i < 3 ? 1.0 : 1.0 / gain);
    if (i < 3) synthesis.igdns[i] = GdnLayer<Scalar>(kLatentChannels, true);
  }
}

template <typename Scalar>
void TransformWeights<Scalar>::zero_biases() {
  for (auto& c : analysis.convs) c.bias.mutable_value().matrix().setZero();
  for (auto& d : synthesis.deconvs) d.bias.mutable_value().matrix().setZero();
}

template <typename Scalar>
void TransformWeights<Scalar>::collect(ParameterList<Scalar>& out, const std::string& prefix) const {
  for (int i = 0; i < 4; ++i) {
    analysis.convs[i].collect(out, prefix + ".analysis.conv" + std::to_string(i));
    if (i < 3) analysis.gdns[i].collect(out, prefix + ".analysis.gdn" + std::to_string(i));
  }
  for (int i = 0; i < 4; ++i) {
    synthesis.deconvs[i].collect(out, prefix + ".synthesis.deconv" + std::to_string(i));
    if (i < 3) synthesis.igdns[i].collect(out, prefix + ".synthesis.igdn" + std::to_string(i));
  }
}

namespace {

template <typename Scalar>
Var<Scalar> analyse(const Var<Scalar>& x, const TransformWeights<Scalar>& w, const char* what) {
  const Shape s = x.shape();
  if (s.channels != w.signal_channels) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(w.signal_channels) +
                                " channels, got " + s.str());
  }
  if (s.height % 16 || s.width % 16 || s.height == 0 || s.width == 0) {
    throw std::invalid_argument(std::string(what) + ": sides must be multiples of 16, got " + s.str());
  }
  return w.analysis(x);
}

template <typename Scalar>
Var<Scalar> synthesise(const Var<Scalar>& latent, const TransformWeights<Scalar>& w, const char* what) {
  if (latent.shape().channels != kLatentChannels) {
    throw std::invalid_argument(std::string(what) + ": latent must have 128 channels, got " + latent.shape().str());
  }
  return w.synthesis(latent);
}

}  // namespace

template <typename Scalar>
Var<Scalar> mv_analysis(const Var<Scalar>& flow, const TransformWeights<Scalar>& w) {
  return analyse(flow, w, "mv_analysis");
}

template <typename Scalar>
Var<Scalar> mv_synthesis(const Var<Scalar>& latent, const TransformWeights<Scalar>& w) {
  return synthesise(latent, w, "mv_synthesis");
}

template <typename Scalar>
Var<Scalar> res_analysis(const Var<Scalar>& residual, const TransformWeights<Scalar>& w) {
  return analyse(residual, w, "res_analysis");
}

template <typename Scalar>
Var<Scalar> res_synthesis(const Var<Scalar>& latent, const TransformWeights<Scalar>& w) {
  return synthesise(latent, w, "res_synthesis");
}

#define ODVC_INSTANTIATE_TRANSFORMS(S)                                                 \
  template struct GdnLayer<S>;                                                         \
  template struct AnalysisTransform<S>;                                                \
  template struct SynthesisTransform<S>;                                               \
  template struct TransformWeights<S>;                                                 \
  template Var<S> mv_analysis(const Var<S>&, const TransformWeights<S>&);              \
  template Var<S> mv_synthesis(const Var<S>&, const TransformWeights<S>&);             \
  template Var<S> res_analysis(const Var<S>&, const TransformWeights<S>&);             \
  template Var<S> res_synthesis(const Var<S>&, const TransformWeights<S>&);

ODVC_INSTANTIATE_TRANSFORMS(float)
ODVC_INSTANTIATE_TRANSFORMS(double)

}  // namespace odvc
