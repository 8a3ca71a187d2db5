#pragma once

#include "odvc/layers.hpp"

#include <array>

namespace odvc {

inline constexpr int kLatentChannels = 128;
inline constexpr double kGdnBetaMin = 1e-6;
inline constexpr double kMotionSignalScale = 1.0;
inline constexpr double kResidualSignalScale = 50.0;

/// Effective divisive-normalization parameters (beta: C x 1 x 1, gamma: C x 1 x C).
template <typename Scalar>
struct GdnParams {
  Var<Scalar> beta;
  Var<Scalar> gamma;
};

template <typename Scalar>
Var<Scalar> gdn(const Var<Scalar>& x, const GdnParams<Scalar>& p) {
  return gdn(x, p.beta, p.gamma);
}

template <typename Scalar>
Var<Scalar> igdn(const Var<Scalar>& x, const GdnParams<Scalar>& p) {
  return igdn(x, p.beta, p.gamma);
}

/// Trainable GDN. beta = beta_raw^2 + beta_min and gamma = gamma_raw^2, so
/// the normalizer stays positive under any update.
template <typename Scalar>
struct GdnLayer {
  Var<Scalar> beta_raw;
  Var<Scalar> gamma_raw;
  bool inverse = false;

  GdnLayer() = default;
  GdnLayer(int channels, bool inverse_gdn);

  [[nodiscard]] GdnParams<Scalar> params() const;
  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(ParameterList<Scalar>& out, const std::string& prefix) const;
};

/// Four stride-2 convolutions, GDN after the first three.
template <typename Scalar>
struct AnalysisTransform {
  std::array<Conv2d<Scalar>, 4> convs;
  std::array<GdnLayer<Scalar>, 3> gdns;

  Var<Scalar> operator()(const Var<Scalar>& x) const;
};

/// Four stride-2 transposed convolutions, inverse GDN after the first three.
template <typename Scalar>
struct SynthesisTransform {
  std::array<ConvTranspose2d<Scalar>, 4> deconvs;
  std::array<GdnLayer<Scalar>, 3> igdns;

  Var<Scalar> operator()(const Var<Scalar>& x) const;
};

/// Auto-encoder weights: kernel 3 / 2 channels for motion, 5 / 3 for residual.
/// signal_scale amplifies the first analysis layer and attenuates the last
/// synthesis layer at init, setting the initial quantization step.
template <typename Scalar>
struct TransformWeights {
  int kernel = 3;
  int signal_channels = 2;
  AnalysisTransform<Scalar> analysis;
  SynthesisTransform<Scalar> synthesis;

  TransformWeights() = default;
  TransformWeights(int kernel_size, int channels, Rng& rng, double signal_scale = 1.0);

  static TransformWeights motion(Rng& rng) { return TransformWeights(3, 2, rng, kMotionSignalScale); }
  static TransformWeights residual(Rng& rng) { return TransformWeights(5, 3, rng, kResidualSignalScale); }

  void zero_biases();
  void collect(ParameterList<Scalar>& out, const std::string& prefix) const;
};

/// H x W x 2 flow -> H/16 x W/16 x 128 latent.
template <typename Scalar>
Var<Scalar> mv_analysis(const Var<Scalar>& flow, const TransformWeights<Scalar>& w);
/// h x w x 128 latent -> 16h x 16w x 2 flow.
template <typename Scalar>
Var<Scalar> mv_synthesis(const Var<Scalar>& latent, const TransformWeights<Scalar>& w);
template <typename Scalar>
Var<Scalar> res_analysis(const Var<Scalar>& residual, const TransformWeights<Scalar>& w);
template <typename Scalar>
Var<Scalar> res_synthesis(const Var<Scalar>& latent, const TransformWeights<Scalar>& w);

}  // namespace odvc
