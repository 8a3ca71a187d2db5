#pragma once

#include "odvc/autograd.hpp"
#include "odvc/frames_io.hpp"

#include <array>

namespace odvc {

inline constexpr double kPsnrCap = 100.0;

inline constexpr int kMsSsimScales = 5;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// Peak 1.0, capped at 100 dB.
double psnr(const Frame& a, const Frame& b);
double psnr(const Tensor<float>& a, const Tensor<float>& b);

/// Largest scale count (<= 5) whose coarsest level still fits the window.
int max_msssim_scales(int height, int width);

/// Differentiable MS-SSIM over all channels. With fewer than 5 scales the
/// leading weights are used, renormalized to sum to 1.
template <typename Scalar>
Var<Scalar> msssim(const Var<Scalar>& a, const Var<Scalar>& b, int scales = kMsSsimScales);

double msssim(const Frame& a, const Frame& b, int scales = kMsSsimScales);

}  // namespace odvc
