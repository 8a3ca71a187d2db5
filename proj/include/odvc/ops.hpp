#pragma once

#include "odvc/autograd.hpp"

#include <span>
#include <vector>

namespace odvc {

/// Geometry of a (transposed) convolution. Square kernels only.
struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int output_pad = 0;  // transposed convolution only
};

// Elementwise arithmetic. Shapes must match exactly unless noted.
template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& x, Scalar factor);
template <typename Scalar> Var<Scalar> add_scalar(const Var<Scalar>& x, Scalar offset);

template <typename Scalar> Var<Scalar> relu(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> tanh(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> sigmoid(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> softplus(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> square(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> abs(const Var<Scalar>& x);
/// x^exponent for x > 0; zero (value and gradient) for x <= 0.
template <typename Scalar> Var<Scalar> pow_scalar(const Var<Scalar>& x, Scalar exponent);
/// max(x, bound). The gradient passes through wherever it would move x up.
template <typename Scalar> Var<Scalar> lower_bound(const Var<Scalar>& x, Scalar bound);
/// Hard clip; zero gradient outside [lo, hi].
template <typename Scalar> Var<Scalar> clamp(const Var<Scalar>& x, Scalar lo, Scalar hi);

// Per-channel broadcasting with a C x 1 x 1 operand (or 1 x 1 x 1).
template <typename Scalar> Var<Scalar> mul_channel(const Var<Scalar>& x, const Var<Scalar>& s);
template <typename Scalar> Var<Scalar> add_channel(const Var<Scalar>& x, const Var<Scalar>& b);

// Reductions to a 1 x 1 x 1 scalar.
template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> mean(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b);
/// -sum(log2 p); p must be strictly positive.
template <typename Scalar> Var<Scalar> neg_log2_sum(const Var<Scalar>& p);

// Channel plumbing.
template <typename Scalar> Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts);
template <typename Scalar> Var<Scalar> slice_channels(const Var<Scalar>& x, int begin, int count);
template <typename Scalar> Var<Scalar> crop_spatial(const Var<Scalar>& x, int top, int left, int height, int width);

/// weight: Cout x 1 x (Cin*k*k); bias: Cout x 1 x 1 (may be undefined).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, const ConvSpec& spec);
/// weight: Cin x 1 x (Cout*k*k); output side (H-1)*stride - 2*pad + k + output_pad.
template <typename Scalar>
Var<Scalar> conv_transpose2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                             const ConvSpec& spec);

// Resampling.
template <typename Scalar> Var<Scalar> avg_pool2(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> upsample_nearest2(const Var<Scalar>& x);
/// Half-pixel-centred bilinear x2 upsampling with edge clamping. Values are not rescaled.
template <typename Scalar> Var<Scalar> upsample_bilinear2(const Var<Scalar>& x);
/// Valid 1-D correlation along width (axis 1) or height (axis 0).
template <typename Scalar>
Var<Scalar> filter1d_valid(const Var<Scalar>& x, std::span<const Scalar> taps, int axis);

/// Backward bilinear warp: out(p) = image(p + flow(p)), sample coordinates
/// clamped to the image border. flow channel 0 is horizontal, 1 vertical.
template <typename Scalar> Var<Scalar> warp(const Var<Scalar>& image, const Var<Scalar>& flow);

/// Divisive normalization: y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2).
/// beta: C x 1 x 1, gamma: C x 1 x C.
template <typename Scalar> Var<Scalar> gdn(const Var<Scalar>& x, const Var<Scalar>& beta, const Var<Scalar>& gamma);
/// y_i = x_i * sqrt(beta_i + sum_j gamma_ij x_j^2).
template <typename Scalar> Var<Scalar> igdn(const Var<Scalar>& x, const Var<Scalar>& beta, const Var<Scalar>& gamma);

template <typename Scalar> Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar> Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar> Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }

/// Throws std::invalid_argument naming `what` when the shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace odvc
