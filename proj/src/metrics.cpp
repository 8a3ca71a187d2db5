#include "odvc/metrics.hpp"

#include "odvc/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace odvc {

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  const double err = (a.matrix().cast<double>() - b.matrix().cast<double>()).squaredNorm() / double(a.size());
  if (err <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / err));
}

double psnr(const Frame& a, const Frame& b) { return psnr(a.pixels(), b.pixels()); }

int max_msssim_scales(int height, int width) {
  int scales = 0;
  int h = height;
  int w = width;
  while (scales < kMsSsimScales && h >= kSsimWindow && w >= kSsimWindow) {
    ++scales;
    h /= 2;
    w /= 2;
  }
  return scales;
}

namespace {

template <typename Scalar>
std::vector<Scalar> gaussian_taps() {
  std::vector<Scalar> taps(kSsimWindow);
  double total = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    taps[i] = Scalar(std::exp(-d * d / (2 * kSsimSigma * kSsimSigma)));
    total += double(taps[i]);
  }
  for (auto& t : taps) t = Scalar(double(t) / total);
  return taps;
}

template <typename Scalar>
Var<Scalar> blur(const Var<Scalar>& x, const std::vector<Scalar>& taps) {
  return filter1d_valid(filter1d_valid(x, std::span<const Scalar>(taps), 0), std::span<const Scalar>(taps), 1);
}

template <typename Scalar>
Var<Scalar> even_crop(const Var<Scalar>& x) {
  const Shape s = x.shape();
  if (s.height % 2 == 0 && s.width % 2 == 0) return x;
  return crop_spatial(x, 0, 0, s.height - s.height % 2, s.width - s.width % 2);
}

}  // namespace

template <typename Scalar>
Var<Scalar> msssim(const Var<Scalar>& a, const Var<Scalar>& b, int scales) {
  require_same_shape(a.shape(), b.shape(), "msssim");
  if (scales < 1 || scales > kMsSsimScales) throw std::invalid_argument("msssim: scales must be in [1, 5]");
  const int need = kSsimWindow << (scales - 1);
  if (a.shape().height < need || a.shape().width < need) {
    throw std::invalid_argument("msssim: " + std::to_string(scales) + " scales need frames of at least " +
                                std::to_string(need) + "px per side, got " + a.shape().str() + "; use at most " +
                                std::to_string(max_msssim_scales(a.shape().height, a.shape().width)) + " scales");
  }
  double weight_total = 0;
  for (int s = 0; s < scales; ++s) weight_total += kMsSsimWeights[s];
  const Scalar c1 = Scalar(0.01 * 0.01);
  const Scalar c2 = Scalar(0.03 * 0.03);
  const auto taps = gaussian_taps<Scalar>();

  Var<Scalar> x = a;
  Var<Scalar> y = b;
  Var<Scalar> result;
  for (int s = 0; s < scales; ++s) {
    const Var<Scalar> mu_x = blur(x, taps);
    const Var<Scalar> mu_y = blur(y, taps);
    const Var<Scalar> mu_xx = square(mu_x);
    const Var<Scalar> mu_yy = square(mu_y);
    const Var<Scalar> mu_xy = mul(mu_x, mu_y);
    const Var<Scalar> var_x = sub(blur(square(x), taps), mu_xx);
    const Var<Scalar> var_y = sub(blur(square(y), taps), mu_yy);
    const Var<Scalar> cov = sub(blur(mul(x, y), taps), mu_xy);
    const Var<Scalar> cs_map =
        div(add_scalar(scale(cov, Scalar(2)), c2), add_scalar(add(var_x, var_y), c2));
    Var<Scalar> term;
    if (s + 1 < scales) {
      term = mean(cs_map);
    } else {
      const Var<Scalar> l_map =
          div(add_scalar(scale(mu_xy, Scalar(2)), c1), add_scalar(add(mu_xx, mu_yy), c1));
      term = mean(mul(l_map, cs_map));
    }
    const Var<Scalar> factor = pow_scalar(relu(term), Scalar(kMsSsimWeights[s] / weight_total));
    result = result.defined() ? mul(result, factor) : factor;
    if (s + 1 < scales) {
      x = avg_pool2(even_crop(x));
      y = avg_pool2(even_crop(y));
    }
  }
  return result;
}

double msssim(const Frame& a, const Frame& b, int scales) {
  NoGradGuard no_grad;
  const Var<double> x(a.pixels().cast<double>());
  const Var<double> y(b.pixels().cast<double>());
  return std::clamp(double(msssim(x, y, scales).item()), 0.0, 1.0);
}

template Var<float> msssim(const Var<float>&, const Var<float>&, int);
template Var<double> msssim(const Var<double>&, const Var<double>&, int);

}  // namespace odvc
