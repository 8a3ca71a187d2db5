#pragma once

#include "odvc/ops.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace odvc {

/// A trainable tensor together with its stable checkpoint name.
template <typename Scalar>
struct NamedParameter {
  std::string name;
  Var<Scalar> var;
};

template <typename Scalar>
using ParameterList = std::vector<NamedParameter<Scalar>>;

/// Portable uniform draws from a fixed-algorithm engine, so a seed gives
/// the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next() { return engine_(); }
  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

 private:
  std::mt19937_64 engine_;
};

template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<Scalar> t(shape);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = Scalar(rng.uniform(-bound, bound));
  return t;
}

/// Convolution with bias. Stride-1 layers use "same" padding.
template <typename Scalar>
struct Conv2d {
  Var<Scalar> weight;  // out x 1 x (in*k*k)
  Var<Scalar> bias;    // out x 1 x 1
  ConvSpec spec;

  Conv2d() = default;
  /// Fan-in scaled uniform init; `gain` of 2 suits a following ReLU.
  Conv2d(int in, int out, int kernel, int stride, Rng& rng, double gain = 1.0)
      : spec{kernel, stride, (kernel - 1) / 2, 0} {
    const double bound = std::sqrt(3.0 * gain / double(in * kernel * kernel));
    weight = Var<Scalar>(uniform_tensor<Scalar>({out, 1, in * kernel * kernel}, bound, rng), true);
    bias = Var<Scalar>(Tensor<Scalar>(out, 1, 1), true);
  }

  [[nodiscard]] int in_channels() const { return weight.shape().width / (spec.kernel * spec.kernel); }
  [[nodiscard]] int out_channels() const { return weight.shape().channels; }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return conv2d(x, weight, bias, spec); }

  void zero() {
    weight.mutable_value().matrix().setZero();
    bias.mutable_value().matrix().setZero();
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

/// Stride-2 transposed convolution whose output is exactly twice the input.
template <typename Scalar>
struct ConvTranspose2d {
  Var<Scalar> weight;  // in x 1 x (out*k*k)
  Var<Scalar> bias;
  ConvSpec spec;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in, int out, int kernel, Rng& rng, double gain = 1.0)
      : spec{kernel, 2, (kernel - 1) / 2, 1} {
    // each output sees roughly a quarter of the taps at stride 2
    const double fan_in = double(in * kernel * kernel) / 4.0;
    const double bound = std::sqrt(3.0 * gain / fan_in);
    weight = Var<Scalar>(uniform_tensor<Scalar>({in, 1, out * kernel * kernel}, bound, rng), true);
    bias = Var<Scalar>(Tensor<Scalar>(out, 1, 1), true);
  }

  [[nodiscard]] int out_channels() const { return weight.shape().width / (spec.kernel * spec.kernel); }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return conv_transpose2d(x, weight, bias, spec); }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

}  // namespace odvc
