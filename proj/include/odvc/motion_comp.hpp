#pragma once

#include "odvc/layers.hpp"

#include <vector>

namespace odvc {

/// Two 3x3 convolutions, ReLU after the first, identity skip.
template <typename Scalar>
struct ResBlock {
  Conv2d<Scalar> first;
  Conv2d<Scalar> second;

  ResBlock() = default;
  ResBlock(int channels, Rng& rng);
  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(ParameterList<Scalar>& out, const std::string& prefix) const;
};

/// U-shaped refinement network over (reference, warped reference, flow).
///
/// Full, half and quarter scale each carry three residual blocks: one on the
/// way down and two on the way up at full/half scale, three at the bottom.
/// Down-sampling is a stride-2 convolution, up-sampling a nearest resize
/// followed by a convolution, and each up-sampled tensor is added to the
/// encoder tensor of the same scale. A final 64->3 convolution predicts a
/// correction that is added to the warped reference.
template <typename Scalar>
class MotionCompensationNet {
 public:
  static constexpr int kFilters = 64;
  static constexpr int kInputChannels = 8;
  static constexpr int kBlocksPerScale = 3;

  MotionCompensationNet() = default;
  explicit MotionCompensationNet(Rng& rng);

  /// Shapes of every element-wise addition operand pair, filled by forward().
  struct Trace {
    std::vector<std::pair<Shape, Shape>> additions;
  };

  Var<Scalar> forward(const Var<Scalar>& reference, const Var<Scalar>& warped, const Var<Scalar>& flow,
                      Trace* trace = nullptr) const;

  /// Zeroes the output convolution so the network returns the warped frame.
  void zero_output_layer();
  void collect(ParameterList<Scalar>& out, const std::string& prefix = "mc") const;

 private:
  Conv2d<Scalar> input_;
  ResBlock<Scalar> enc_full_;
  Conv2d<Scalar> down_half_;
  ResBlock<Scalar> enc_half_;
  Conv2d<Scalar> down_quarter_;
  std::vector<ResBlock<Scalar>> bottom_;
  Conv2d<Scalar> up_half_;
  std::vector<ResBlock<Scalar>> dec_half_;
  Conv2d<Scalar> up_full_;
  std::vector<ResBlock<Scalar>> dec_full_;
  Conv2d<Scalar> output_;
};

/// Motion-compensated prediction; not clipped.
template <typename Scalar>
Var<Scalar> motion_compensate(const Var<Scalar>& reference, const Var<Scalar>& warped, const Var<Scalar>& flow_hat,
                              const MotionCompensationNet<Scalar>& net) {
  return net.forward(reference, warped, flow_hat);
}

}  // namespace odvc
