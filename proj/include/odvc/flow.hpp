#pragma once

#include "odvc/layers.hpp"

#include <array>
#include <vector>

namespace odvc {

/// Per-pixel displacement in pixels; channel 0 horizontal, channel 1 vertical.
template <typename Scalar>
using FlowField = Var<Scalar>;

/// Successive 2x2 mean pools, full resolution first.
template <typename Scalar>
std::vector<Var<Scalar>> build_pyramid(const Var<Scalar>& image, int levels = 5);

/// Coarse-to-fine motion network: five levels, each a stack of five 7x7
/// convolutions (32, 64, 32, 16, 2 filters, ReLU in between) fed with the
/// target, the reference warped by the current estimate and that estimate.
template <typename Scalar>
class PyramidFlowNet {
 public:
  static constexpr int kLevels = 5;
  static constexpr int kKernel = 7;
  static constexpr int kInputChannels = 8;
  static constexpr std::array<int, 5> kFilters{32, 64, 32, 16, 2};

  using Level = std::array<Conv2d<Scalar>, 5>;

  PyramidFlowNet() = default;
  explicit PyramidFlowNet(Rng& rng);

  /// Flow that backward-warps `reference` onto `target`.
  FlowField<Scalar> estimate(const Var<Scalar>& reference, const Var<Scalar>& target) const;

  /// Residual flow predicted by one level (0 = finest) for the given inputs.
  Var<Scalar> run_level(int level, const Var<Scalar>& target, const Var<Scalar>& warped,
                        const Var<Scalar>& flow) const;

  /// Zeroes the last convolution of every level, making each level an identity refinement.
  void zero_output_layers();

  [[nodiscard]] const std::array<Level, kLevels>& levels() const { return levels_; }
  void collect(ParameterList<Scalar>& out, const std::string& prefix = "flow") const;

 private:
  std::array<Level, kLevels> levels_;
};

template <typename Scalar>
FlowField<Scalar> estimate_flow(const Var<Scalar>& reference, const Var<Scalar>& target,
                                const PyramidFlowNet<Scalar>& net) {
  return net.estimate(reference, target);
}

}  // namespace odvc
