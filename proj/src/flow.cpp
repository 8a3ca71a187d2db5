#include "odvc/flow.hpp"

#include <stdexcept>

namespace odvc {

template <typename Scalar>
std::vector<Var<Scalar>> build_pyramid(const Var<Scalar>& image, int levels) {
  if (levels < 1) throw std::invalid_argument("build_pyramid: levels must be >= 1");
  const int factor = 1 << (levels - 1);
  if (image.shape().height % factor || image.shape().width % factor) {
    throw std::invalid_argument("build_pyramid: " + image.shape().str() + " not divisible by " +
                                std::to_string(factor));
  }
  std::vector<Var<Scalar>> pyramid{image};
  for (int k = 1; k < levels; ++k) pyramid.push_back(avg_pool2(pyramid.back()));
  return pyramid;
}

template <typename Scalar>
PyramidFlowNet<Scalar>::PyramidFlowNet(Rng& rng) {
  for (auto& level : levels_) {
    int in = kInputChannels;
    for (std::size_t i = 0; i < kFilters.size(); ++i) {
      const bool last = i + 1 == kFilters.size();
      level[i] = Conv2d<Scalar>(in, kFilters[i], kKernel, 1, rng, last ? 0.1 : 2.0);
      in = kFilters[i];
    }
  }
}

template <typename Scalar>
Var<Scalar> PyramidFlowNet<Scalar>::run_level(int level, const Var<Scalar>& target, const Var<Scalar>& warped,
                                              const Var<Scalar>& flow) const {
  Var<Scalar> h = concat_channels<Scalar>({target, warped, flow});
  const Level& convs = levels_.at(level);
  for (std::size_t i = 0; i < convs.size(); ++i) {
    h = convs[i](h);
    if (i + 1 < convs.size()) h = relu(h);
  }
  return h;
}

template <typename Scalar>
FlowField<Scalar> PyramidFlowNet<Scalar>::estimate(const Var<Scalar>& reference, const Var<Scalar>& target) const {
  require_same_shape(reference.shape(), target.shape(), "estimate_flow");
  const auto refs = build_pyramid(reference, kLevels);
  const auto targets = build_pyramid(target, kLevels);
  const Shape coarse = refs.back().shape();
  Var<Scalar> flow(Tensor<Scalar>(2, coarse.height, coarse.width));
  for (int level = kLevels - 1; level >= 0; --level) {
    if (level != kLevels - 1) flow = scale(upsample_bilinear2(flow), Scalar(2));
    const Var<Scalar> warped = warp(refs[level], flow);
    flow = add(flow, run_level(level, targets[level], warped, flow));
  }
  return flow;
}

template <typename Scalar>
void PyramidFlowNet<Scalar>::zero_output_layers() {
  for (auto& level : levels_) level.back().zero();
}

template <typename Scalar>
void PyramidFlowNet<Scalar>::collect(ParameterList<Scalar>& out, const std::string& prefix) const {
  for (int l = 0; l < kLevels; ++l) {
    for (std::size_t i = 0; i < levels_[l].size(); ++i) {
      levels_[l][i].collect(out, prefix + ".level" + std::to_string(l) + ".conv" + std::to_string(i));
    }
  }
}

template std::vector<Var<float>> build_pyramid(const Var<float>&, int);
template std::vector<Var<double>> build_pyramid(const Var<double>&, int);
template class PyramidFlowNet<float>;
template class PyramidFlowNet<double>;

}  // namespace odvc
