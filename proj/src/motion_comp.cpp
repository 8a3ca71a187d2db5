#include "odvc/motion_comp.hpp"

#include <stdexcept>

namespace odvc {

template <typename Scalar>
ResBlock<Scalar>::ResBlock(int channels, Rng& rng)
    : first(channels, channels, 3, 1, rng, 2.0), second(channels, channels, 3, 1, rng, 0.1) {}

template <typename Scalar>
Var<Scalar> ResBlock<Scalar>::operator()(const Var<Scalar>& x) const {
  return add(x, second(relu(first(x))));
}

template <typename Scalar>
void ResBlock<Scalar>::collect(ParameterList<Scalar>& out, const std::string& prefix) const {
  first.collect(out, prefix + ".conv0");
  second.collect(out, prefix + ".conv1");
}

template <typename Scalar>
MotionCompensationNet<Scalar>::MotionCompensationNet(Rng& rng)
    : input_(kInputChannels, kFilters, 3, 1, rng),
      enc_full_(kFilters, rng),
      down_half_(kFilters, kFilters, 3, 2, rng),
      enc_half_(kFilters, rng),
      down_quarter_(kFilters, kFilters, 3, 2, rng),
      up_half_(kFilters, kFilters, 3, 1, rng),
      up_full_(kFilters, kFilters, 3, 1, rng),
      output_(kFilters, 3, 3, 1, rng, 0.01) {
  for (int i = 0; i < kBlocksPerScale; ++i) bottom_.emplace_back(kFilters, rng);
  for (int i = 0; i < kBlocksPerScale - 1; ++i) dec_half_.emplace_back(kFilters, rng);
  for (int i = 0; i < kBlocksPerScale - 1; ++i) dec_full_.emplace_back(kFilters, rng);
}

template <typename Scalar>
Var<Scalar> MotionCompensationNet<Scalar>::forward(const Var<Scalar>& reference, const Var<Scalar>& warped,
                                                   const Var<Scalar>& flow, Trace* trace) const {
  require_same_shape(reference.shape(), warped.shape(), "motion_compensate");
  if (reference.shape().channels != 3 || flow.shape().channels != 2 ||
      flow.shape().height != reference.shape().height || flow.shape().width != reference.shape().width) {
    throw std::invalid_argument("motion_compensate: inputs not aligned: " + reference.shape().str() + ", " +
                                flow.shape().str());
  }
  if (reference.shape().height % 4 || reference.shape().width % 4) {
    throw std::invalid_argument("motion_compensate: sides must be multiples of 4, got " + reference.shape().str());
  }
  auto plus = [trace](const Var<Scalar>& a, const Var<Scalar>& b) {
    if (trace) trace->additions.emplace_back(a.shape(), b.shape());
    return add(a, b);
  };

  const Var<Scalar> full = enc_full_(input_(concat_channels<Scalar>({reference, warped, flow})));
  const Var<Scalar> half = enc_half_(down_half_(full));
  Var<Scalar> h = down_quarter_(half);
  for (const auto& block : bottom_) h = block(h);
  h = plus(up_half_(upsample_nearest2(h)), half);
  for (const auto& block : dec_half_) h = block(h);
  h = plus(up_full_(upsample_nearest2(h)), full);
  for (const auto& block : dec_full_) h = block(h);
  return plus(warped, output_(h));
}

template <typename Scalar>
void MotionCompensationNet<Scalar>::zero_output_layer() {
  output_.zero();
}

template <typename Scalar>
void MotionCompensationNet<Scalar>::collect(ParameterList<Scalar>& out, const std::string& prefix) const {
  input_.collect(out, prefix + ".input");
  enc_full_.collect(out, prefix + ".enc_full");
  down_half_.collect(out, prefix + ".down_half");
  enc_half_.collect(out, prefix + ".enc_half");
  down_quarter_.collect(out, prefix + ".down_quarter");
  for (std::size_t i = 0; i < bottom_.size(); ++i) bottom_[i].collect(out, prefix + ".bottom" + std::to_string(i));
  up_half_.collect(out, prefix + ".up_half");
  for (std::size_t i = 0; i < dec_half_.size(); ++i) dec_half_[i].collect(out, prefix + ".dec_half" + std::to_string(i));
  up_full_.collect(out, prefix + ".up_full");
  for (std::size_t i = 0; i < dec_full_.size(); ++i) dec_full_[i].collect(out, prefix + ".dec_full" + std::to_string(i));
  output_.collect(out, prefix + ".output");
}

template struct ResBlock<float>;
template struct ResBlock<double>;
template class MotionCompensationNet<float>;
template class MotionCompensationNet<double>;

}  // namespace odvc
