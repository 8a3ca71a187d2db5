#pragma once

#include "odvc/layers.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace odvc {

inline constexpr double kLikelihoodFloor = 1e-9;
inline constexpr double kDefaultTailMass = 1e-9;
inline constexpr int kMaxSupportWidth = 4096;
inline constexpr int kProbabilityBits = 16;
inline constexpr std::uint32_t kProbabilityTotal = 1u << kProbabilityBits;

enum class QuantizeMode { kTrain, kTest };

/// Test mode rounds half away from zero; train mode adds U(-0.5, 0.5) noise
/// (rng required) so the result stays differentiable.
template <typename Scalar>
Var<Scalar> quantize(const Var<Scalar>& latent, QuantizeMode mode, Rng* rng = nullptr);

/// Learned per-channel cumulative c(x) = sigmoid(f(x)), f a monotone stack of
/// four 1->3->3->3->1 affine stages with tanh gates on the hidden stages.
template <typename Scalar>
class FactorizedPrior {
 public:
  static constexpr std::array<int, 5> kWidths{1, 3, 3, 3, 1};
  static constexpr int kStages = 4;

  FactorizedPrior() = default;
  FactorizedPrior(int channels, Rng& rng, double init_scale = 10.0);

  [[nodiscard]] int channels() const { return channels_; }

  /// f(x) evaluated elementwise with the parameters of each element's channel.
  [[nodiscard]] Var<Scalar> cumulative_logits(const Var<Scalar>& x) const;

  /// P(q - 0.5 < x < q + 0.5), floored at kLikelihoodFloor.
  [[nodiscard]] Var<Scalar> likelihood(const Var<Scalar>& latent_hat) const;

  void zero_biases();
  void collect(ParameterList<Scalar>& out, const std::string& prefix) const;

 private:
  struct Stage {
    std::vector<std::vector<Var<Scalar>>> matrix;  // [out][in], softplus-parameterized
    std::vector<Var<Scalar>> bias;                 // [out]
    std::vector<Var<Scalar>> factor;               // [out], tanh-parameterized; empty on the last stage
  };

  int channels_ = 0;
  std::array<Stage, kStages> stages_;
};

template <typename Scalar>
Var<Scalar> likelihood(const Var<Scalar>& latent_hat, const FactorizedPrior<Scalar>& prior) {
  return prior.likelihood(latent_hat);
}

/// Rate of a set of probabilities; `bits` stays connected to the graph.
template <typename Scalar>
struct RateEstimate {
  Var<Scalar> bits;
  Tensor<Scalar> log2_likelihoods;

  [[nodiscard]] double total_bits() const { return double(bits.item()); }
};

/// total = -sum(log2 p); throws std::domain_error for any p <= 0.
template <typename Scalar>
RateEstimate<Scalar> rate_bits(const Var<Scalar>& probabilities);

/// Quantized CDF of one channel: symbols offset .. offset+support-1 followed
/// by an escape slot. cdf has support + 2 strictly increasing entries from 0
/// to 2^16.
struct ChannelCdf {
  std::int32_t offset = 0;
  std::vector<std::uint32_t> cdf;

  [[nodiscard]] int support() const { return static_cast<int>(cdf.size()) - 2; }
  [[nodiscard]] int escape_index() const { return support(); }
  [[nodiscard]] std::uint32_t mass(int index) const { return cdf[index + 1] - cdf[index]; }
};

struct CdfTable {
  std::vector<ChannelCdf> channels;

  /// pmf over offset.. plus a trailing escape mass; every slot gets >= 1/2^16.
  static ChannelCdf quantize_pmf(const std::vector<double>& pmf_with_escape, std::int32_t offset);
  /// Strictly increasing, starts at 0, ends at 2^16.
  [[nodiscard]] bool valid() const;
};

/// Support per channel keeps each tail below tail_mass. Throws
/// DegeneratePriorError when the support would exceed kMaxSupportWidth.
template <typename Scalar>
CdfTable build_cdf_tables(const FactorizedPrior<Scalar>& prior, double tail_mass = kDefaultTailMass);

/// Flat integer latent in channel-major, row-major order.
struct SymbolGrid {
  Shape shape;
  std::vector<std::int32_t> values;
};

SymbolGrid to_symbols(const Tensor<float>& quantized);
Tensor<float> from_symbols(const SymbolGrid& symbols);

}  // namespace odvc
