#include "odvc/bottleneck.hpp"

#include "odvc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace odvc {

template <typename Scalar>
Var<Scalar> quantize(const Var<Scalar>& latent, QuantizeMode mode, Rng* rng) {
  if (mode == QuantizeMode::kTest) {
    Tensor<Scalar> q(latent.shape());
    q.array() = latent.value().array().unaryExpr([](Scalar v) { return std::round(v); });
    return Var<Scalar>(std::move(q));
  }
  if (rng == nullptr) throw std::invalid_argument("quantize: train mode requires an rng");
  Tensor<Scalar> noise(latent.shape());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = Scalar(rng->uniform(-0.5, 0.5));
  return add(latent, Var<Scalar>(std::move(noise)));
}

template <typename Scalar>
FactorizedPrior<Scalar>::FactorizedPrior(int channels, Rng& rng, double init_scale) : channels_(channels) {
  const double scale = std::pow(init_scale, 1.0 / kStages);
  auto per_channel = [channels](double v) {
    return Var<Scalar>(Tensor<Scalar>::constant({channels, 1, 1}, Scalar(v)), true);
  };
  for (int k = 0; k < kStages; ++k) {
    const int in = kWidths[k];
    const int out = kWidths[k + 1];
    const double init = std::log(std::expm1(1.0 / scale / out));
    Stage& s = stages_[k];
    s.matrix.assign(out, {});
    for (int o = 0; o < out; ++o) {
      for (int i = 0; i < in; ++i) s.matrix[o].push_back(per_channel(init));
      Tensor<Scalar> b(channels, 1, 1);
      for (int c = 0; c < channels; ++c) b.matrix()(c, 0) = Scalar(rng.uniform(-0.5, 0.5));
      s.bias.push_back(Var<Scalar>(std::move(b), true));
      if (k + 1 < kStages) s.factor.push_back(per_channel(0.0));
    }
  }
}

template <typename Scalar>
Var<Scalar> FactorizedPrior<Scalar>::cumulative_logits(const Var<Scalar>& x) const {
  if (x.shape().channels != channels_) {
    throw std::invalid_argument("prior has " + std::to_string(channels_) + " channels, latent is " + x.shape().str());
  }
  std::vector<Var<Scalar>> h{x};
  for (int k = 0; k < kStages; ++k) {
    const Stage& s = stages_[k];
    std::vector<Var<Scalar>> next;
    for (std::size_t o = 0; o < s.bias.size(); ++o) {
      Var<Scalar> acc = mul_channel(h[0], softplus(s.matrix[o][0]));
      for (std::size_t i = 1; i < h.size(); ++i) acc = add(acc, mul_channel(h[i], softplus(s.matrix[o][i])));
      acc = add_channel(acc, s.bias[o]);
      if (!s.factor.empty()) acc = add(acc, mul_channel(odvc::tanh(acc), odvc::tanh(s.factor[o])));
      next.push_back(acc);
    }
    h = std::move(next);
  }
  return h.front();
}

template <typename Scalar>
Var<Scalar> FactorizedPrior<Scalar>::likelihood(const Var<Scalar>& latent_hat) const {
  const Var<Scalar> upper = cumulative_logits(add_scalar(latent_hat, Scalar(0.5)));
  const Var<Scalar> lower = cumulative_logits(add_scalar(latent_hat, Scalar(-0.5)));
  // Evaluate on the side of the median where the sigmoid is far from 1.
  Tensor<Scalar> sign(upper.shape());
  sign.array() = (upper.value().array() + lower.value().array())
                     .unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(-1) : Scalar(1); });
  const Var<Scalar> flip(std::move(sign));
  const Var<Scalar> p = abs(sub(sigmoid(mul(upper, flip)), sigmoid(mul(lower, flip))));
  return lower_bound(p, Scalar(kLikelihoodFloor));
}

template <typename Scalar>
void FactorizedPrior<Scalar>::zero_biases() {
  for (auto& s : stages_) {
    for (auto& b : s.bias) b.mutable_value().matrix().setZero();
  }
}

template <typename Scalar>
void FactorizedPrior<Scalar>::collect(ParameterList<Scalar>& out, const std::string& prefix) const {
  for (int k = 0; k < kStages; ++k) {
    const Stage& s = stages_[k];
    const std::string stage = prefix + ".stage" + std::to_string(k);
    for (std::size_t o = 0; o < s.matrix.size(); ++o) {
      for (std::size_t i = 0; i < s.matrix[o].size(); ++i) {
        out.push_back({stage + ".matrix" + std::to_string(o) + std::to_string(i), s.matrix[o][i]});
      }
      out.push_back({stage + ".bias" + std::to_string(o), s.bias[o]});
      if (!s.factor.empty()) out.push_back({stage + ".factor" + std::to_string(o), s.factor[o]});
    }
  }
}

template <typename Scalar>
RateEstimate<Scalar> rate_bits(const Var<Scalar>& probabilities) {
  RateEstimate<Scalar> r;
  r.bits = neg_log2_sum(probabilities);
  r.log2_likelihoods = Tensor<Scalar>(probabilities.shape());
  r.log2_likelihoods.array() = probabilities.value().array().log() / std::log(Scalar(2));
  return r;
}

ChannelCdf CdfTable::quantize_pmf(const std::vector<double>& pmf_with_escape, std::int32_t offset) {
  const int n = static_cast<int>(pmf_with_escape.size());
  if (n < 2) throw std::invalid_argument("quantize_pmf: need at least one symbol plus escape");
  if (n > int(kProbabilityTotal)) throw DegeneratePriorError("quantize_pmf: more slots than probability units");
  double total = 0;
  for (double p : pmf_with_escape) {
    if (!(p >= 0) || !std::isfinite(p)) throw DegeneratePriorError("quantize_pmf: invalid probability");
    total += p;
  }
  if (total <= 0) throw DegeneratePriorError("quantize_pmf: zero total mass");

  std::vector<double> target(n);
  std::vector<std::int64_t> mass(n);
  std::int64_t sum = 0;
  for (int i = 0; i < n; ++i) {
    target[i] = pmf_with_escape[i] / total * kProbabilityTotal;
    mass[i] = std::max<std::int64_t>(1, std::llround(target[i]));
    sum += mass[i];
  }
  // Move one unit at a time from/to the slot that is furthest off target.
  while (sum != std::int64_t(kProbabilityTotal)) {
    int best = -1;
    double best_err = 0;
    for (int i = 0; i < n; ++i) {
      const double err = double(mass[i]) - target[i];
      if (sum > std::int64_t(kProbabilityTotal)) {
        if (mass[i] > 1 && (best < 0 || err > best_err)) {
          best = i;
          best_err = err;
        }
      } else if (best < 0 || err < best_err) {
        best = i;
        best_err = err;
      }
    }
    if (sum > std::int64_t(kProbabilityTotal)) {
      --mass[best];
      --sum;
    } else {
      ++mass[best];
      ++sum;
    }
  }
  ChannelCdf out;
  out.offset = offset;
  out.cdf.resize(n + 1);
  out.cdf[0] = 0;
  for (int i = 0; i < n; ++i) out.cdf[i + 1] = out.cdf[i] + static_cast<std::uint32_t>(mass[i]);
  return out;
}

bool CdfTable::valid() const {
  for (const auto& ch : channels) {
    if (ch.cdf.size() < 3 || ch.cdf.front() != 0 || ch.cdf.back() != kProbabilityTotal) return false;
    for (std::size_t i = 1; i < ch.cdf.size(); ++i) {
      if (ch.cdf[i] <= ch.cdf[i - 1]) return false;
    }
  }
  return true;
}

namespace {

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

template <typename Scalar>
CdfTable build_cdf_tables(const FactorizedPrior<Scalar>& prior, double tail_mass) {
  NoGradGuard no_grad;
  // Bin edges q - 0.5 for q in [-reach, reach + 1].
  const int reach = kMaxSupportWidth + 4;
  const int edges = 2 * reach + 2;
  Tensor<Scalar> grid(prior.channels(), 1, edges);
  for (int c = 0; c < prior.channels(); ++c) {
    for (int e = 0; e < edges; ++e) grid(c, 0, e) = Scalar(e - reach) - Scalar(0.5);
  }
  const Tensor<Scalar> logits = prior.cumulative_logits(Var<Scalar>(std::move(grid))).value();
  const double tail_logit = std::log(tail_mass / (1.0 - tail_mass));

  CdfTable table;
  for (int c = 0; c < prior.channels(); ++c) {
    auto edge = [&](int e) { return double(logits(c, 0, e)); };
    int lo = -1;  // last edge whose lower tail is below tail_mass
    for (int e = 0; e < edges && edge(e) < tail_logit; ++e) lo = e;
    int hi = -1;  // first edge whose upper tail is below tail_mass
    for (int e = edges - 1; e >= 0 && edge(e) > -tail_logit; --e) hi = e;
    if (!std::isfinite(edge(0)) || !std::isfinite(edge(edges - 1))) {
      throw DegeneratePriorError("channel " + std::to_string(c) + ": non-finite cumulative");
    }
    if (lo < 0 || hi < 0 || hi <= lo) {
      throw DegeneratePriorError("channel " + std::to_string(c) + ": tails do not fall below " +
                                 std::to_string(tail_mass) + " within the maximum support");
    }
    // Edge e is the lower edge of symbol e - reach.
    const int s_min = lo - reach;
    const int s_max = hi - 1 - reach;
    const int width = s_max - s_min + 1;
    if (width > kMaxSupportWidth) {
      throw DegeneratePriorError("channel " + std::to_string(c) + ": support width " + std::to_string(width) +
                                 " exceeds " + std::to_string(kMaxSupportWidth));
    }
    std::vector<double> pmf;
    pmf.reserve(width + 1);
    for (int e = lo; e < hi; ++e) {
      const double l = edge(e);
      const double u = edge(e + 1);
      const double flip = (l + u) > 0 ? -1.0 : 1.0;
      pmf.push_back(std::abs(stable_sigmoid(flip * u) - stable_sigmoid(flip * l)));
    }
    pmf.push_back(stable_sigmoid(edge(lo)) + stable_sigmoid(-edge(hi)));
    table.channels.push_back(CdfTable::quantize_pmf(pmf, s_min));
  }
  return table;
}

SymbolGrid to_symbols(const Tensor<float>& quantized) {
  SymbolGrid g;
  g.shape = quantized.shape();
  g.values.resize(quantized.size());
  for (Eigen::Index i = 0; i < quantized.size(); ++i) {
    const float v = quantized.data()[i];
    if (v != std::round(v) || std::abs(v) > 2.0e9f) throw std::invalid_argument("to_symbols: non-integer latent");
    g.values[i] = static_cast<std::int32_t>(v);
  }
  return g;
}

Tensor<float> from_symbols(const SymbolGrid& symbols) {
  Tensor<float> t(symbols.shape);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = float(symbols.values[i]);
  return t;
}

#define ODVC_INSTANTIATE_BOTTLENECK(S)                            \
  template Var<S> quantize(const Var<S>&, QuantizeMode, Rng*);    \
  template class FactorizedPrior<S>;                              \
  template RateEstimate<S> rate_bits(const Var<S>&);              \
  template CdfTable build_cdf_tables(const FactorizedPrior<S>&, double);

ODVC_INSTANTIATE_BOTTLENECK(float)
ODVC_INSTANTIATE_BOTTLENECK(double)

}  // namespace odvc
