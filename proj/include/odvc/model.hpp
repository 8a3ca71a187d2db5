#pragma once

#include "odvc/bottleneck.hpp"
#include "odvc/flow.hpp"
#include "odvc/motion_comp.hpp"
#include "odvc/transforms.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace odvc {

enum class Metric : std::uint8_t { kMse = 0, kMsSsim = 1 };

std::string to_string(Metric m);
/// Accepts "mse"/"psnr" and "msssim"/"ms-ssim".
Metric parse_metric(const std::string& name);

/// Operating points the released models are trained for.
inline constexpr std::array<double, 4> kMseLambdas{256, 512, 1024, 2048};
inline constexpr std::array<double, 4> kMsSsimLambdas{8, 16, 32, 64};

bool is_standard_lambda(double lambda, Metric metric);
/// MSE lambda an MS-SSIM model is fine-tuned from (8<-256 ... 64<-2048).
std::optional<double> pretrain_lambda_for(double msssim_lambda);

struct ModelMeta {
  double lambda = 1024;
  Metric metric = Metric::kMse;
  std::uint32_t version = 1;
};

using ModelHash = std::array<std::uint8_t, 32>;
std::string hex(const ModelHash& h);

/// Parameter groups in the order the progressive schedule enables them.
enum class ParamGroup { kFlow, kMotionTransform, kMotionPrior, kMotionCompensation, kResidualTransform, kResidualPrior };

/// Every weight of one (lambda, metric) operating point.
template <typename Scalar>
struct CodecModel {
  PyramidFlowNet<Scalar> flow;
  TransformWeights<Scalar> motion;
  TransformWeights<Scalar> residual;
  MotionCompensationNet<Scalar> mc;
  FactorizedPrior<Scalar> motion_prior;
  FactorizedPrior<Scalar> residual_prior;
  ModelMeta meta;

  static CodecModel create(std::uint64_t seed, ModelMeta meta = {});

  [[nodiscard]] ParameterList<Scalar> parameters() const;
  [[nodiscard]] ParameterList<Scalar> parameters(ParamGroup group) const;
  /// Independent copy; Var handles in the copy do not alias this model.
  [[nodiscard]] CodecModel clone() const;
  /// SHA-256 over the architecture description, metadata and all weights.
  [[nodiscard]] ModelHash topology_hash() const;
};

/// Human-readable architecture description, part of every model hash.
std::string topology_description();

/// Versioned archive: "ODVCCKPT", u32 version, u32 JSON length, JSON
/// (metadata + tensor index), then float32 little-endian tensor data.
/// Written to a temporary file and renamed into place.
void save_model(const std::filesystem::path& path, const CodecModel<float>& model);
CodecModel<float> load_model(const std::filesystem::path& path);

}  // namespace odvc
