#include "odvc/model.hpp"

#include "odvc/errors.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace odvc {

namespace fs = std::filesystem;

std::string to_string(Metric m) { return m == Metric::kMse ? "mse" : "msssim"; }

Metric parse_metric(const std::string& name) {
  if (name == "mse" || name == "psnr" || name == "MSE" || name == "PSNR") return Metric::kMse;
  if (name == "msssim" || name == "ms-ssim" || name == "MS-SSIM") return Metric::kMsSsim;
  throw std::invalid_argument("unknown metric '" + name + "'");
}

bool is_standard_lambda(double lambda, Metric metric) {
  const auto& set = metric == Metric::kMse ? kMseLambdas : kMsSsimLambdas;
  return std::find(set.begin(), set.end(), lambda) != set.end();
}

std::optional<double> pretrain_lambda_for(double msssim_lambda) {
  for (std::size_t i = 0; i < kMsSsimLambdas.size(); ++i) {
    if (kMsSsimLambdas[i] == msssim_lambda) return kMseLambdas[i];
  }
  return std::nullopt;
}

std::string hex(const ModelHash& h) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto b : h) {
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

std::string topology_description() {
  return "odvc/1 flow:5x[conv7 8-32-64-32-16-2 relu] mv:[k3 c128 gdn x4 | igdn x4 -> 2] "
         "res:[k5 c128 gdn x4 | igdn x4 -> 3] mc:[c64 k3 unet 3blocks/scale stride2-down nearest-up warped-skip] "
         "prior:[factorized 1-3-3-3-1 x128] x2";
}

template <typename Scalar>
CodecModel<Scalar> CodecModel<Scalar>::create(std::uint64_t seed, ModelMeta meta) {
  Rng rng(seed);
  CodecModel m;
  m.flow = PyramidFlowNet<Scalar>(rng);
  m.motion = TransformWeights<Scalar>::motion(rng);
  m.residual = TransformWeights<Scalar>::residual(rng);
  m.mc = MotionCompensationNet<Scalar>(rng);
  m.mc.zero_output_layer();
  m.motion_prior = FactorizedPrior<Scalar>(kLatentChannels, rng);
  m.residual_prior = FactorizedPrior<Scalar>(kLatentChannels, rng);
  m.meta = meta;
  return m;
}

template <typename Scalar>
ParameterList<Scalar> CodecModel<Scalar>::parameters(ParamGroup group) const {
  ParameterList<Scalar> out;
  switch (group) {
    case ParamGroup::kFlow: flow.collect(out, "flow"); break;
    case ParamGroup::kMotionTransform: motion.collect(out, "mv"); break;
    case ParamGroup::kMotionPrior: motion_prior.collect(out, "mv_prior"); break;
    case ParamGroup::kMotionCompensation: mc.collect(out, "mc"); break;
    case ParamGroup::kResidualTransform: residual.collect(out, "res"); break;
    case ParamGroup::kResidualPrior: residual_prior.collect(out, "res_prior"); break;
  }
  return out;
}

template <typename Scalar>
ParameterList<Scalar> CodecModel<Scalar>::parameters() const {
  ParameterList<Scalar> out;
  for (auto g : {ParamGroup::kFlow, ParamGroup::kMotionTransform, ParamGroup::kMotionPrior,
                 ParamGroup::kMotionCompensation, ParamGroup::kResidualTransform, ParamGroup::kResidualPrior}) {
    auto part = parameters(g);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

template <typename Scalar>
CodecModel<Scalar> CodecModel<Scalar>::clone() const {
  CodecModel copy = create(0, meta);
  const auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].var.mutable_value() = src[i].var.value();
  return copy;
}

template <typename Scalar>
ModelHash CodecModel<Scalar>::topology_hash() const {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  auto feed = [ctx](const void* data, std::size_t n) { EVP_DigestUpdate(ctx, data, n); };
  const std::string topo = topology_description();
  feed(topo.data(), topo.size());
  const auto metric = static_cast<std::uint8_t>(meta.metric);
  const float lambda = static_cast<float>(meta.lambda);
  feed(&metric, 1);
  feed(&lambda, sizeof(lambda));
  feed(&meta.version, sizeof(meta.version));
  for (const auto& p : parameters()) {
    feed(p.name.data(), p.name.size());
    const Shape s = p.var.shape();
    const std::int32_t dims[3] = {s.channels, s.height, s.width};
    feed(dims, sizeof(dims));
    const Tensor<float> values = p.var.value().template cast<float>();
    feed(values.data(), sizeof(float) * values.size());
  }
  ModelHash h{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, h.data(), &len);
  EVP_MD_CTX_free(ctx);
  return h;
}

template struct CodecModel<float>;
template struct CodecModel<double>;

namespace {

constexpr char kCheckpointMagic[8] = {'O', 'D', 'V', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

void save_model(const fs::path& path, const CodecModel<float>& model) {
  nlohmann::json meta;
  meta["lambda"] = model.meta.lambda;
  meta["metric"] = to_string(model.meta.metric);
  meta["version"] = model.meta.version;
  meta["topology"] = topology_description();
  meta["hash"] = hex(model.topology_hash());
  const auto params = model.parameters();
  for (const auto& p : params) {
    const Shape s = p.var.shape();
    meta["tensors"].push_back({{"name", p.name}, {"shape", {s.channels, s.height, s.width}}});
  }
  const std::string header = meta.dump();

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint32_t version = kCheckpointVersion;
    const auto header_len = static_cast<std::uint32_t>(header.size());
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&header_len), 4);
    out.write(header.data(), std::streamsize(header.size()));
    for (const auto& p : params) {
      out.write(reinterpret_cast<const char*>(p.var.value().data()), std::streamsize(sizeof(float) * p.var.value().size()));
    }
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

CodecModel<float> load_model(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint32_t header_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&header_len), 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw FormatError(path.string() + ": not a checkpoint");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw FormatError(path.string() + ": truncated checkpoint header");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (meta.value("topology", std::string()) != topology_description()) {
    throw ModelMismatchError(path.string() + ": checkpoint topology differs from this build");
  }
  ModelMeta mm;
  mm.lambda = meta.at("lambda").get<double>();
  mm.metric = parse_metric(meta.at("metric").get<std::string>());
  mm.version = meta.at("version").get<std::uint32_t>();
  CodecModel<float> model = CodecModel<float>::create(0, mm);
  auto params = model.parameters();
  const auto& index = meta.at("tensors");
  if (index.size() != params.size()) throw FormatError(path.string() + ": tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = index[i];
    const Shape s = params[i].var.shape();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (entry.at("name").get<std::string>() != params[i].name || shape != std::vector<int>{s.channels, s.height, s.width}) {
      throw FormatError(path.string() + ": unexpected tensor " + entry.at("name").get<std::string>());
    }
    Tensor<float>& t = params[i].var.mutable_value();
    in.read(reinterpret_cast<char*>(t.data()), std::streamsize(sizeof(float) * t.size()));
    if (!in) throw FormatError(path.string() + ": truncated tensor data");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  if (meta.contains("hash") && meta["hash"].get<std::string>() != hex(model.topology_hash())) {
    throw FormatError(path.string() + ": checkpoint hash mismatch");
  }
  return model;
}

}  // namespace odvc
