#include "xinv/model/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "xinv/autodiff/ops.hpp"
#include "xinv/autodiff/serialize.hpp"
#include "xinv/error.hpp"

namespace xinv {

namespace {

constexpr std::uint64_t kDiscriminatorStream = 0x9e3779b97f4a7c15ULL;

Tensor glorot(std::mt19937_64& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), true);
}

Dense make_dense(std::mt19937_64& rng, std::size_t in, std::size_t out) {
  return Dense{glorot(rng, {in, out}, in, out), Tensor({out}, true)};
}

Tensor dense(Graph& g, const Dense& layer, const Tensor& x) {
  return ops::add_bias(g, ops::matmul(g, x, layer.weight), layer.bias);
}

Tensor copy_param(const Tensor& t) {
  Tensor c = t.clone();
  c.set_requires_grad(true);
  return c;
}

Dense copy_dense(const Dense& d) { return Dense{copy_param(d.weight), copy_param(d.bias)}; }

}  // namespace

ModelParams ModelParams::init(std::uint64_t seed, std::size_t sources) {
  ModelParams p;
  std::mt19937_64 rng(seed);
  std::size_t in_channels = 1;
  for (std::size_t i = 0; i < p.extractor.blocks.size(); ++i) {
    const auto out_channels = kExtractorWidths[i];
    const auto area = kKernel * kKernel;
    p.extractor.blocks[i].weight = glorot(rng, {out_channels, in_channels, kKernel, kKernel},
                                          in_channels * area, out_channels * area);
    p.extractor.blocks[i].bias = Tensor({out_channels}, true);
    in_channels = out_channels;
  }
  p.classifier.fc = make_dense(rng, kFeatureDim, 1);

  if (sources > 0) {
    std::mt19937_64 drng(seed ^ kDiscriminatorStream);
    Discriminator d;
    d.fc1 = make_dense(drng, kFeatureDim, kDiscriminatorHidden);
    d.fc2 = make_dense(drng, kDiscriminatorHidden, sources);
    p.discriminator = std::move(d);
  }
  return p;
}

std::vector<NamedTensor> ModelParams::extractor_params() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < extractor.blocks.size(); ++i) {
    const auto prefix = "e.conv" + std::to_string(i + 1);
    out.push_back({prefix + ".w", extractor.blocks[i].weight});
    out.push_back({prefix + ".b", extractor.blocks[i].bias});
  }
  return out;
}

std::vector<NamedTensor> ModelParams::classifier_params() const {
  return {{"c.fc.w", classifier.fc.weight}, {"c.fc.b", classifier.fc.bias}};
}

std::vector<NamedTensor> ModelParams::discriminator_params() const {
  if (!discriminator) return {};
  return {{"d.fc1.w", discriminator->fc1.weight},
          {"d.fc1.b", discriminator->fc1.bias},
          {"d.fc2.w", discriminator->fc2.weight},
          {"d.fc2.b", discriminator->fc2.bias}};
}

std::vector<NamedTensor> ModelParams::named() const {
  auto out = extractor_params();
  for (auto& t : classifier_params()) out.push_back(std::move(t));
  for (auto& t : discriminator_params()) out.push_back(std::move(t));
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  for (std::size_t i = 0; i < extractor.blocks.size(); ++i) {
    p.extractor.blocks[i] = {copy_param(extractor.blocks[i].weight),
                             copy_param(extractor.blocks[i].bias)};
  }
  p.classifier.fc = copy_dense(classifier.fc);
  if (discriminator) {
    p.discriminator = Discriminator{copy_dense(discriminator->fc1), copy_dense(discriminator->fc2)};
  }
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : named()) n += t.tensor.size();
  return n;
}

std::size_t expected_parameter_count(std::size_t sources) {
  std::size_t n = 0;
  std::size_t in_channels = 1;
  for (auto width : kExtractorWidths) {
    n += width * in_channels * kKernel * kKernel + width;
    in_channels = width;
  }
  n += kFeatureDim + 1;
  if (sources > 0) {
    n += kFeatureDim * kDiscriminatorHidden + kDiscriminatorHidden;
    n += kDiscriminatorHidden * sources + sources;
  }
  return n;
}

ExtractorTrace extract_traced(Graph& g, const ModelParams& params, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 1) {
    throw ShapeError("extract: expected N×1×H×W image batch, got " + to_string(x.shape()));
  }
  if (x.dim(2) % kExtractorStride || x.dim(3) % kExtractorStride) {
    throw ShapeError("extract: H and W must be divisible by 8, got " + to_string(x.shape()));
  }
  Tensor h = x;
  for (const auto& block : params.extractor.blocks) {
    h = ops::avg_pool2(g, ops::relu(g, ops::conv2d(g, h, block.weight, block.bias)));
  }
  return {h, ops::global_avg_pool(g, h)};
}

Tensor extract(Graph& g, const ModelParams& params, const Tensor& x) {
  return extract_traced(g, params, x).features;
}

Tensor classify_logit(Graph& g, const ModelParams& params, const Tensor& features) {
  return dense(g, params.classifier.fc, features);
}

Tensor classify(Graph& g, const ModelParams& params, const Tensor& features) {
  return ops::sigmoid(g, classify_logit(g, params, features));
}

Tensor discriminate(Graph& g, const ModelParams& params, const Tensor& features) {
  if (!params.discriminator) throw ConfigError("discriminate: model has no discriminator");
  const auto& d = *params.discriminator;
  return ops::sigmoid(g, dense(g, d.fc2, ops::relu(g, dense(g, d.fc1, features))));
}

namespace {
constexpr char kCheckpointMagic[4] = {'X', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  const auto tensors = params.named();
  std::uint64_t header = sizeof(kCheckpointMagic) + 4 + 4;
  for (const auto& t : tensors) header += 4 + t.name.size() + 8;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = header;
  for (const auto& t : tensors) {
    detail::write_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_u64(out, offset);
    offset += serialized_size(t.tensor);
  }
  for (const auto& t : tensors) write_tensor(out, t.tensor);
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw ParseError(path.string() + ": not a checkpoint file");
  }
  if (detail::read_u32(in) != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version");
  }
  const auto count = detail::read_u32(in);
  std::vector<std::pair<std::string, std::uint64_t>> manifest;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::read_u32(in);
    if (len > 256) throw ParseError(path.string() + ": implausible tensor name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw ParseError(path.string() + ": truncated manifest");
    manifest.emplace_back(std::move(name), detail::read_u64(in));
  }
  std::map<std::string, Tensor> tensors;
  for (const auto& [name, offset] : manifest) {
    in.seekg(static_cast<std::streamoff>(offset));
    Tensor t = read_tensor(in);
    t.set_requires_grad(true);
    tensors.emplace(name, std::move(t));
  }

  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ParseError(path.string() + ": missing tensor " + name);
    return it->second;
  };

  ModelParams p;
  std::size_t in_channels = 1;
  for (std::size_t i = 0; i < p.extractor.blocks.size(); ++i) {
    const auto prefix = "e.conv" + std::to_string(i + 1);
    p.extractor.blocks[i] = {take(prefix + ".w"), take(prefix + ".b")};
    const Shape expected{kExtractorWidths[i], in_channels, kKernel, kKernel};
    if (p.extractor.blocks[i].weight.shape() != expected) {
      throw ParseError(path.string() + ": " + prefix + ".w has shape " +
                       to_string(p.extractor.blocks[i].weight.shape()));
    }
    in_channels = kExtractorWidths[i];
  }
  p.classifier.fc = {take("c.fc.w"), take("c.fc.b")};
  if (tensors.count("d.fc1.w")) {
    p.discriminator = Discriminator{{take("d.fc1.w"), take("d.fc1.b")},
                                    {take("d.fc2.w"), take("d.fc2.b")}};
  }
  return p;
}

}  // namespace xinv
