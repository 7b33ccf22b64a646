#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xinv/autodiff/graph.hpp"
#include "xinv/autodiff/tensor.hpp"

namespace xinv {

inline constexpr std::array<std::size_t, 3> kExtractorWidths = {8, 16, 32};
inline constexpr std::size_t kFeatureDim = 32;
inline constexpr std::size_t kDiscriminatorHidden = 16;
inline constexpr std::size_t kKernel = 3;
/// Total spatial downsampling of the extractor (three 2×2 pools).
inline constexpr std::size_t kExtractorStride = 8;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ConvBlock {
  Tensor weight;  // O×C×3×3
  Tensor bias;    // O
};

struct Dense {
  Tensor weight;  // in×out
  Tensor bias;    // out
};

/// Conv trunk: three (conv 3×3 → relu → 2×2 avg-pool) blocks, then GAP.
struct FeatureExtractor {
  std::array<ConvBlock, 3> blocks;
};

struct Classifier {
  Dense fc;  // 32→1
};

struct Discriminator {
  Dense fc1;  // 32→16
  Dense fc2;  // 16→S
  std::size_t sources() const { return fc2.bias.size(); }
};

/// θ_e, θ_c and (for adversarial runs) θ_d.
struct ModelParams {
  FeatureExtractor extractor;
  Classifier classifier;
  std::optional<Discriminator> discriminator;

  /// Glorot-uniform weights, zero biases. Extractor and classifier draw from
  /// a stream that does not depend on `sources`, so baseline and adversarial
  /// runs with the same seed start from identical θ_e, θ_c.
  static ModelParams init(std::uint64_t seed, std::size_t sources);

  /// Parameters under their checkpoint names, in fixed order.
  std::vector<NamedTensor> named() const;
  std::vector<NamedTensor> extractor_params() const;
  std::vector<NamedTensor> classifier_params() const;
  std::vector<NamedTensor> discriminator_params() const;

  ModelParams clone() const;
  std::size_t parameter_count() const;
};

/// Expected parameter count for a discriminator over `sources` outputs
/// (0 = no discriminator).
std::size_t expected_parameter_count(std::size_t sources);

/// Intermediate tensors of an extractor pass.
struct ExtractorTrace {
  Tensor last_maps;  // N×32×H/8×W/8, post-relu output of the last block
  Tensor features;   // N×32
};

/// x: N×1×H×W with H, W divisible by 8 → N×32 features.
Tensor extract(Graph& g, const ModelParams& params, const Tensor& x);
ExtractorTrace extract_traced(Graph& g, const ModelParams& params, const Tensor& x);

/// Pre-sigmoid disease score, N×1.
Tensor classify_logit(Graph& g, const ModelParams& params, const Tensor& features);
/// Disease probability, N×1.
Tensor classify(Graph& g, const ModelParams& params, const Tensor& features);
/// Per-source sigmoid scores, N×S. Throws ConfigError without a discriminator.
Tensor discriminate(Graph& g, const ModelParams& params, const Tensor& features);

// Checkpoint layout, little-endian:
//   "XCKP" | u32 version | u32 count | count × (u32 name_len, name, u64 offset)
//   followed by the tensors in XTNS encoding; offsets are from file start.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace xinv
