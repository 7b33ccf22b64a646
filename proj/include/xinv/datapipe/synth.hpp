#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "xinv/autodiff/tensor.hpp"
#include "xinv/datapipe/manifest.hpp"

namespace xinv {

/// Parameters of the synthetic multi-source generator.
struct SynthSpec {
  std::size_t sources = 4;
  std::size_t n = 1000;  // examples per source per split
  std::size_t image_size = 32;
  double causal_amplitude = 0.35;
  double spurious_amplitude = 0.6;
  std::vector<double> rho = {0.95, 0.95, 0.95, 0.0};  // watermark/label correlation per source
  double noise = 0.1;
  std::uint64_t seed = 7;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  /// key=value lines, in a fixed key order.
  std::string to_text() const;
};

/// Parses key=value lines (`#` comments allowed) on top of the defaults.
SynthSpec parse_synth_spec(std::string_view text);
SynthSpec load_synth_spec(const std::filesystem::path& path);

/// Default name of source index s.
std::string source_name(std::size_t s);

/// Pixel rectangle [row0,row0+size) × [col0,col0+size).
struct Region {
  std::size_t row0, col0, size;
  bool contains(std::size_t r, std::size_t c) const {
    return r >= row0 && r < row0 + size && c >= col0 && c < col0 + size;
  }
};

/// Square holding the causal disc at the image center.
Region causal_region(std::size_t image_size);
/// Corner square holding the watermark of source s (corner s mod 4).
Region watermark_region(std::size_t image_size, std::size_t source);

struct SynthFlags {
  bool causal = false;
  bool watermark = false;
};

/// Probability that an example of `source` with `label` carries the watermark.
double watermark_probability(const SynthSpec& spec, std::size_t source, int label);

/// Draws one image for (source, label); reports which patterns were planted.
Tensor render_example(const SynthSpec& spec, std::size_t source, int label,
                      std::mt19937_64& rng, SynthFlags* flags = nullptr);

struct SynthOutput {
  Manifest train;
  Manifest test;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
};

/**
 * Writes `train.csv`, `test.csv`, `synth.txt` and PGM images under
 * `<out>/<source>/<split>/` and returns the loaded manifests. Output is a
 * pure function of the spec.
 */
SynthOutput synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace xinv
