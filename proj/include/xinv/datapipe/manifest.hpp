#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xinv/autodiff/tensor.hpp"

namespace xinv {

struct ManifestRecord {
  std::filesystem::path path;  // resolved against the manifest's directory
  int label = 0;
  std::string source;
};

/**
 * Labelled image list grouped by source. Source indices follow the order in
 * which source names first appear.
 */
class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::vector<ManifestRecord> records);

  const std::vector<ManifestRecord>& records() const noexcept { return records_; }
  const std::vector<std::string>& sources() const noexcept { return sources_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::size_t source_count() const noexcept { return sources_.size(); }

  std::optional<std::size_t> source_index(const std::string& name) const;
  /// Index of the source of record i.
  std::size_t source_of(std::size_t record) const { return record_source_[record]; }

  /// Records whose source is (or, with keep=false, is not) in `names`.
  /// Source indices of the result are renumbered by first appearance.
  Manifest filter_sources(const std::vector<std::string>& names, bool keep = true) const;

 private:
  std::vector<ManifestRecord> records_;
  std::vector<std::string> sources_;
  std::vector<std::size_t> record_source_;
};

/// Parses `path,label,source` CSV. Relative image paths resolve against the
/// manifest's directory and must exist.
Manifest load_manifest(const std::filesystem::path& path);

/// Writes a manifest; paths under the manifest's directory are stored relative.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// One decoded example.
struct SourcedExample {
  Tensor image;  // 1×H×W in [0,1]
  int label = 0;
  std::size_t source = 0;
};

/// A manifest decoded into memory.
struct Dataset {
  std::vector<std::string> sources;
  std::vector<SourcedExample> examples;

  std::size_t size() const noexcept { return examples.size(); }
  std::size_t source_count() const noexcept { return sources.size(); }
};

Dataset load_dataset(const Manifest& manifest, std::size_t image_size = 32);

/// Examples whose source is in `names`; the result's source indices follow
/// the order of `names`. Unknown names throw ValidationError.
Dataset subset_sources(const Dataset& data, const std::vector<std::string>& names);

/// Stacks the images of the given examples into an N×1×H×W batch.
Tensor stack_images(const Dataset& data, std::span<const std::size_t> indices);

/// Dense one-hot N×S matrix for source indices.
Tensor one_hot(const std::vector<std::size_t>& indices, std::size_t sources);

}  // namespace xinv
