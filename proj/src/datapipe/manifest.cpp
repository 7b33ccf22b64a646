#include "xinv/datapipe/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "xinv/datapipe/pgm.hpp"
#include "xinv/error.hpp"

namespace xinv {

Manifest::Manifest(std::vector<ManifestRecord> records) : records_(std::move(records)) {
  record_source_.reserve(records_.size());
  for (const auto& r : records_) {
    auto it = std::find(sources_.begin(), sources_.end(), r.source);
    if (it == sources_.end()) {
      sources_.push_back(r.source);
      it = std::prev(sources_.end());
    }
    record_source_.push_back(static_cast<std::size_t>(std::distance(sources_.begin(), it)));
  }
}

std::optional<std::size_t> Manifest::source_index(const std::string& name) const {
  auto it = std::find(sources_.begin(), sources_.end(), name);
  if (it == sources_.end()) return std::nullopt;
  return static_cast<std::size_t>(std::distance(sources_.begin(), it));
}

Manifest Manifest::filter_sources(const std::vector<std::string>& names, bool keep) const {
  std::vector<ManifestRecord> kept;
  for (const auto& r : records_) {
    const bool listed = std::find(names.begin(), names.end(), r.source) != names.end();
    if (listed == keep) kept.push_back(r);
  }
  return Manifest(std::move(kept));
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty manifest");
  line = strip_cr(line);
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (line != "path,label,source") {
    throw ParseError(path.string() + ":1: expected header 'path,label,source'");
  }

  std::vector<ManifestRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    const auto fields = split_fields(line);
    if (fields.size() != 3) {
      throw ParseError(where + ": expected 3 fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[2].empty()) throw ParseError(where + ": empty path or source");
    ManifestRecord r;
    if (fields[1] == "0") {
      r.label = 0;
    } else if (fields[1] == "1") {
      r.label = 1;
    } else {
      throw ValidationError(where + ": unknown label value '" + fields[1] + "'");
    }
    r.path = std::filesystem::path(fields[0]);
    if (r.path.is_relative()) r.path = base / r.path;
    if (!std::filesystem::exists(r.path)) {
      throw IoError(where + ": image not found: " + r.path.string());
    }
    r.source = fields[2];
    records.push_back(std::move(r));
  }
  if (records.empty()) throw ParseError(path.string() + ": empty manifest");
  return Manifest(std::move(records));
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto base = path.parent_path();
  out << "path,label,source\n";
  for (const auto& r : manifest.records()) {
    auto rel = r.path.lexically_relative(base.empty() ? std::filesystem::path(".") : base);
    const auto& shown = (rel.empty() || *rel.begin() == "..") ? r.path : rel;
    out << shown.generic_string() << ',' << r.label << ',' << r.source << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Dataset load_dataset(const Manifest& manifest, std::size_t image_size) {
  if (manifest.empty()) throw ValidationError("load_dataset: empty manifest");
  Dataset ds;
  ds.sources = manifest.sources();
  ds.examples.reserve(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& r = manifest.records()[i];
    ds.examples.push_back({decode_image(r.path, image_size), r.label, manifest.source_of(i)});
  }
  return ds;
}

Dataset subset_sources(const Dataset& data, const std::vector<std::string>& names) {
  std::vector<std::size_t> remap(data.sources.size(), names.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto it = std::find(data.sources.begin(), data.sources.end(), names[k]);
    if (it == data.sources.end()) throw ValidationError("subset_sources: unknown source '" + names[k] + "'");
    remap[static_cast<std::size_t>(std::distance(data.sources.begin(), it))] = k;
  }
  Dataset out;
  out.sources = names;
  for (const auto& ex : data.examples) {
    if (remap[ex.source] == names.size()) continue;
    out.examples.push_back({ex.image, ex.label, remap[ex.source]});
  }
  return out;
}

Tensor stack_images(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("stack_images: empty batch");
  const auto& first = data.examples.at(indices[0]).image;
  const auto h = first.dim(1), w = first.dim(2);
  Tensor batch({indices.size(), 1, h, w});
  auto dst = batch.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& img = data.examples.at(indices[i]).image;
    if (img.dim(1) != h || img.dim(2) != w) {
      throw ShapeError("stack_images: mixed image sizes in one batch");
    }
    std::copy(img.data().begin(), img.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(i * h * w));
  }
  return batch;
}

Tensor one_hot(const std::vector<std::size_t>& indices, std::size_t sources) {
  Tensor out({indices.size(), sources});
  auto d = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= sources) throw ValidationError("one_hot: source index out of range");
    d[i * sources + indices[i]] = 1.0;
  }
  return out;
}

}  // namespace xinv
