#include "xinv/datapipe/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "xinv/datapipe/pgm.hpp"
#include "xinv/error.hpp"

namespace xinv {

namespace {

constexpr std::size_t kBlobSize = 8;
constexpr std::size_t kWatermarkSize = 6;
constexpr std::size_t kWatermarkMargin = 1;

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) {
    throw ParseError("synth spec: bad number for " + key + ": '" + value + "'");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) {
    throw ParseError("synth spec: bad integer for " + key + ": '" + value + "'");
  }
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  if (sources == 0) throw ConfigError("synth spec: sources must be positive");
  if (n < 2) throw ConfigError("synth spec: n must be at least 2");
  if (image_size < 16 || image_size % 8) {
    throw ConfigError("synth spec: image_size must be a multiple of 8 and at least 16");
  }
  if (causal_amplitude < 0 || spurious_amplitude < 0) {
    throw ConfigError("synth spec: amplitudes must be >= 0");
  }
  if (noise < 0) throw ConfigError("synth spec: noise must be >= 0");
  if (rho.size() != sources) {
    throw ConfigError("synth spec: rho has " + std::to_string(rho.size()) + " entries for " +
                      std::to_string(sources) + " sources");
  }
  for (double r : rho) {
    if (!(std::abs(r) <= 1.0)) throw ConfigError("synth spec: |rho| must be <= 1");
  }
}

std::string SynthSpec::to_text() const {
  std::ostringstream os;
  os << "sources=" << sources << '\n'
     << "n=" << n << '\n'
     << "image_size=" << image_size << '\n'
     << "causal_amplitude=" << format_double(causal_amplitude) << '\n'
     << "spurious_amplitude=" << format_double(spurious_amplitude) << '\n'
     << "rho=";
  for (std::size_t i = 0; i < rho.size(); ++i) os << (i ? "," : "") << format_double(rho[i]);
  os << '\n'
     << "noise=" << format_double(noise) << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

SynthSpec parse_synth_spec(std::string_view text) {
  SynthSpec spec;
  bool rho_given = false;
  auto parse_list = [](const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
    return out;
  };
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("synth spec line " + std::to_string(line_no) + ": expected key=value");
    }
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    if (key == "sources") {
      spec.sources = parse_uint(key, value);
    } else if (key == "n") {
      spec.n = parse_uint(key, value);
    } else if (key == "image_size") {
      spec.image_size = parse_uint(key, value);
    } else if (key == "causal_amplitude") {
      spec.causal_amplitude = parse_double(key, value);
    } else if (key == "spurious_amplitude") {
      spec.spurious_amplitude = parse_double(key, value);
    } else if (key == "noise") {
      spec.noise = parse_double(key, value);
    } else if (key == "seed") {
      spec.seed = parse_uint(key, value);
    } else if (key == "rho") {
      spec.rho = parse_list(key, value);
      rho_given = true;
    } else {
      throw ParseError("synth spec line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (!rho_given && spec.rho.size() != spec.sources) {
    // Default layout: every source but the last carries the confound.
    spec.rho.assign(spec.sources, 0.95);
    spec.rho.back() = 0.0;
  }
  if (rho_given && spec.rho.size() == 1 && spec.sources > 1) {
    spec.rho.assign(spec.sources, spec.rho.front());
  }
  spec.validate();
  return spec;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synth spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synth_spec(ss.str());
}

std::string source_name(std::size_t s) { return "src" + std::to_string(s); }

Region causal_region(std::size_t image_size) {
  const auto start = (image_size - kBlobSize) / 2;
  return {start, start, kBlobSize};
}

Region watermark_region(std::size_t image_size, std::size_t source) {
  const auto near = kWatermarkMargin;
  const auto far = image_size - kWatermarkSize - kWatermarkMargin;
  switch (source % 4) {
    case 0: return {near, near, kWatermarkSize};
    case 1: return {near, far, kWatermarkSize};
    case 2: return {far, near, kWatermarkSize};
    default: return {far, far, kWatermarkSize};
  }
}

double watermark_probability(const SynthSpec& spec, std::size_t source, int label) {
  return 0.5 * (1.0 + spec.rho.at(source) * (2.0 * label - 1.0));
}

Tensor render_example(const SynthSpec& spec, std::size_t source, int label,
                      std::mt19937_64& rng, SynthFlags* flags) {
  const auto size = spec.image_size;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  Tensor image({1, size, size});
  auto px = image.data();
  for (auto& v : px) v = spec.noise * noise(rng);

  SynthFlags planted;
  if (label == 1) {
    // Disc inscribed in the central square.
    const auto blob = causal_region(size);
    const double centre = (static_cast<double>(blob.size) - 1.0) / 2.0;
    const double radius2 = static_cast<double>(blob.size * blob.size) / 4.0;
    for (std::size_t r = 0; r < blob.size; ++r)
      for (std::size_t c = 0; c < blob.size; ++c) {
        const double dr = static_cast<double>(r) - centre, dc = static_cast<double>(c) - centre;
        if (dr * dr + dc * dc <= radius2) {
          px[(blob.row0 + r) * size + blob.col0 + c] += spec.causal_amplitude;
        }
      }
    planted.causal = true;
  }

  if (coin(rng) < watermark_probability(spec, source, label)) {
    const auto mark = watermark_region(size, source);
    for (std::size_t r = 0; r < mark.size; ++r)
      for (std::size_t c = 0; c < mark.size; ++c) {
        px[(mark.row0 + r) * size + mark.col0 + c] += spec.spurious_amplitude;
      }
    planted.watermark = true;
  }

  for (auto& v : px) v = std::clamp(v, 0.0, 1.0);
  if (flags) *flags = planted;
  return image;
}

SynthOutput synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::mt19937_64 rng(spec.seed);
  std::vector<ManifestRecord> splits[2];
  const char* split_names[2] = {"train", "test"};
  const auto positives = spec.n / 2;

  for (std::size_t s = 0; s < spec.sources; ++s) {
    for (int split = 0; split < 2; ++split) {
      const auto dir = out_dir / source_name(s) / split_names[split];
      fs::create_directories(dir, ec);
      if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
      for (std::size_t i = 0; i < spec.n; ++i) {
        const int label = i < positives ? 1 : 0;
        std::ostringstream name;
        name << (label ? "pos_" : "neg_") << std::setw(4) << std::setfill('0')
             << (label ? i : i - positives) << ".pgm";
        const auto path = dir / name.str();
        write_pgm(path, render_example(spec, s, label, rng));
        splits[split].push_back({path, label, source_name(s)});
      }
    }
  }

  SynthOutput out;
  out.train_manifest = out_dir / "train.csv";
  out.test_manifest = out_dir / "test.csv";
  out.train = Manifest(std::move(splits[0]));
  out.test = Manifest(std::move(splits[1]));
  write_manifest(out.train_manifest, out.train);
  write_manifest(out.test_manifest, out.test);

  std::ofstream echo(out_dir / "synth.txt", std::ios::trunc);
  echo << spec.to_text();
  if (!echo) throw IoError("failed writing " + (out_dir / "synth.txt").string());
  return out;
}

}  // namespace xinv
