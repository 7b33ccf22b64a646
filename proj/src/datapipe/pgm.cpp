#include "xinv/datapipe/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "xinv/error.hpp"

namespace xinv {

std::string encode_pgm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw ShapeError("encode_pgm: expected 1×H×W, got " + to_string(image.shape()));
  }
  const auto h = image.dim(1), w = image.dim(2);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + h * w);
  for (double v : image.data()) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  return out;
}

namespace {

// Cursor over the ASCII header; whitespace and '#' comments separate tokens.
class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t next_number(const char* what) {
    skip_space();
    std::size_t start = pos_;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw ParseError(std::string("pgm: malformed header, expected ") + what);
    if (pos_ - start > 9) throw ParseError(std::string("pgm: header value too large for ") + what);
    return std::stoul(std::string(bytes_.substr(start, pos_ - start)));
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw ParseError("pgm: malformed header, missing separator before raster");
    }
    return pos_ + 1;
  }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

Tensor decode_pgm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes.substr(0, 2) != "P5") {
    throw ParseError("pgm: malformed header, expected P5 magic");
  }
  HeaderReader header(bytes);
  const auto w = header.next_number("width");
  const auto h = header.next_number("height");
  const auto maxval = header.next_number("maxval");
  if (w == 0 || h == 0) throw ParseError("pgm: zero image dimension");
  if (maxval != 255) throw ParseError("pgm: only maxval 255 is supported, got " + std::to_string(maxval));
  const auto start = header.raster_start();
  if (bytes.size() - start < w * h) throw ParseError("pgm: raster truncated");

  Tensor image({1, h, w});
  auto d = image.data();
  for (std::size_t i = 0; i < w * h; ++i) {
    d[i] = static_cast<double>(static_cast<unsigned char>(bytes[start + i])) / 255.0;
  }
  return image;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto bytes = encode_pgm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor decode_image(const std::filesystem::path& path, std::size_t size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Tensor image = [&] {
    try {
      return decode_pgm(bytes);
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }();
  if (image.dim(1) != size || image.dim(2) != size) {
    throw ShapeError(path.string() + ": expected " + std::to_string(size) + "x" +
                     std::to_string(size) + " image, got " + std::to_string(image.dim(2)) + "x" +
                     std::to_string(image.dim(1)));
  }
  return image;
}

}  // namespace xinv
