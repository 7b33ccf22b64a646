#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "xinv/autodiff/tensor.hpp"

namespace xinv {

/// Binary 8-bit PGM (P5, maxval 255) of a 1×H×W tensor with values in [0,1].
/// Values are rounded to the nearest of k/255.
std::string encode_pgm(const Tensor& image);

/// Parses P5 bytes into a 1×H×W tensor scaled to [0,1]. Header comments are
/// accepted; maxval must be 255.
Tensor decode_pgm(std::string_view bytes);

void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// Reads a PGM that must be exactly `size`×`size`.
Tensor decode_image(const std::filesystem::path& path, std::size_t size = 32);

}  // namespace xinv
