#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "xinv/autodiff/tensor.hpp"

namespace xinv {

// Binary layout, little-endian:
//   "XTNS" | u32 rank | rank × u64 extent | row-major f64 payload

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Encoded byte length of `t`.
std::size_t serialized_size(const Tensor& t);

namespace detail {
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
}  // namespace detail

}  // namespace xinv
