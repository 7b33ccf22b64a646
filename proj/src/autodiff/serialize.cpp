#include "xinv/autodiff/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "xinv/error.hpp"

namespace xinv {

namespace {

constexpr std::array<char, 4> kMagic = {'X', 'T', 'N', 'S'};
constexpr std::uint32_t kMaxRank = 16;

template <typename T>
void write_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), bytes.size())) throw ParseError("tensor stream truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

namespace detail {
void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }
}  // namespace detail

std::size_t serialized_size(const Tensor& t) {
  return kMagic.size() + 4 + 8 * t.rank() + 8 * t.size();
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  write_le(out, static_cast<std::uint32_t>(t.rank()));
  for (auto extent : t.shape()) write_le(out, static_cast<std::uint64_t>(extent));
  for (double v : t.data()) write_le(out, v);
  if (!out) throw IoError("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic;
  if (!in.read(magic.data(), magic.size())) throw ParseError("tensor stream truncated");
  if (magic != kMagic) throw ParseError("bad tensor magic");
  const auto rank = read_le<std::uint32_t>(in);
  if (rank == 0 || rank > kMaxRank) throw ParseError("unsupported tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& extent : shape) {
    extent = read_le<std::uint64_t>(in);
    if (extent == 0) throw ParseError("zero tensor extent");
  }
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = read_le<double>(in);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace xinv
