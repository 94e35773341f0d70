// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "adrenaline/error.hpp"

namespace adrenaline::ad {

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xffU);
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("checkpoint: truncated stream");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

constexpr char kMagic[4] = {'A', 'D', 'R', 'N'};
constexpr std::uint64_t kMaxElements = 1ULL << 34;

}  // namespace

void write_checkpoint(std::ostream& os, const std::vector<NamedArray>& arrays) {
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (shape_numel(a.shape) != a.values.size()) throw ShapeError("checkpoint: array '" + a.name + "' size mismatch");
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put_le<std::uint64_t>(os, d);
    for (double v : a.values) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw DataError("checkpoint: write failed");
}

std::vector<NamedArray> read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError("checkpoint: bad magic");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(is);
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = get_le<std::uint32_t>(is);
    a.name.resize(name_len);
    if (!is.read(a.name.data(), name_len)) throw DataError("checkpoint: truncated name");
    const auto rank = get_le<std::uint32_t>(is);
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = get_le<std::uint64_t>(is);
      a.shape.push_back(static_cast<std::size_t>(d));
      n *= d;
      if (n > kMaxElements) throw DataError("checkpoint: array '" + a.name + "' implausibly large");
    }
    a.values.resize(static_cast<std::size_t>(n));
    for (auto& v : a.values) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
    arrays.push_back(std::move(a));
  }
  return arrays;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(os, arrays);
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace adrenaline::ad
