// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "adrenaline/tensor.hpp"

namespace adrenaline::ad {

/// Binary parameter archive.
///
/// Layout (all integers little-endian):
///   "ADRN"                       4 bytes magic
///   u32 version                  currently 1
///   u32 count                    number of arrays
///   count x {
///     u32 name_len, name bytes (UTF-8, no terminator)
///     u32 rank, rank x u64 dims
///     prod(dims) x f64 values (IEEE-754 binary64, little-endian)
///   }
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

}  // namespace adrenaline::ad
