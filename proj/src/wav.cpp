// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/wav.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "adrenaline/error.hpp"

namespace adrenaline::dsp {

namespace {

std::uint32_t u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
void put16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

constexpr std::uint16_t kPcm = 1;
constexpr std::uint16_t kFloat = 3;
constexpr std::uint16_t kExtensible = 0xFFFE;

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("wav: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) { return DataError("wav: " + path.string() + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t size = u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Tolerate a data chunk whose declared size overruns a truncated file.
      if (std::memcmp(hdr, "data", 4) != 0) throw fail("chunk overruns file");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("short fmt chunk");
      const unsigned char* f = bytes.data() + body;
      format = u16(f);
      channels = u16(f + 2);
      rate = u32(f + 4);
      bits = u16(f + 14);
      if (format == kExtensible) {
        if (avail < 26) throw fail("short extensible fmt chunk");
        format = u16(f + 24);  // first two bytes of the sub-format GUID
      }
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1U);
  }
  if (channels == 0 || rate == 0) throw fail("missing or empty fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  const bool pcm16 = format == kPcm && bits == 16;
  const bool f32 = format == kFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw fail("unsupported sample format " + std::to_string(format) + "/" + std::to_string(bits) + " bit");
  }
  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);
  Waveform w;
  w.sample_rate = rate;
  w.samples.assign(channels, std::vector<double>(frames));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (t * channels + c) * width;
      if (pcm16) {
        w.samples[c][t] = static_cast<double>(static_cast<std::int16_t>(u16(p))) / 32768.0;
      } else {
        const float v = std::bit_cast<float>(u32(p));
        if (!std::isfinite(v)) throw fail("non-finite sample");
        w.samples[c][t] = v;
      }
    }
  }
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  const std::size_t channels = wave.channels();
  if (channels == 0) throw DataError("wav: nothing to write");
  const std::size_t frames = wave.frames();
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(frames * channels * 4);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("wav: cannot open " + path.string() + " for writing");
  os.write("RIFF", 4);
  put32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put32(os, 16);
  put16(os, kFloat);
  put16(os, static_cast<std::uint16_t>(channels));
  const auto rate = static_cast<std::uint32_t>(std::llround(wave.sample_rate));
  put32(os, rate);
  put32(os, rate * static_cast<std::uint32_t>(channels) * 4);
  put16(os, static_cast<std::uint16_t>(channels * 4));
  put16(os, 32);
  os.write("data", 4);
  put32(os, data_bytes);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      put32(os, std::bit_cast<std::uint32_t>(static_cast<float>(wave.samples[c][t])));
    }
  }
  if (!os) throw DataError("wav: write failed for " + path.string());
}

}  // namespace adrenaline::dsp
