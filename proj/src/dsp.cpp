// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/dsp.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "adrenaline/error.hpp"

namespace adrenaline::dsp {

namespace {

std::size_t ms_to_samples(double ms, double rate) { return static_cast<std::size_t>(std::llround(ms * rate / 1000.0)); }

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace

std::size_t StftConfig::frames_per_chunk() const {
  if (hop_ms <= 0 || frame_ms <= 0) throw ConfigError("stft: frame and hop lengths must be positive");
  return static_cast<std::size_t>(std::llround(chunk_seconds * 1000.0 / hop_ms));
}

std::size_t StftConfig::frame_samples(double sample_rate) const { return ms_to_samples(frame_ms, sample_rate); }
std::size_t StftConfig::hop_samples(double sample_rate) const { return ms_to_samples(hop_ms, sample_rate); }
std::size_t StftConfig::chunk_samples(double sample_rate) const {
  return static_cast<std::size_t>(std::llround(chunk_seconds * sample_rate));
}

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_pow2(n)) throw std::invalid_argument("fft: size " + std::to_string(n) + " is not a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  // Twiddles taken from a per-size table computed directly (no recurrence drift).
  thread_local std::vector<std::complex<double>> table;
  if (table.size() != n / 2) {
    table.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      table[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2, step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const auto w = inverse ? std::conj(table[k * step]) : table[k * step];
        const auto u = a[i + k];
        const auto v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

std::vector<double> hamming(std::size_t n_window) {
  if (n_window < 2) throw std::invalid_argument("hamming: window length must be at least 2");
  std::vector<double> w(n_window);
  const double denom = static_cast<double>(n_window - 1);
  for (std::size_t n = 0; n < n_window; ++n) {
    w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / denom);
  }
  return w;
}

std::vector<WaveChunk> chunk(const Waveform& wave, double chunk_seconds) {
  if (wave.channels() == 0) throw DataError("chunk: waveform has no channels");
  if (wave.frames() == 0) throw DataError("chunk: waveform has no samples");
  if (chunk_seconds <= 0) throw ConfigError("chunk: chunk length must be positive");
  const auto n = static_cast<std::size_t>(std::llround(chunk_seconds * wave.sample_rate));
  if (n == 0) throw ConfigError("chunk: chunk shorter than one sample");
  const std::size_t total = wave.frames();
  const std::size_t count = (total + n - 1) / n;
  std::vector<WaveChunk> chunks(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& c = chunks[i];
    c.sample_rate = wave.sample_rate;
    c.chunk_index = i;
    c.samples.assign(wave.channels(), std::vector<double>(n, 0.0));
    const std::size_t begin = i * n, end = std::min(total, begin + n);
    for (std::size_t ch = 0; ch < wave.channels(); ++ch) {
      const auto& src = wave.samples[ch];
      if (src.size() != total) throw DataError("chunk: channels have different lengths");
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin), src.begin() + static_cast<std::ptrdiff_t>(end),
                c.samples[ch].begin());
    }
  }
  return chunks;
}

FeatureChunk stft_features(const WaveChunk& wc, const StftConfig& config) {
  const double rate = wc.sample_rate;
  const std::size_t K = config.frames_per_chunk();
  const std::size_t frame = config.frame_samples(rate);
  const std::size_t hop = config.hop_samples(rate);
  if (frame < 2 || hop == 0) throw ConfigError("stft: frame/hop shorter than one sample at this rate");
  if (!is_pow2(config.fft_size)) throw ConfigError("stft: fft size must be a power of two");
  if (config.fft_size < frame) {
    throw ConfigError("stft: fft size " + std::to_string(config.fft_size) + " shorter than frame of " +
                      std::to_string(frame) + " samples");
  }
  if (wc.samples.empty()) throw DataError("stft: chunk has no channels");

  const std::size_t C = wc.samples.size();
  const std::size_t L = config.bins();
  const auto window = hamming(frame);

  FeatureChunk out;
  out.frames = K;
  out.bins = L;
  out.channels = C;
  out.values.assign(K * L * 2 * C, 0.0);
  out.frame_times.resize(K);
  const double chunk_start = static_cast<double>(wc.chunk_index * config.chunk_samples(rate)) / rate;

  std::vector<std::complex<double>> buf(config.fft_size);
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t start = k * hop;
    out.frame_times[k] = chunk_start + (static_cast<double>(start) + static_cast<double>(frame) / 2.0) / rate;
    for (std::size_t c = 0; c < C; ++c) {
      const auto& x = wc.samples[c];
      std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
      for (std::size_t n = 0; n < frame && start + n < x.size(); ++n) buf[n] = x[start + n] * window[n];
      fft(buf);
      for (std::size_t l = 0; l < L; ++l) {
        const auto z = buf[l + 1];
        const double mag = std::abs(z);
        double ph = mag == 0.0 ? 0.0 : std::atan2(z.imag(), z.real());
        if (ph <= -std::numbers::pi) ph = std::numbers::pi;
        const std::size_t base = (k * L + l) * 2 * C;
        out.values[base + c] = mag;
        out.values[base + C + c] = ph;
      }
    }
  }
  return out;
}

}  // namespace adrenaline::dsp
