// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace adrenaline::dsp {

/// Multichannel audio, channel-major: samples[c][t].
struct Waveform {
  double sample_rate = 0.0;
  std::vector<std::vector<double>> samples;

  std::size_t channels() const { return samples.size(); }
  std::size_t frames() const { return samples.empty() ? 0 : samples.front().size(); }
};

struct WaveChunk {
  std::vector<std::vector<double>> samples;  // C x N
  double sample_rate = 0.0;
  std::size_t chunk_index = 0;
};

/// Frame geometry shared by feature extraction and label alignment.
struct StftConfig {
  std::size_t fft_size = 2048;
  double frame_ms = 40.0;
  double hop_ms = 20.0;
  double chunk_seconds = 0.5;

  std::size_t frames_per_chunk() const;  // K
  std::size_t bins() const { return fft_size / 2; }  // L, DC dropped
  std::size_t frame_samples(double sample_rate) const;
  std::size_t hop_samples(double sample_rate) const;
  std::size_t chunk_samples(double sample_rate) const;
};

/// K x L x 2C tensor values, magnitudes in channels [0, C) and phases in [C, 2C).
struct FeatureChunk {
  std::size_t frames = 0;    // K
  std::size_t bins = 0;      // L
  std::size_t channels = 0;  // C (audio channels)
  std::vector<double> values;
  std::vector<double> frame_times;  // K centre times, seconds from file start

  double magnitude(std::size_t k, std::size_t l, std::size_t c) const {
    return values[(k * bins + l) * 2 * channels + c];
  }
  double phase(std::size_t k, std::size_t l, std::size_t c) const {
    return values[(k * bins + l) * 2 * channels + channels + c];
  }
};

/// In-place iterative radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& data, bool inverse = false);

/// w[n] = 0.54 - 0.46 cos(2 pi n / (n_window - 1)).
std::vector<double> hamming(std::size_t n_window);

/// Splits into non-overlapping chunks; the trailing partial chunk is zero-padded.
std::vector<WaveChunk> chunk(const Waveform& wave, double chunk_seconds = 0.5);

/// One frame starts every hop (K = chunk / hop frames); reads past the chunk
/// end see zeros. Each frame is Hamming-windowed over its own length and
/// zero-padded to the FFT size. Bins 1..fft_size/2 are kept.
FeatureChunk stft_features(const WaveChunk& wave_chunk, const StftConfig& config = {});

}  // namespace adrenaline::dsp
