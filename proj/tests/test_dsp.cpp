// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "adrenaline/dsp.hpp"
#include "adrenaline/error.hpp"
#include "adrenaline/wav.hpp"
#include "doctest.h"

using namespace adrenaline;
using namespace adrenaline::dsp;

namespace {

std::vector<std::complex<double>> direct_dft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t t = 0; t < n; ++t) {
      acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n));
    }
    out[k] = acc;
  }
  return out;
}

Waveform noise(std::size_t channels, std::size_t frames, double rate, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Waveform w;
  w.sample_rate = rate;
  w.samples.assign(channels, std::vector<double>(frames));
  for (auto& ch : w.samples) {
    for (auto& v : ch) v = u(rng);
  }
  return w;
}

}  // namespace

TEST_CASE("fft matches the direct DFT up to 64 points") {
  std::mt19937 rng(1);
  std::normal_distribution<double> g;
  for (std::size_t n = 1; n <= 64; n *= 2) {
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {g(rng), g(rng)};
    auto ref = direct_dft(x);
    auto y = x;
    fft(y);
    for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(y[k] - ref[k]) < 1e-10);
    fft(y, true);
    for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(y[k] - x[k]) < 1e-12);
  }
  std::vector<std::complex<double>> bad(12);
  CHECK_THROWS(fft(bad));
}

TEST_CASE("hamming window") {
  auto w = hamming(9);
  CHECK(w[4] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w[0] == doctest::Approx(0.54 - 0.46).epsilon(1e-15));
  for (std::size_t n = 0; n < 9; ++n) CHECK(w[n] == doctest::Approx(w[8 - n]).epsilon(1e-15));
  auto w2 = hamming(1764);
  for (std::size_t n = 0; n < w2.size(); ++n) CHECK(w2[n] == doctest::Approx(w2[w2.size() - 1 - n]).epsilon(1e-14));
  CHECK_THROWS(hamming(1));
}

TEST_CASE("chunking") {
  auto thirty = noise(1, 30 * 44100, 44100, 2);
  CHECK(chunk(thirty).size() == 60);

  auto w = noise(2, 33075, 44100, 3);  // 0.75 s
  auto chunks = chunk(w);
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[1].chunk_index == 1);
  for (std::size_t t = 11025; t < 22050; ++t) CHECK(chunks[1].samples[0][t] == 0.0);

  // concatenation minus padding reproduces the input
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> joined;
    for (const auto& ch : chunks) joined.insert(joined.end(), ch.samples[c].begin(), ch.samples[c].end());
    joined.resize(w.frames());
    CHECK(joined == w.samples[c]);
  }

  Waveform empty;
  empty.sample_rate = 44100;
  CHECK_THROWS_AS(chunk(empty), DataError);
}

TEST_CASE("stft features at default settings") {
  auto w = noise(4, 22050, 44100, 4);
  auto f = stft_features(chunk(w)[0]);
  CHECK(f.frames == 25);
  CHECK(f.bins == 1024);
  CHECK(f.values.size() == 25 * 1024 * 8);
  CHECK(f.frame_times[0] == doctest::Approx(0.02));
  CHECK(f.frame_times[24] == doctest::Approx(0.50));
  for (std::size_t k = 0; k < f.frames; ++k) {
    for (std::size_t l = 0; l < f.bins; ++l) {
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(f.magnitude(k, l, c) >= 0.0);
        CHECK(f.phase(k, l, c) > -std::numbers::pi);
        CHECK(f.phase(k, l, c) <= std::numbers::pi);
        CHECK(std::isfinite(f.magnitude(k, l, c)));
      }
    }
  }

  StftConfig bad;
  bad.hop_ms = 0;
  CHECK_THROWS_AS(stft_features(chunk(w)[0], bad), ConfigError);
}

TEST_CASE("all-zero chunk has zero magnitude and zero phase") {
  Waveform z;
  z.sample_rate = 44100;
  z.samples.assign(2, std::vector<double>(22050, 0.0));
  auto f = stft_features(chunk(z)[0]);
  for (double v : f.values) CHECK(v == 0.0);
}

TEST_CASE("a bin-centred sinusoid peaks at its bin") {
  const double rate = 6400;
  StftConfig cfg;
  cfg.fft_size = 256;
  const std::size_t bin = 17;
  Waveform w;
  w.sample_rate = rate;
  w.samples.assign(1, std::vector<double>(3200));
  for (std::size_t t = 0; t < 3200; ++t) {
    w.samples[0][t] = std::cos(2.0 * std::numbers::pi * static_cast<double>(bin) * static_cast<double>(t) / 256.0);
  }
  auto f = stft_features(chunk(w)[0], cfg);

  // oracle: direct DFT of the windowed, zero-padded third frame
  const std::size_t frame = cfg.frame_samples(rate), start = 2 * cfg.hop_samples(rate);
  auto win = hamming(frame);
  std::vector<std::complex<double>> buf(256);
  for (std::size_t n = 0; n < frame; ++n) buf[n] = w.samples[0][start + n] * win[n];
  auto ref = direct_dft(buf);
  std::size_t argmax = 0;
  for (std::size_t k = 1; k <= 128; ++k) {
    if (std::abs(ref[k]) > std::abs(ref[argmax])) argmax = k;
    CHECK(f.magnitude(2, k - 1, 0) == doctest::Approx(std::abs(ref[k])).epsilon(1e-9));
  }
  CHECK(argmax == bin);
  for (std::size_t l = 0; l < f.bins; ++l) {
    if (l + 1 != bin) CHECK(f.magnitude(2, l, 0) < f.magnitude(2, bin - 1, 0));
  }
}

TEST_CASE("Parseval holds for windowed frames") {
  std::mt19937 rng(5);
  std::normal_distribution<double> g;
  auto win = hamming(1764);
  std::vector<std::complex<double>> buf(2048);
  double energy = 0.0;
  for (std::size_t n = 0; n < 1764; ++n) {
    const double v = g(rng) * win[n];
    buf[n] = v;
    energy += v * v;
  }
  fft(buf);
  double spec = 0.0;
  for (const auto& z : buf) spec += std::norm(z);
  CHECK(std::abs(energy - spec / 2048.0) / energy < 1e-9);
}

TEST_CASE("features are channel independent") {
  StftConfig cfg;
  cfg.fft_size = 256;
  auto w = noise(3, 3200, 6400, 6);
  Waveform p = w;
  std::swap(p.samples[0], p.samples[2]);
  auto a = stft_features(chunk(w)[0], cfg);
  auto b = stft_features(chunk(p)[0], cfg);
  const std::size_t perm[3] = {2, 1, 0};
  for (std::size_t k = 0; k < a.frames; ++k) {
    for (std::size_t l = 0; l < a.bins; ++l) {
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(b.magnitude(k, l, c) == a.magnitude(k, l, perm[c]));
        CHECK(b.phase(k, l, c) == a.phase(k, l, perm[c]));
      }
    }
  }
}

TEST_CASE("wav float round trip") {
  auto dir = std::filesystem::temp_directory_path() / "adrenaline_test_dsp";
  std::filesystem::create_directories(dir);
  auto w = noise(4, 1000, 6400, 7);
  write_wav(dir / "x.wav", w);
  auto r = read_wav(dir / "x.wav");
  CHECK(r.sample_rate == 6400);
  REQUIRE(r.channels() == 4);
  REQUIRE(r.frames() == 1000);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t t = 0; t < 1000; ++t) CHECK(r.samples[c][t] == static_cast<double>(static_cast<float>(w.samples[c][t])));
  }
  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("wav 16-bit PCM is normalised") {
  auto path = std::filesystem::temp_directory_path() / "adrenaline_pcm16.wav";
  {
    std::ofstream os(path, std::ios::binary);
    auto put = [&](std::uint32_t v, int n) {
      for (int i = 0; i < n; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    const std::int16_t samples[4] = {-32768, 16384, 0, 32767};  // 2 frames x 2 channels
    os.write("RIFF", 4);
    put(36 + 8, 4);
    os.write("WAVEfmt ", 8);
    put(16, 4);
    put(1, 2);
    put(2, 2);
    put(8000, 4);
    put(8000 * 4, 4);
    put(4, 2);
    put(16, 2);
    os.write("data", 4);
    put(8, 4);
    for (auto s : samples) put(static_cast<std::uint16_t>(s), 2);
  }
  auto w = read_wav(path);
  REQUIRE(w.channels() == 2);
  REQUIRE(w.frames() == 2);
  CHECK(w.samples[0][0] == -1.0);
  CHECK(w.samples[1][0] == 0.5);
  CHECK(w.samples[0][1] == 0.0);
  CHECK(w.samples[1][1] == doctest::Approx(32767.0 / 32768.0));
  std::filesystem::remove(path);
}
