// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/scene.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "adrenaline/error.hpp"

namespace adrenaline::scene {

namespace {

constexpr double kPeak = 0.9;
constexpr double kFadeSeconds = 0.01;
constexpr std::size_t kSceneRestarts = 20;

double quantize(double v) { return std::round(v * 1e6) / 1e6; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Max number of events simultaneously active inside [onset, offset), counting the candidate.
std::size_t overlap_with(const std::vector<SoundEvent>& events, double onset, double offset) {
  std::vector<double> points{onset};
  for (const auto& e : events) {
    if (e.onset > onset && e.onset < offset) points.push_back(e.onset);
  }
  std::size_t best = 0;
  for (double t : points) {
    std::size_t n = 1;
    for (const auto& e : events) {
      if (e.onset <= t && t < e.offset) ++n;
    }
    best = std::max(best, n);
  }
  return best;
}

std::vector<double> prototype(std::mt19937_64& rng, std::size_t n, double rate) {
  std::vector<double> s(n, 0.0);
  const double nyquist = rate / 2.0;
  const int kind = static_cast<int>(std::uniform_int_distribution<int>(0, 2)(rng));
  const auto two_pi = 2.0 * std::numbers::pi;
  if (kind == 0) {
    // band-limited noise burst: white noise through a two-pole resonator
    const double fc = uniform(rng, 0.05, 0.4) * nyquist;
    const double bw = uniform(rng, 0.1, 0.5) * fc;
    const double r = std::exp(-std::numbers::pi * bw / rate);
    const double a1 = -2.0 * r * std::cos(two_pi * fc / rate), a2 = r * r;
    std::normal_distribution<double> g;
    double y1 = 0, y2 = 0;
    for (auto& v : s) {
      const double y = g(rng) - a1 * y1 - a2 * y2;
      y2 = y1;
      y1 = y;
      v = y;
    }
  } else if (kind == 1) {
    // harmonic tone complex
    const double f0 = uniform(rng, 0.02, 0.12) * nyquist;
    std::vector<double> phases(8);
    for (auto& p : phases) p = uniform(rng, 0.0, two_pi);
    for (std::size_t h = 1; h <= 8 && h * f0 < 0.95 * nyquist; ++h) {
      const double amp = 1.0 / static_cast<double>(h);
      for (std::size_t t = 0; t < n; ++t) {
        s[t] += amp * std::sin(two_pi * static_cast<double>(h) * f0 * static_cast<double>(t) / rate + phases[h - 1]);
      }
    }
  } else {
    // linear chirp
    const double f0 = uniform(rng, 0.05, 0.8) * nyquist, f1 = uniform(rng, 0.05, 0.8) * nyquist;
    const double dur = static_cast<double>(n) / rate;
    for (std::size_t t = 0; t < n; ++t) {
      const double time = static_cast<double>(t) / rate;
      s[t] = std::sin(two_pi * (f0 * time + 0.5 * (f1 - f0) / std::max(dur, 1e-9) * time * time));
    }
  }
  double peak = 0.0;
  for (double v : s) peak = std::max(peak, std::abs(v));
  const double amp = uniform(rng, 0.25, 1.0);
  const auto fade = std::min(n / 2, static_cast<std::size_t>(kFadeSeconds * rate));
  for (std::size_t t = 0; t < n; ++t) {
    double g = peak > 0 ? amp / peak : 0.0;
    if (t < fade) g *= 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(fade));
    if (n - 1 - t < fade) {
      g *= 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(n - 1 - t) / static_cast<double>(fade));
    }
    s[t] *= g;
  }
  return s;
}

std::size_t to_samples(double seconds, double rate) { return static_cast<std::size_t>(std::llround(seconds * rate)); }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Linear convolution truncated to the input length.
std::vector<double> convolve(const std::vector<double>& x, const std::vector<double>& h) {
  const std::size_t n = next_pow2(x.size() + h.size() - 1);
  std::vector<std::complex<double>> a(n), b(n);
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = x[i];
  for (std::size_t i = 0; i < h.size(); ++i) b[i] = h[i];
  dsp::fft(a);
  dsp::fft(b);
  for (std::size_t i = 0; i < n; ++i) a[i] *= b[i];
  dsp::fft(a, true);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i].real();
  return y;
}

}  // namespace

void SceneSpec::validate() const {
  if (duration <= 0 || sample_rate <= 0) throw ConfigError("scene: duration and sample rate must be positive");
  if (max_overlap < 1 || max_overlap > 3) throw ConfigError("scene: max overlap must be 1, 2 or 3");
  if (max_overlap > slots) throw ConfigError("scene: max overlap exceeds the number of source slots");
  if (min_events > max_events) throw ConfigError("scene: min events exceeds max events");
  if (min_event_seconds <= 0 || min_event_seconds > max_event_seconds) {
    throw ConfigError("scene: invalid event length range");
  }
  if (elevation_max_deg < 0 || elevation_max_deg > 90) throw ConfigError("scene: elevation bound outside [0, 90]");
  if (reverb_seconds < 0) throw ConfigError("scene: negative reverberation time");
}

std::uint64_t stream_seed(std::uint64_t base, std::uint64_t index) { return splitmix64(splitmix64(base) ^ index); }

std::vector<SoundEvent> sample_events(const SceneSpec& spec) {
  std::mt19937_64 rng(stream_seed(spec.seed, 1));
  return sample_events(spec, rng);
}

std::vector<SoundEvent> sample_events(const SceneSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const double max_len = std::min(spec.max_event_seconds, spec.duration);
  const double min_len = std::min(spec.min_event_seconds, max_len);
  std::vector<SoundEvent> events;
  std::string failure;
  // Greedy placement can paint itself into a corner, so a failed draw is
  // restarted from scratch (new event count included) a few times.
  for (std::size_t restart = 0; restart < kSceneRestarts; ++restart) {
    failure.clear();
    events.clear();
    const std::size_t count = std::uniform_int_distribution<std::size_t>(spec.min_events, spec.max_events)(rng);
    for (std::size_t i = 0; i < count && failure.empty(); ++i) {
      bool placed = false;
      for (std::size_t attempt = 0; attempt < spec.retry_budget && !placed; ++attempt) {
        const double len = uniform(rng, min_len, max_len);
        const double onset = quantize(uniform(rng, 0.0, spec.duration - len));
        const double offset = std::min(quantize(onset + len), quantize(spec.duration));
        if (offset <= onset) continue;
        if (overlap_with(events, onset, offset) > spec.max_overlap) continue;
        SoundEvent e;
        e.onset = onset;
        e.offset = offset;
        double az = quantize(uniform(rng, -180.0, 180.0));
        if (az >= 180.0) az = -180.0;
        e.azimuth_deg = az;
        e.elevation_deg = quantize(uniform(rng, -spec.elevation_max_deg, spec.elevation_max_deg));
        events.push_back(std::move(e));
        placed = true;
      }
      if (!placed) {
        failure = "scene: could not place event " + std::to_string(i + 1) + " of " + std::to_string(count) +
                  " within the overlap limit after " + std::to_string(spec.retry_budget) + " attempts";
      }
    }
    if (failure.empty()) break;
  }
  if (!failure.empty()) throw ConfigError(failure + " (" + std::to_string(kSceneRestarts) + " restarts)");
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.onset < b.onset; });
  for (std::size_t i = 0; i < events.size(); ++i) {
    std::vector<bool> used(spec.slots, false);
    for (std::size_t j = 0; j < i; ++j) {
      if (events[j].onset < events[i].offset && events[i].onset < events[j].offset) used[events[j].slot] = true;
    }
    const auto free = std::find(used.begin(), used.end(), false);
    if (free == used.end()) throw ConfigError("scene: no free slot (overlap exceeds slot count)");
    events[i].slot = static_cast<std::size_t>(free - used.begin());
  }
  for (auto& e : events) {
    const std::size_t n = to_samples(e.offset, spec.sample_rate) - to_samples(e.onset, spec.sample_rate);
    e.signal = prototype(rng, n, spec.sample_rate);
  }
  return events;
}

std::array<double, 4> foa_gains(double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const double el = elevation_deg * std::numbers::pi / 180.0;
  return {1.0, std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el)};
}

std::vector<std::vector<double>> foa_encode(const SoundEvent& event, double duration, double sample_rate) {
  const std::size_t total = to_samples(duration, sample_rate);
  std::vector<std::vector<double>> out(4, std::vector<double>(total, 0.0));
  const auto gains = foa_gains(event.azimuth_deg, event.elevation_deg);
  const std::size_t start = to_samples(event.onset, sample_rate);
  for (std::size_t t = 0; t < event.signal.size() && start + t < total; ++t) {
    for (std::size_t c = 0; c < 4; ++c) out[c][start + t] = gains[c] * event.signal[t];
  }
  return out;
}

dsp::Waveform render_unnormalized(const SceneSpec& spec, const std::vector<SoundEvent>& events) {
  dsp::Waveform w;
  w.sample_rate = spec.sample_rate;
  w.samples.assign(4, std::vector<double>(to_samples(spec.duration, spec.sample_rate), 0.0));
  for (const auto& e : events) {
    const auto enc = foa_encode(e, spec.duration, spec.sample_rate);
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t t = 0; t < enc[c].size(); ++t) w.samples[c][t] += enc[c][t];
    }
  }
  if (spec.reverb_seconds > 0.0 && !events.empty()) {
    // Exponentially decaying noise tail reaching -60 dB at reverb_seconds,
    // independent per channel, scaled to half the direct-path energy.
    std::mt19937_64 rng(stream_seed(spec.seed, 2));
    std::normal_distribution<double> g;
    const std::size_t len = std::max<std::size_t>(2, to_samples(spec.reverb_seconds, spec.sample_rate));
    for (auto& channel : w.samples) {
      std::vector<double> h(len);
      double energy = 0.0;
      for (std::size_t n = 1; n < len; ++n) {
        const double env = std::pow(10.0, -3.0 * static_cast<double>(n) / static_cast<double>(len));
        h[n] = g(rng) * env;
        energy += h[n] * h[n];
      }
      const double norm = energy > 0 ? std::sqrt(0.5 / energy) : 0.0;
      for (auto& v : h) v *= norm;
      h[0] = 1.0;
      channel = convolve(channel, h);
    }
  }
  return w;
}

RenderedScene render_scene(const SceneSpec& spec, const std::vector<SoundEvent>& events) {
  RenderedScene r;
  r.wave = render_unnormalized(spec, events);
  double peak = 0.0;
  for (const auto& ch : r.wave.samples) {
    for (double v : ch) peak = std::max(peak, std::abs(v));
  }
  if (peak > 0.0) {
    r.gain = kPeak / peak;
    for (auto& ch : r.wave.samples) {
      for (auto& v : ch) v *= r.gain;
    }
  }
  r.labels = label_table(events);
  return r;
}

std::vector<LabelRow> label_table(const std::vector<SoundEvent>& events) {
  std::vector<LabelRow> rows;
  rows.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    rows.push_back({i, e.slot, e.onset, e.offset, e.azimuth_deg, e.elevation_deg});
  }
  return rows;
}

std::size_t max_active(const std::vector<LabelRow>& rows) {
  std::size_t best = 0;
  for (const auto& r : rows) {
    std::size_t n = 0;
    for (const auto& o : rows) {
      if (o.onset <= r.onset && r.onset < o.offset) ++n;
    }
    best = std::max(best, n);
  }
  return best;
}

void write_labels(const std::filesystem::path& path, const std::vector<LabelRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("labels: cannot open " + path.string() + " for writing");
  os << "event,slot,onset_s,offset_s,azimuth_deg,elevation_deg\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f,%.6f,%.6f\n", r.event, r.slot, r.onset, r.offset,
                  r.azimuth_deg, r.elevation_deg);
    os << buf;
  }
  if (!os) throw DataError("labels: write failed for " + path.string());
}

}  // namespace adrenaline::scene
