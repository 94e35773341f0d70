// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "adrenaline/dsp.hpp"

namespace adrenaline::scene {

/// Parameters of one synthetic first-order Ambisonics scene.
struct SceneSpec {
  double duration = 30.0;  // seconds
  double sample_rate = 44100.0;
  std::size_t max_overlap = 1;
  double reverb_seconds = 0.0;  // 0 disables the reverberant tail
  std::uint64_t seed = 0;
  std::size_t min_events = 1;
  std::size_t max_events = 10;
  double min_event_seconds = 0.5;
  double max_event_seconds = 3.0;
  double elevation_max_deg = 60.0;
  std::size_t slots = 4;  // S
  std::size_t retry_budget = 1000;

  void validate() const;
};

struct SoundEvent {
  double onset = 0.0;   // seconds, active on [onset, offset)
  double offset = 0.0;
  double azimuth_deg = 0.0;    // [-180, 180)
  double elevation_deg = 0.0;  // [-el_max, el_max]
  std::vector<double> signal;  // mono, length round((offset - onset) * rate)
  std::size_t slot = 0;
};

struct LabelRow {
  std::size_t event = 0;
  std::size_t slot = 0;
  double onset = 0.0;
  double offset = 0.0;
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
};

struct RenderedScene {
  dsp::Waveform wave;  // 4 channels W, Y, Z, X
  std::vector<LabelRow> labels;
  double gain = 1.0;  // peak normalisation factor that was applied
};

/// Independent per-file stream seed derived from a base seed.
std::uint64_t stream_seed(std::uint64_t base, std::uint64_t index);

/// Samples events, rejecting candidates that would exceed `max_overlap`, then
/// assigns each event (in onset order) the lowest slot free over its span.
std::vector<SoundEvent> sample_events(const SceneSpec& spec, std::mt19937_64& rng);
std::vector<SoundEvent> sample_events(const SceneSpec& spec);

/// (W, Y, Z, X) gains of a plane wave from the given direction.
std::array<double, 4> foa_gains(double azimuth_deg, double elevation_deg);

/// 4 x round(duration * rate) buffer with the event placed at [onset, offset).
std::vector<std::vector<double>> foa_encode(const SoundEvent& event, double duration, double sample_rate);

/// Sum of encoded events, optionally reverberated, before peak normalisation.
dsp::Waveform render_unnormalized(const SceneSpec& spec, const std::vector<SoundEvent>& events);

/// Full rendering: peak normalised to 0.9 (silent scenes are left untouched).
RenderedScene render_scene(const SceneSpec& spec, const std::vector<SoundEvent>& events);

std::vector<LabelRow> label_table(const std::vector<SoundEvent>& events);

/// Largest number of simultaneously active rows.
std::size_t max_active(const std::vector<LabelRow>& rows);

/// CSV with header `event,slot,onset_s,offset_s,azimuth_deg,elevation_deg`, 6 decimals.
void write_labels(const std::filesystem::path& path, const std::vector<LabelRow>& rows);

}  // namespace adrenaline::scene
