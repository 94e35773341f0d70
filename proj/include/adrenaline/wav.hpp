// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "adrenaline/dsp.hpp"

namespace adrenaline::dsp {

/// Reads RIFF/WAVE with 16-bit PCM or 32-bit IEEE float samples (plain or
/// WAVE_FORMAT_EXTENSIBLE), any channel count. PCM is scaled by 1/32768.
Waveform read_wav(const std::filesystem::path& path);

/// Writes 32-bit float samples.
void write_wav(const std::filesystem::path& path, const Waveform& wave);

}  // namespace adrenaline::dsp
