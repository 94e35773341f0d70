// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adrenaline/dsp.hpp"
#include "adrenaline/scene.hpp"
#include "adrenaline/tensor.hpp"

namespace adrenaline::data {

/// Ground truth of one decoder step. Inactive slots carry zero angles.
struct FrameTarget {
  std::vector<double> activity;   // S values in {0, 1}
  std::vector<double> azimuth;    // radians, [-pi, pi)
  std::vector<double> elevation;  // radians, [-pi/2, pi/2]
};

/// Column remapping for corpora whose label CSVs use other names,
/// one `ours=theirs` pair per line (`#` starts a comment).
struct ColumnMap {
  std::map<std::string, std::string> ours_to_theirs;

  static ColumnMap parse(const std::string& text);
  static ColumnMap load(const std::filesystem::path& path);
  std::string column_for(const std::string& ours) const;
};

/// Reads a label CSV. `event` and `slot` columns are optional: missing event
/// indices become row numbers and missing slots are assigned lowest-free in
/// onset order.
std::vector<scene::LabelRow> read_labels(const std::filesystem::path& path, const ColumnMap& columns = {},
                                         std::size_t slots = 4);

/// Targets for the K decoder frames of one chunk; frame k is judged at its
/// centre time and slot s is active iff an event of slot s covers it.
std::vector<FrameTarget> frame_targets(const std::vector<scene::LabelRow>& labels, std::size_t chunk_index,
                                       const dsp::StftConfig& stft, std::size_t slots);

struct Sample {
  std::vector<double> features;  // K x L x 2C
  std::vector<FrameTarget> targets;
  std::size_t file = 0;
  std::size_t chunk = 0;
};

struct Dataset {
  std::size_t frames = 0;    // K
  std::size_t bins = 0;      // L
  std::size_t channels = 0;  // C (audio)
  std::size_t slots = 0;     // S
  std::vector<std::string> files;  // stems, indexed by Sample::file
  std::vector<Sample> samples;

  bool empty() const { return samples.empty(); }
  void append(Sample sample);
};

/// Stacked tensors for a minibatch.
struct Batch {
  ad::Tensor features;   // B x K x L x 2C
  ad::Tensor activity;   // B x K x S
  ad::Tensor azimuth;    // B x K x S
  ad::Tensor elevation;  // B x K x S
  std::vector<std::vector<FrameTarget>> targets;
  std::vector<std::pair<std::size_t, std::size_t>> provenance;  // (file, chunk)

  std::size_t size() const { return provenance.size(); }
};

/// Sample order of one epoch: a deterministic shuffle keyed by (seed, epoch),
/// cut into batches; the final short batch is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t dataset_size, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);
/// In-order batches without shuffling (evaluation).
std::vector<std::vector<std::size_t>> sequential_batches(std::size_t dataset_size, std::size_t batch_size);

Batch assemble(const Dataset& dataset, const std::vector<std::size_t>& indices);

struct SceneFile {
  std::string stem;
  std::filesystem::path audio;
  std::filesystem::path labels;
};

/// How files are split: `train/validation` proportions ("80/20") or a
/// cross-validation fold ("fold:1/3", validation = stems with index % 3 == 1).
struct SplitSpec {
  std::size_t train_parts = 80;
  std::size_t validation_parts = 20;
  std::size_t fold = 0;
  std::size_t folds = 0;  // 0 selects the proportional split

  static SplitSpec parse(const std::string& text);
  bool is_validation(std::size_t sorted_index) const;
};

struct Split {
  std::vector<SceneFile> train;
  std::vector<SceneFile> validation;
};

/// Lists `<root>/audio/*.wav` with matching `<root>/labels/*.csv`, byte-wise
/// sorted by stem. Orphans on either side are errors.
std::vector<SceneFile> list_scenes(const std::filesystem::path& root);
Split load_split(const std::filesystem::path& root, const SplitSpec& split);

/// Reads audio + labels and extracts one Sample per chunk.
Dataset build_dataset(const std::vector<SceneFile>& files, const dsp::StftConfig& stft, std::size_t slots,
                      const ColumnMap& columns = {});

}  // namespace adrenaline::data
