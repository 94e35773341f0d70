// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "adrenaline/error.hpp"
#include "adrenaline/wav.hpp"

namespace adrenaline::data {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("labels: " + path.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
  }
}

std::int64_t micros(double seconds) { return std::llround(seconds * 1e6); }

double to_radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

ColumnMap ColumnMap::parse(const std::string& text) {
  static const char* kKnown[] = {"event", "slot", "onset_s", "offset_s", "azimuth_deg", "elevation_deg"};
  ColumnMap map;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("column map: expected ours=theirs, got '" + line + "'");
    const std::string ours = trim(line.substr(0, eq)), theirs = trim(line.substr(eq + 1));
    if (std::find(std::begin(kKnown), std::end(kKnown), ours) == std::end(kKnown)) {
      throw ConfigError("column map: unknown column '" + ours + "'");
    }
    if (theirs.empty()) throw ConfigError("column map: empty target for '" + ours + "'");
    map.ours_to_theirs[ours] = theirs;
  }
  return map;
}

ColumnMap ColumnMap::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("column map: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string ColumnMap::column_for(const std::string& ours) const {
  const auto it = ours_to_theirs.find(ours);
  return it == ours_to_theirs.end() ? ours : it->second;
}

std::vector<scene::LabelRow> read_labels(const std::filesystem::path& path, const ColumnMap& columns,
                                         std::size_t slots) {
  std::ifstream is(path);
  if (!is) throw DataError("labels: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError("labels: " + path.string() + " is empty");
  const auto header = split_csv(line);
  auto find = [&](const std::string& ours, bool required) -> std::ptrdiff_t {
    const auto name = columns.column_for(ours);
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      if (required) throw DataError("labels: " + path.string() + " has no column '" + name + "'");
      return -1;
    }
    return it - header.begin();
  };
  const auto c_event = find("event", false), c_slot = find("slot", false);
  const auto c_on = find("onset_s", true), c_off = find("offset_s", true);
  const auto c_az = find("azimuth_deg", true), c_el = find("elevation_deg", true);

  std::vector<scene::LabelRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw DataError("labels: " + path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields");
    }
    scene::LabelRow r;
    r.event = c_event >= 0 ? static_cast<std::size_t>(parse_double(f[c_event], path, line_no)) : rows.size();
    r.slot = c_slot >= 0 ? static_cast<std::size_t>(parse_double(f[c_slot], path, line_no)) : 0;
    r.onset = parse_double(f[c_on], path, line_no);
    r.offset = parse_double(f[c_off], path, line_no);
    r.azimuth_deg = parse_double(f[c_az], path, line_no);
    r.elevation_deg = parse_double(f[c_el], path, line_no);
    if (r.offset <= r.onset) throw DataError("labels: " + path.string() + ":" + std::to_string(line_no) + ": offset <= onset");
    if (r.azimuth_deg >= 180.0) r.azimuth_deg -= 360.0;
    rows.push_back(r);
  }
  if (c_slot < 0) {
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rows[a].onset < rows[b].onset; });
    for (std::size_t i = 0; i < order.size(); ++i) {
      std::vector<bool> used(slots, false);
      auto& cur = rows[order[i]];
      for (std::size_t j = 0; j < i; ++j) {
        const auto& prev = rows[order[j]];
        if (prev.onset < cur.offset && cur.onset < prev.offset && prev.slot < slots) used[prev.slot] = true;
      }
      const auto free = std::find(used.begin(), used.end(), false);
      if (free == used.end()) throw DataError("labels: " + path.string() + ": more overlapping events than slots");
      cur.slot = static_cast<std::size_t>(free - used.begin());
    }
  }
  return rows;
}

std::vector<FrameTarget> frame_targets(const std::vector<scene::LabelRow>& labels, std::size_t chunk_index,
                                       const dsp::StftConfig& stft, std::size_t slots) {
  const std::size_t K = stft.frames_per_chunk();
  const std::int64_t chunk_us = micros(stft.chunk_seconds);
  const std::int64_t hop_us = micros(stft.hop_ms / 1000.0);
  const std::int64_t half_frame_us = micros(stft.frame_ms / 2000.0);
  std::vector<FrameTarget> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    auto& t = out[k];
    t.activity.assign(slots, 0.0);
    t.azimuth.assign(slots, 0.0);
    t.elevation.assign(slots, 0.0);
    const std::int64_t centre = static_cast<std::int64_t>(chunk_index) * chunk_us +
                                static_cast<std::int64_t>(k) * hop_us + half_frame_us;
    for (const auto& row : labels) {
      if (row.slot >= slots) {
        throw DataError("labels: event " + std::to_string(row.event) + " uses slot " + std::to_string(row.slot) +
                        " but only " + std::to_string(slots) + " slots exist");
      }
      if (micros(row.onset) <= centre && centre < micros(row.offset)) {
        if (t.activity[row.slot] != 0.0) {
          throw DataError("labels: two events claim slot " + std::to_string(row.slot) + " at t = " +
                          std::to_string(static_cast<double>(centre) / 1e6) + " s");
        }
        t.activity[row.slot] = 1.0;
        t.azimuth[row.slot] = to_radians(row.azimuth_deg);
        t.elevation[row.slot] = to_radians(row.elevation_deg);
      }
    }
  }
  return out;
}

void Dataset::append(Sample sample) {
  if (sample.features.size() != frames * bins * 2 * channels || sample.targets.size() != frames) {
    throw DataError("dataset: sample shape differs from the dataset's K/L/C");
  }
  samples.push_back(std::move(sample));
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batches: batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(scene::stream_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return batches;
}

std::vector<std::vector<std::size_t>> sequential_batches(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batches: batch size must be positive");
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    std::vector<std::size_t> b(std::min(n, i + batch_size) - i);
    std::iota(b.begin(), b.end(), i);
    batches.push_back(std::move(b));
  }
  return batches;
}

Batch assemble(const Dataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("batch: no samples");
  const std::size_t B = indices.size(), K = ds.frames, S = ds.slots;
  const std::size_t per = K * ds.bins * 2 * ds.channels;
  std::vector<double> feats(B * per), act(B * K * S), az(B * K * S), el(B * K * S);
  Batch batch;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& s = ds.samples.at(indices[b]);
    std::copy(s.features.begin(), s.features.end(), feats.begin() + static_cast<std::ptrdiff_t>(b * per));
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < S; ++j) {
        const std::size_t o = (b * K + k) * S + j;
        act[o] = s.targets[k].activity[j];
        az[o] = s.targets[k].azimuth[j];
        el[o] = s.targets[k].elevation[j];
      }
    }
    batch.targets.push_back(s.targets);
    batch.provenance.emplace_back(s.file, s.chunk);
  }
  batch.features = ad::Tensor::from({B, K, ds.bins, 2 * ds.channels}, std::move(feats));
  batch.activity = ad::Tensor::from({B, K, S}, std::move(act));
  batch.azimuth = ad::Tensor::from({B, K, S}, std::move(az));
  batch.elevation = ad::Tensor::from({B, K, S}, std::move(el));
  return batch;
}

SplitSpec SplitSpec::parse(const std::string& text) {
  SplitSpec s;
  auto numbers = [&](const std::string& body) {
    const auto slash = body.find('/');
    if (slash == std::string::npos) throw ConfigError("split: expected a/b, got '" + text + "'");
    try {
      return std::pair<std::size_t, std::size_t>(std::stoul(body.substr(0, slash)), std::stoul(body.substr(slash + 1)));
    } catch (const std::exception&) {
      throw ConfigError("split: bad numbers in '" + text + "'");
    }
  };
  if (text.rfind("fold:", 0) == 0) {
    const auto [f, n] = numbers(text.substr(5));
    if (n < 2 || f >= n) throw ConfigError("split: fold index must be < fold count >= 2 in '" + text + "'");
    s.fold = f;
    s.folds = n;
  } else {
    const auto [a, b] = numbers(text);
    if (a == 0 || b == 0) throw ConfigError("split: both parts must be positive in '" + text + "'");
    s.train_parts = a;
    s.validation_parts = b;
  }
  return s;
}

bool SplitSpec::is_validation(std::size_t i) const {
  if (folds > 0) return i % folds == fold;
  const std::size_t g = std::gcd(train_parts, validation_parts);
  const std::size_t period = (train_parts + validation_parts) / g;
  return i % period >= train_parts / g;
}

std::vector<SceneFile> list_scenes(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const auto audio_dir = root / "audio", label_dir = root / "labels";
  if (!fs::is_directory(audio_dir) || !fs::is_directory(label_dir)) {
    throw DataError("dataset: " + root.string() + " must contain audio/ and labels/");
  }
  std::map<std::string, fs::path> audio, labels;
  for (const auto& e : fs::directory_iterator(audio_dir)) {
    if (e.path().extension() == ".wav") audio[e.path().stem().string()] = e.path();
  }
  for (const auto& e : fs::directory_iterator(label_dir)) {
    if (e.path().extension() == ".csv") labels[e.path().stem().string()] = e.path();
  }
  for (const auto& [stem, path] : audio) {
    if (!labels.count(stem)) throw DataError("dataset: orphan audio file without labels: " + path.string());
  }
  for (const auto& [stem, path] : labels) {
    if (!audio.count(stem)) throw DataError("dataset: orphan label file without audio: " + path.string());
  }
  if (audio.empty()) throw DataError("dataset: no scenes under " + root.string());
  std::vector<SceneFile> files;
  for (const auto& [stem, path] : audio) files.push_back({stem, path, labels[stem]});  // std::map: byte-wise order
  return files;
}

Split load_split(const std::filesystem::path& root, const SplitSpec& split) {
  Split out;
  const auto files = list_scenes(root);
  for (std::size_t i = 0; i < files.size(); ++i) {
    (split.is_validation(i) ? out.validation : out.train).push_back(files[i]);
  }
  return out;
}

Dataset build_dataset(const std::vector<SceneFile>& files, const dsp::StftConfig& stft, std::size_t slots,
                      const ColumnMap& columns) {
  Dataset ds;
  ds.frames = stft.frames_per_chunk();
  ds.bins = stft.bins();
  ds.slots = slots;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto wave = dsp::read_wav(files[f].audio);
    const auto labels = read_labels(files[f].labels, columns, slots);
    if (ds.channels == 0) ds.channels = wave.channels();
    if (wave.channels() != ds.channels) {
      throw DataError("dataset: " + files[f].audio.string() + " has " + std::to_string(wave.channels()) +
                      " channels, expected " + std::to_string(ds.channels));
    }
    ds.files.push_back(files[f].stem);
    for (const auto& wc : dsp::chunk(wave, stft.chunk_seconds)) {
      Sample s;
      s.features = dsp::stft_features(wc, stft).values;
      s.targets = frame_targets(labels, wc.chunk_index, stft, slots);
      s.file = f;
      s.chunk = wc.chunk_index;
      ds.append(std::move(s));
    }
  }
  return ds;
}

}  // namespace adrenaline::data
