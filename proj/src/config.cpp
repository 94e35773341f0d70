// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "adrenaline/error.hpp"

namespace adrenaline::config {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list, got '" + v + "'");
  return out;
}

// keys left out of the run hash: where things live, not what is computed
bool is_location(const std::string& key) { return key == "run.root" || key == "data.root" || key == "data.column_map"; }

}  // namespace

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"data.root", "", "dataset directory with audio/ and labels/"},
      {"data.split", "80/20", "train/validation proportions, or fold:k/n"},
      {"data.column_map", "", "optional file of ours=theirs label column names"},
      {"scene.files", "30", "scenes per overlap subset (synth)"},
      {"scene.overlap", "1,2,3", "overlap subsets to synthesize"},
      {"scene.duration", "30", "scene length in seconds"},
      {"scene.sample_rate", "44100", "Hz"},
      {"scene.reverb", "0", "reverberation decay time in seconds, 0 disables"},
      {"scene.elevation_max_deg", "60", "elevations drawn from [-max, max]"},
      {"scene.min_events", "1", "events per scene, lower bound"},
      {"scene.max_events", "10", "events per scene, upper bound"},
      {"scene.min_event_seconds", "0.5", "shortest event"},
      {"scene.max_event_seconds", "3", "longest event"},
      {"stft.fft_size", "2048", "FFT length (power of two); bins = fft_size / 2"},
      {"stft.frame_ms", "40", "analysis frame length"},
      {"stft.hop_ms", "20", "frame hop"},
      {"stft.chunk_seconds", "0.5", "chunk length; frames per chunk = chunk / hop"},
      {"model.variant", "adrenaline", "adrenaline, cnn-baseline or seldnet-m"},
      {"model.channels", "4", "audio channels C"},
      {"model.conv_filters", "64", "filters per conv layer"},
      {"model.pools", "8,8,2", "frequency pooling per conv layer"},
      {"model.hidden", "64", "recurrent width D_h"},
      {"model.slots", "4", "source slots S"},
      {"model.seld_hidden", "128", "seldnet-m recurrent width"},
      {"model.seld_layers", "2", "seldnet-m recurrent layers"},
      {"train.batch_size", "16", "minibatch size"},
      {"train.base_lr", "0.0002", "peak learning rate"},
      {"train.scheduler", "noam", "none or noam"},
      {"train.model_dim", "0", "noam model dimension, 0 means 2 * hidden"},
      {"train.warmup", "1000", "noam warmup steps"},
      {"train.max_epochs", "200", "epoch limit"},
      {"train.patience", "20", "epochs without validation improvement before stopping"},
      {"train.weight_decay", "0.01", "decoupled weight decay"},
      {"train.teacher_forcing", "false", "feed ground truth back into the decoder while training"},
      {"train.folds", "0", "when > 0, run cross-validation over this many folds"},
      {"loss.lambda", "1", "weight of the DoA term"},
      {"loss.doa_form", "unit-vector", "unit-vector or literal"},
      {"run.root", "runs", "parent of run directories (env ADRENALINE_RUN_ROOT overrides the default)"},
      {"run.seed", "0", "seed for synthesis, initialisation and shuffling"},
  };
  return keys;
}

Profile parse_profile(const std::string& name) {
  if (name == "paper") return Profile::paper;
  if (name == "desk") return Profile::desk;
  throw ConfigError("unknown profile '" + name + "' (paper, desk)");
}

RunConfig::RunConfig(Profile profile) {
  for (const auto& k : schema()) values_[k.key] = k.default_value;
  if (const char* root = std::getenv("ADRENALINE_RUN_ROOT"); root && *root) values_["run.root"] = root;
  if (profile == Profile::desk) {
    values_["scene.duration"] = "10";
    values_["scene.sample_rate"] = "6400";
    values_["scene.max_events"] = "4";
    values_["stft.fft_size"] = "256";
    values_["model.conv_filters"] = "8";
    values_["model.pools"] = "4,4,2";
    values_["model.hidden"] = "16";
    values_["model.seld_hidden"] = "16";
    values_["train.base_lr"] = "0.002";
    values_["train.warmup"] = "200";
    values_["train.max_epochs"] = "60";
    values_["train.patience"] = "10";
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
  explicit_[key] = true;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::vector<std::string> errors;
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(n) + ": ";
    if (eq == std::string::npos) {
      errors.push_back(where + "expected key = value");
      continue;
    }
    const auto key = trim(line.substr(0, eq));
    if (!values_.count(key)) {
      errors.push_back(where + "unknown key '" + key + "'");
      continue;
    }
    set(key, trim(line.substr(eq + 1)));
  }
  if (!errors.empty()) {
    std::string msg = "config errors:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  load_text(ss.str(), path.string());
}

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> out;
  auto attempt = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      out.emplace_back(e.what());
    }
  };
  // typed conversions first, one message per bad key
  for (const auto& k : schema()) {
    const auto& v = get(k.key);
    const auto& key = k.key;
    attempt([&] {
      if (key == "scene.overlap" || key == "model.pools") {
        to_sizes(key, v);
      } else if (key == "train.teacher_forcing") {
        to_bool(key, v);
      } else if (key == "model.variant") {
        model::parse_variant(v);
      } else if (key == "train.scheduler") {
        train::parse_scheduler(v);
      } else if (key == "loss.doa_form") {
        loss::parse_doa_form(v);
      } else if (key == "data.split") {
        data::SplitSpec::parse(v);
      } else if (key.starts_with("scene.") || key.starts_with("stft.") || key == "train.base_lr" ||
                 key == "train.weight_decay" || key == "loss.lambda") {
        if (key == "scene.files" || key == "scene.min_events" || key == "scene.max_events" ||
            key == "stft.fft_size") {
          to_size(key, v);
        } else {
          to_double(key, v);
        }
      } else if (key.starts_with("model.") || key.starts_with("train.") || key == "run.seed") {
        to_size(key, v);
      }
    });
  }
  // cross-field checks; a bad value re-raises its typed message, dropped below
  attempt([&] { model().validate(); });
  attempt([&] { train().validate(); });
  attempt([&] {
    for (auto o : overlaps()) scene(o).validate();
  });
  attempt([&] {
    const auto s = stft();
    const auto n = s.fft_size;
    if (n < 2 || (n & (n - 1)) != 0) throw ConfigError("stft.fft_size: must be a power of two");
    if (s.frames_per_chunk() == 0) throw ConfigError("stft: chunk shorter than one hop");
    if (s.frame_samples(to_double("scene.sample_rate", get("scene.sample_rate"))) > n) {
      throw ConfigError("stft.frame_ms: frame longer than fft_size at scene.sample_rate");
    }
  });
  attempt([&] {
    if (train().teacher_forcing && model().variant != model::Variant::adrenaline) {
      throw ConfigError("train.teacher_forcing: only the adrenaline variant decodes autoregressively");
    }
  });
  std::vector<std::string> unique;
  for (auto& m : out) {
    if (std::find(unique.begin(), unique.end(), m) == unique.end()) unique.push_back(std::move(m));
  }
  return unique;
}

void RunConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid configuration (" + std::to_string(p.size()) + " problem" + (p.size() > 1 ? "s" : "") + "):";
  for (const auto& e : p) msg += "\n  " + e;
  throw ConfigError(msg);
}

std::string RunConfig::text() const {
  std::string out;
  for (const auto& k : schema()) out += k.key + " = " + get(k.key) + "\n";
  return out;
}

std::string RunConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const auto& k : schema()) {
    if (is_location(k.key)) continue;
    for (char c : k.key + "=" + get(k.key) + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

dsp::StftConfig RunConfig::stft() const {
  dsp::StftConfig s;
  s.fft_size = to_size("stft.fft_size", get("stft.fft_size"));
  s.frame_ms = to_double("stft.frame_ms", get("stft.frame_ms"));
  s.hop_ms = to_double("stft.hop_ms", get("stft.hop_ms"));
  s.chunk_seconds = to_double("stft.chunk_seconds", get("stft.chunk_seconds"));
  return s;
}

model::ModelConfig RunConfig::model() const {
  model::ModelConfig c;
  const auto s = stft();
  c.variant = model::parse_variant(get("model.variant"));
  c.channels = to_size("model.channels", get("model.channels"));
  c.frames = s.frames_per_chunk();
  c.bins = s.bins();
  c.conv_filters = to_size("model.conv_filters", get("model.conv_filters"));
  c.pools = to_sizes("model.pools", get("model.pools"));
  c.hidden = to_size("model.hidden", get("model.hidden"));
  c.slots = to_size("model.slots", get("model.slots"));
  c.seld_hidden = to_size("model.seld_hidden", get("model.seld_hidden"));
  c.seld_layers = to_size("model.seld_layers", get("model.seld_layers"));
  return c;
}

train::TrainConfig RunConfig::train() const {
  train::TrainConfig t;
  t.batch_size = to_size("train.batch_size", get("train.batch_size"));
  t.base_lr = to_double("train.base_lr", get("train.base_lr"));
  t.scheduler = train::parse_scheduler(get("train.scheduler"));
  t.model_dim = to_size("train.model_dim", get("train.model_dim"));
  t.warmup = to_size("train.warmup", get("train.warmup"));
  t.max_epochs = to_size("train.max_epochs", get("train.max_epochs"));
  t.patience = to_size("train.patience", get("train.patience"));
  t.weight_decay = to_double("train.weight_decay", get("train.weight_decay"));
  t.teacher_forcing = to_bool("train.teacher_forcing", get("train.teacher_forcing"));
  t.lambda = to_double("loss.lambda", get("loss.lambda"));
  t.doa_form = loss::parse_doa_form(get("loss.doa_form"));
  t.seed = seed();
  return t;
}

scene::SceneSpec RunConfig::scene(std::size_t overlap) const {
  scene::SceneSpec s;
  s.duration = to_double("scene.duration", get("scene.duration"));
  s.sample_rate = to_double("scene.sample_rate", get("scene.sample_rate"));
  s.max_overlap = overlap;
  s.reverb_seconds = to_double("scene.reverb", get("scene.reverb"));
  s.elevation_max_deg = to_double("scene.elevation_max_deg", get("scene.elevation_max_deg"));
  s.min_events = to_size("scene.min_events", get("scene.min_events"));
  s.max_events = to_size("scene.max_events", get("scene.max_events"));
  s.min_event_seconds = to_double("scene.min_event_seconds", get("scene.min_event_seconds"));
  s.max_event_seconds = to_double("scene.max_event_seconds", get("scene.max_event_seconds"));
  s.slots = to_size("model.slots", get("model.slots"));
  s.seed = seed();
  return s;
}

std::vector<std::size_t> RunConfig::overlaps() const { return to_sizes("scene.overlap", get("scene.overlap")); }

data::SplitSpec RunConfig::split() const { return data::SplitSpec::parse(get("data.split")); }

std::uint64_t RunConfig::seed() const { return to_size("run.seed", get("run.seed")); }

std::size_t RunConfig::files() const { return to_size("scene.files", get("scene.files")); }

std::size_t RunConfig::folds() const { return to_size("train.folds", get("train.folds")); }

std::string help_text() {
  std::size_t width = 0;
  for (const auto& k : schema()) width = std::max(width, k.key.size() + k.default_value.size() + 3);
  std::string out = "Config keys (file: key = value; flag: --key value), with defaults:\n";
  for (const auto& k : schema()) {
    std::string left = k.key + " = " + (k.default_value.empty() ? "\"\"" : k.default_value);
    left.resize(std::max(left.size(), width + 2), ' ');
    out += "  " + left + "  " + k.help + "\n";
  }
  return out;
}

std::string commented_text(const RunConfig& c, const std::string& title) {
  std::string out = "# " + title + "\n# flat key = value; any key can be overridden on the command line as --key value\n";
  std::string section;
  for (const auto& k : schema()) {
    const auto s = k.key.substr(0, k.key.find('.'));
    if (s != section) {
      out += "\n";
      section = s;
    }
    out += k.key + " = " + c.get(k.key) + "  # " + k.help + "\n";
  }
  return out;
}

}  // namespace adrenaline::config
