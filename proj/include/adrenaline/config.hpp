// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adrenaline/dataset.hpp"
#include "adrenaline/dsp.hpp"
#include "adrenaline/model.hpp"
#include "adrenaline/scene.hpp"
#include "adrenaline/train.hpp"

namespace adrenaline::config {

struct KeySpec {
  std::string key;  // section.name
  std::string default_value;
  std::string help;
};

/// Every accepted key, in the order used for help output and hashing.
const std::vector<KeySpec>& schema();

enum class Profile { paper, desk };
Profile parse_profile(const std::string& name);

/// Flat key=value configuration. Values are kept as text and converted on
/// access; `validate()` reports every problem at once.
class RunConfig {
 public:
  explicit RunConfig(Profile profile = Profile::paper);

  /// Reads `key = value` lines; `#` starts a comment. Unknown keys and
  /// malformed lines are collected and thrown together as one ConfigError.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "<text>");
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_set_explicitly(const std::string& key) const { return explicit_.count(key) > 0; }

  std::vector<std::string> problems() const;
  void validate() const;

  /// Every key in schema order, one `key = value` per line.
  std::string text() const;
  /// 16 hex digits over text() without the run root and data paths.
  std::string hash() const;

  model::ModelConfig model() const;
  train::TrainConfig train() const;
  dsp::StftConfig stft() const;
  scene::SceneSpec scene(std::size_t overlap) const;
  std::vector<std::size_t> overlaps() const;
  data::SplitSpec split() const;
  std::uint64_t seed() const;
  std::size_t files() const;
  std::size_t folds() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

/// Help block listing every key with its default.
std::string help_text();

/// The configuration as a commented file that load_file() reads back.
std::string commented_text(const RunConfig& config, const std::string& title);

}  // namespace adrenaline::config
