// SPDX-License-Identifier: Apache-2.0
// Command-line driver: synth, train, eval, dump-attention, verify, init.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "adrenaline/config.hpp"
#include "adrenaline/error.hpp"
#include "adrenaline/metrics.hpp"
#include "adrenaline/ops.hpp"
#include "adrenaline/train.hpp"
#include "adrenaline/verify.hpp"
#include "adrenaline/wav.hpp"
#include "json.hpp"

using namespace adrenaline;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitVerify = 4;

struct VerificationFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options every config-driven command shares: --config, --profile and one
// --section.key per schema entry.
struct ConfigOptions {
  std::string file;
  std::string profile = "paper";
  std::map<std::string, std::string> keys;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--profile", profile, "base defaults: paper or desk")->capture_default_str();
    for (const auto& k : config::schema()) {
      auto* opt = cmd->add_option("--" + k.key, keys[k.key], k.help);
      opt->default_str(k.default_value)->group("Config keys");
    }
  }

  config::RunConfig resolve(CLI::App* cmd) const {
    config::RunConfig c(config::parse_profile(profile));
    if (!file.empty()) c.load_file(file);
    for (const auto& k : config::schema()) {
      if (cmd->count("--" + k.key)) c.set(k.key, keys.at(k.key));
    }
    return c;
  }
};

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw DataError("cannot create directory " + p.string());
}

ordered_json scene_json(const scene::SceneSpec& s) {
  ordered_json j;
  j["duration"] = s.duration;
  j["sample_rate"] = s.sample_rate;
  j["max_overlap"] = s.max_overlap;
  j["reverb_seconds"] = s.reverb_seconds;
  j["min_events"] = s.min_events;
  j["max_events"] = s.max_events;
  j["min_event_seconds"] = s.min_event_seconds;
  j["max_event_seconds"] = s.max_event_seconds;
  j["elevation_max_deg"] = s.elevation_max_deg;
  j["slots"] = s.slots;
  j["retry_budget"] = s.retry_budget;
  return j;
}

ordered_json stft_json(const dsp::StftConfig& s) {
  ordered_json j;
  j["fft_size"] = s.fft_size;
  j["frame_ms"] = s.frame_ms;
  j["hop_ms"] = s.hop_ms;
  j["chunk_seconds"] = s.chunk_seconds;
  return j;
}

// STFT settings stored with a model, unless the command line overrides them.
dsp::StftConfig stft_for_model(const config::RunConfig& c, const fs::path& card) {
  auto s = c.stft();
  bool overridden = false;
  for (const char* k : {"stft.fft_size", "stft.frame_ms", "stft.hop_ms", "stft.chunk_seconds"}) {
    overridden = overridden || c.is_set_explicitly(k);
  }
  if (overridden) return s;
  std::ifstream is(card);
  auto j = ordered_json::parse(is, nullptr, false);
  if (j.is_discarded() || !j.contains("metadata") || !j["metadata"].contains("stft")) return s;
  const auto& m = j["metadata"]["stft"];
  s.fft_size = m.at("fft_size").get<std::size_t>();
  s.frame_ms = m.at("frame_ms").get<double>();
  s.hop_ms = m.at("hop_ms").get<double>();
  s.chunk_seconds = m.at("chunk_seconds").get<double>();
  return s;
}

fs::path card_for(const fs::path& checkpoint, const std::string& card) {
  if (!card.empty()) return card;
  return checkpoint.parent_path() / "model.json";
}

model::Model load_model(const fs::path& checkpoint, const fs::path& card) {
  if (!fs::exists(checkpoint)) throw DataError("no checkpoint at " + checkpoint.string());
  if (!fs::exists(card)) throw DataError("no model card at " + card.string() + " (pass --card)");
  model::Model m(model::read_model_card(card));
  m.load(checkpoint);
  return m;
}

data::Dataset load_eval_set(const config::RunConfig& c, const dsp::StftConfig& stft, std::size_t slots,
                            const std::string& subset) {
  if (c.get("data.root").empty()) throw ConfigError("data.root is required");
  const auto columns = c.get("data.column_map").empty() ? data::ColumnMap{} : data::ColumnMap::load(c.get("data.column_map"));
  std::vector<data::SceneFile> files;
  if (subset == "all") {
    files = data::list_scenes(c.get("data.root"));
  } else {
    auto split = data::load_split(c.get("data.root"), c.split());
    files = subset == "train" ? split.train : split.validation;
  }
  auto ds = data::build_dataset(files, stft, slots, columns);
  if (ds.empty()) throw DataError("evaluation set '" + subset + "' is empty");
  return ds;
}

void print_metrics(const char* label, const train::Metrics& m) {
  std::printf("%s loss %.5f (act %.5f, doa %.5f)  recall %.2f%%  median doa %.2f deg", label, m.total, m.activity,
              m.doa, m.frame_recall, m.median_doa * 180.0 / std::numbers::pi);
}

// ---------------------------------------------------------------- commands

int cmd_synth(const config::RunConfig& c, const fs::path& out) {
  c.validate();
  make_dirs(out);
  ordered_json manifest;
  manifest["seed"] = c.seed();
  manifest["files_per_subset"] = c.files();
  manifest["subsets"] = ordered_json::array();
  for (auto overlap : c.overlaps()) {
    const auto spec = c.scene(overlap);
    const fs::path dir = out / ("ov" + std::to_string(overlap));
    make_dirs(dir / "audio");
    make_dirs(dir / "labels");
    ordered_json subset;
    subset["name"] = "ov" + std::to_string(overlap);
    subset["scene_spec"] = scene_json(spec);
    subset["scenes"] = ordered_json::array();
    for (std::size_t i = 0; i < c.files(); ++i) {
      auto s = spec;
      s.seed = scene::stream_seed(c.seed(), overlap * 1000003 + i);
      const auto events = scene::sample_events(s);
      const auto r = scene::render_scene(s, events);
      char stem[32];
      std::snprintf(stem, sizeof stem, "scene_%04zu", i);
      dsp::write_wav(dir / "audio" / (std::string(stem) + ".wav"), r.wave);
      scene::write_labels(dir / "labels" / (std::string(stem) + ".csv"), r.labels);
      subset["scenes"].push_back({{"stem", stem}, {"seed", s.seed}, {"events", r.labels.size()}, {"gain", r.gain}});
    }
    manifest["subsets"].push_back(subset);
    std::printf("wrote %zu scenes to %s\n", c.files(), dir.string().c_str());
  }
  write_json(out / "manifest.json", manifest);
  return 0;
}

int cmd_train(const config::RunConfig& c, bool resume) {
  c.validate();
  if (c.get("data.root").empty()) throw ConfigError("data.root is required for training");
  const auto mc = c.model();
  auto tc = c.train();
  const auto stft = c.stft();
  const fs::path run_dir = fs::path(c.get("run.root")) / (model::variant_name(mc.variant) + "-" + c.hash());
  if (fs::exists(run_dir / "train_log.jsonl") && !resume) {
    throw ConfigError("run directory " + run_dir.string() + " already holds a run; pass --resume to continue it");
  }
  make_dirs(run_dir);
  write_text(run_dir / "config.txt", config::commented_text(c, "resolved configuration of this run"));
  ordered_json meta;
  meta["config_hash"] = c.hash();
  meta["stft"] = stft_json(stft);
  meta["train"] = train::to_json(tc);
  model::write_model_card(run_dir / "model.json", mc, meta);
  std::printf("run directory %s\n", run_dir.string().c_str());

  if (c.folds() > 0) {
    auto result = train::run_folds(c.get("data.root"), c.folds(), {mc}, tc, stft, run_dir);
    write_json(run_dir / "folds.json", result.to_json());
    for (const auto& r : result.reports) {
      std::printf("fold %zu %s: recall %.2f%%, median doa %.2f deg\n", r.fold, r.variant.c_str(),
                  r.report.frame_recall, r.report.median_doa * 180.0 / std::numbers::pi);
    }
    return 0;
  }

  const auto columns = c.get("data.column_map").empty() ? data::ColumnMap{} : data::ColumnMap::load(c.get("data.column_map"));
  auto split = data::load_split(c.get("data.root"), c.split());
  auto train_set = data::build_dataset(split.train, stft, mc.slots, columns);
  auto val_set = data::build_dataset(split.validation, stft, mc.slots, columns);
  std::printf("%zu training chunks, %zu validation chunks\n", train_set.samples.size(), val_set.samples.size());

  model::Model m(mc);
  train::kaiming_init(m, tc.seed);
  train::Trainer trainer(m, tc);
  trainer.on_epoch = [](const train::EpochRecord& r) {
    std::printf("epoch %3zu ", r.epoch);
    print_metrics("train", r.train);
    if (r.validation) {
      std::printf(" | ");
      print_metrics("val", *r.validation);
    }
    std::printf("%s\n", r.improved ? " *" : "");
    std::fflush(stdout);
  };
  auto outcome = trainer.fit(train_set, val_set, run_dir, resume);
  m.save(run_dir / "model.ckpt");
  ordered_json summary;
  summary["best_epoch"] = outcome.best_epoch;
  summary["best_loss"] = outcome.best_loss;
  summary["epochs"] = outcome.log.size();
  summary["stopped_early"] = outcome.stopped_early;
  if (!val_set.empty()) {
    summary["validation"] = train::evaluate(m, val_set, tc.batch_size, {tc.lambda, tc.doa_form}).report.to_json();
  }
  write_json(run_dir / "summary.json", summary);
  std::printf("best epoch %zu, loss %.6f; weights in %s\n", outcome.best_epoch, outcome.best_loss,
              (run_dir / "model.ckpt").string().c_str());
  return 0;
}

int cmd_eval(const config::RunConfig& c, const fs::path& checkpoint, const std::string& card,
             const std::string& compare, const std::string& compare_card, const std::string& subset,
             const std::string& csv, const std::string& out) {
  c.validate();
  const auto card_path = card_for(checkpoint, card);
  auto m = load_model(checkpoint, card_path);
  const auto stft = stft_for_model(c, card_path);
  auto ds = load_eval_set(c, stft, m.config().slots, subset);
  const auto tc = c.train();
  const loss::LossOptions lo{tc.lambda, tc.doa_form};
  auto a = train::evaluate(m, ds, tc.batch_size, lo);
  if (!csv.empty()) metrics::write_frame_csv(csv, a.report, ds.files);

  ordered_json j;
  if (compare.empty()) {
    j = a.report.to_json();
    j["loss"] = a.metrics.to_json();
  } else {
    const fs::path other = compare;
    auto m2 = load_model(other, card_for(other, compare_card));
    auto b = train::evaluate(m2, ds, tc.batch_size, lo);
    j["a"] = {{"checkpoint", checkpoint.string()}, {"report", a.report.to_json()}};
    j["b"] = {{"checkpoint", other.string()}, {"report", b.report.to_json()}};
    if (a.report.doa_errors.empty() || b.report.doa_errors.empty()) {
      throw DataError("comparison needs matched DoA errors from both models");
    }
    const auto mw = metrics::mann_whitney_u(a.report.doa_errors, b.report.doa_errors);
    j["mann_whitney"] = {{"u", mw.u},
                         {"p_two_sided", mw.p_two_sided},
                         {"p_less", mw.p_less},
                         {"p_greater", mw.p_greater},
                         {"exact", mw.exact}};
  }
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_json(out, j);
  }
  return 0;
}

int cmd_dump_attention(const config::RunConfig& c, const fs::path& checkpoint, const std::string& card,
                       const fs::path& wav, std::size_t chunk_index, const std::string& out) {
  const auto card_path = card_for(checkpoint, card);
  auto m = load_model(checkpoint, card_path);
  if (m.config().variant != model::Variant::adrenaline) {
    throw ConfigError("dump-attention needs the adrenaline variant, this checkpoint is " +
                      model::variant_name(m.config().variant));
  }
  const auto stft = stft_for_model(c, card_path);
  const auto wave = dsp::read_wav(wav);
  const auto chunks = dsp::chunk(wave, stft.chunk_seconds);
  if (chunk_index >= chunks.size()) {
    throw DataError(wav.string() + " has " + std::to_string(chunks.size()) + " chunks, index " +
                    std::to_string(chunk_index) + " is out of range");
  }
  const auto f = dsp::stft_features(chunks[chunk_index], stft);
  if (f.channels != m.config().channels || f.frames != m.config().frames || f.bins != m.config().bins) {
    throw DataError("audio gives K=" + std::to_string(f.frames) + " L=" + std::to_string(f.bins) + " C=" +
                    std::to_string(f.channels) + ", model expects K=" + std::to_string(m.config().frames) +
                    " L=" + std::to_string(m.config().bins) + " C=" + std::to_string(m.config().channels));
  }
  bool ready = true;
  for (const auto& s : m.norm_stats()) ready = ready && s.ready();
  if (!ready) std::cerr << "note: model has no running statistics yet, normalising with the chunk's own statistics\n";
  ad::NoGradGuard no_grad;
  auto x = ad::Tensor::from({1, f.frames, f.bins, 2 * f.channels}, f.values);
  auto o = m.forward(x, {ready ? ad::NormMode::eval : ad::NormMode::train, false, std::nullopt});
  const auto& w = *o.attention;
  const std::size_t K = f.frames;
  std::ostringstream os;
  os.precision(9);
  for (std::size_t k = 0; k < K; ++k) {  // row: decoder step, column: encoder step
    for (std::size_t j = 0; j < K; ++j) os << (j ? "," : "") << w[k * K + j];
    os << "\n";
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    write_text(out, os.str());
  }
  return 0;
}

int cmd_verify(const std::string& json_out, const std::string& flip) {
  if (!flip.empty()) ad::testing::inject_sign_flip(ad::parse_op_kind(flip));
  const auto results = verify::run_all();
  ad::testing::inject_sign_flip(std::nullopt);
  bool ok = true;
  ordered_json j = ordered_json::array();
  for (const auto& r : results) {
    ok = ok && r.passed;
    std::printf("%s  %-30s max error %-12.4g tolerance %-8.3g %6.2fs  %s\n", r.passed ? "PASS" : "FAIL",
                r.name.c_str(), r.max_error, r.tolerance, r.seconds, r.detail.c_str());
    j.push_back(r.to_json());
  }
  if (!json_out.empty()) write_json(json_out, j);
  if (!ok) throw VerificationFailed("one or more oracle checks failed");
  std::printf("all %zu checks passed\n", results.size());
  return 0;
}

int cmd_init(const config::RunConfig& c, const fs::path& out, const std::string& weights) {
  c.validate();
  make_dirs(out);
  write_text(out / "config.txt", config::commented_text(c, "adrenaline run configuration"));
  std::printf("wrote %s\n", (out / "config.txt").string().c_str());
  if (weights == "none") return 0;
  model::Model m(c.model());
  if (weights == "kaiming") {
    train::kaiming_init(m, c.seed());
  } else {
    for (auto& p : m.parameters()) {
      for (auto& v : p.value.mutable_data()) v = 0.0;
    }
  }
  m.save(out / "model.ckpt");
  ordered_json meta;
  meta["stft"] = stft_json(c.stft());
  meta["weights"] = weights;
  model::write_model_card(out / "model.json", m.config(), meta);
  std::printf("wrote untrained %s weights to %s\n", weights.c_str(), (out / "model.ckpt").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adrenaline: sound event localization with an attention-based encoder-decoder"};
  app.require_subcommand(1);
  app.footer("\n" + config::help_text() +
             "\nExit codes: 0 success, 2 config error, 3 data error, 4 verification failure.\n"
             "ADRENALINE_RUN_ROOT overrides the default run.root.");

  ConfigOptions synth_cfg, train_cfg, eval_cfg, attn_cfg, init_cfg;

  auto* synth = app.add_subcommand("synth", "synthesize ov1/ov2/ov3 scene subsets");
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth_cfg.attach(synth);
  std::string a_files, a_overlap, a_seed, a_reverb, a_variant;
  synth->add_option("--files", a_files, "alias of --scene.files");
  synth->add_option("--overlap", a_overlap, "alias of --scene.overlap");
  synth->add_option("--seed", a_seed, "alias of --run.seed");
  synth->add_option("--reverb", a_reverb, "alias of --scene.reverb");

  auto* train = app.add_subcommand("train", "train a model; the run directory is named by the config hash");
  train_cfg.attach(train);
  bool resume = false, teacher = false;
  std::string t_seed, t_variant, t_data;
  train->add_option("--variant", t_variant, "alias of --model.variant");
  train->add_flag("--teacher-forcing", teacher, "alias of --train.teacher_forcing true");
  train->add_option("--seed", t_seed, "alias of --run.seed");
  train->add_option("--data", t_data, "alias of --data.root");
  train->add_flag("--resume", resume, "continue the run found in the run directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint, optionally against a second one");
  eval_cfg.attach(eval);
  std::string e_ckpt, e_card, e_compare, e_compare_card, e_subset = "all", e_csv, e_out, e_data;
  eval->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
  eval->add_option("--card", e_card, "model card (default: model.json beside the checkpoint)");
  eval->add_option("--compare", e_compare, "second checkpoint; adds a Mann-Whitney U comparison");
  eval->add_option("--compare-card", e_compare_card, "model card of the second checkpoint");
  eval->add_option("--subset", e_subset, "all, train or validation (per data.split)")
      ->check(CLI::IsMember({"all", "train", "validation"}))
      ->capture_default_str();
  eval->add_option("--csv", e_csv, "per-frame errors as CSV");
  eval->add_option("--out", e_out, "report path (default: stdout)");
  eval->add_option("--data", e_data, "alias of --data.root");

  auto* attn = app.add_subcommand("dump-attention", "write one chunk's K x K attention map as CSV");
  attn_cfg.attach(attn);
  std::string d_ckpt, d_card, d_wav, d_out;
  std::size_t d_chunk = 0;
  attn->add_option("--checkpoint", d_ckpt, "checkpoint file")->required();
  attn->add_option("--card", d_card, "model card (default: model.json beside the checkpoint)");
  attn->add_option("--wav", d_wav, "audio file")->required()->check(CLI::ExistingFile);
  attn->add_option("--chunk", d_chunk, "chunk index")->capture_default_str();
  attn->add_option("--out", d_out, "CSV path (default: stdout)");

  auto* ver = app.add_subcommand("verify", "run the embedded oracle suite");
  std::string v_json, v_flip;
  ver->add_option("--json", v_json, "also write the results as JSON");
  ver->add_option("--inject-sign-flip", v_flip, "test fixture: negate one backward rule")->group("");

  auto* init = app.add_subcommand("init", "write a config file, optionally with untrained weights");
  init_cfg.attach(init);
  std::string i_out, i_weights = "none";
  init->add_option("--out", i_out, "output directory")->required();
  init->add_option("--weights", i_weights, "none, kaiming or zero")
      ->check(CLI::IsMember({"none", "kaiming", "zero"}))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) {
      auto c = synth_cfg.resolve(synth);
      if (!a_files.empty()) c.set("scene.files", a_files);
      if (!a_overlap.empty()) c.set("scene.overlap", a_overlap);
      if (!a_seed.empty()) c.set("run.seed", a_seed);
      if (!a_reverb.empty()) c.set("scene.reverb", a_reverb);
      return cmd_synth(c, synth_out);
    }
    if (*train) {
      auto c = train_cfg.resolve(train);
      if (!t_variant.empty()) c.set("model.variant", t_variant);
      if (teacher) c.set("train.teacher_forcing", "true");
      if (!t_seed.empty()) c.set("run.seed", t_seed);
      if (!t_data.empty()) c.set("data.root", t_data);
      return cmd_train(c, resume);
    }
    if (*eval) {
      auto c = eval_cfg.resolve(eval);
      if (!e_data.empty()) c.set("data.root", e_data);
      return cmd_eval(c, e_ckpt, e_card, e_compare, e_compare_card, e_subset, e_csv, e_out);
    }
    if (*attn) return cmd_dump_attention(attn_cfg.resolve(attn), d_ckpt, d_card, d_wav, d_chunk, d_out);
    if (*ver) return cmd_verify(v_json, v_flip);
    if (*init) return cmd_init(init_cfg.resolve(init), i_out, i_weights);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const VerificationFailed& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return kExitVerify;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
