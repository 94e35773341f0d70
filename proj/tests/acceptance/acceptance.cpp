// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "adrenaline/checkpoint.hpp"
#include "adrenaline/dataset.hpp"
#include "adrenaline/train.hpp"
#include "adrenaline/verify.hpp"

using namespace adrenaline;

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

struct Outcome {
  bool passed = false;
  bool blocking = true;  // a non-blocking failure is reported as a finding
  std::string summary;
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Desk-scale front end: 6400 Hz audio, 256-point FFT, K = 25 frames, L = 128 bins.
dsp::StftConfig desk_stft() {
  dsp::StftConfig s;
  s.fft_size = 256;
  return s;
}

model::ModelConfig desk_model(model::Variant v, std::size_t slots) {
  model::ModelConfig c;
  c.variant = v;
  c.channels = 4;
  c.frames = 25;
  c.bins = 128;
  c.conv_filters = 8;
  c.pools = {4, 4, 2};
  c.hidden = 16;
  c.slots = slots;
  c.seld_hidden = 16;
  return c;
}

// Renders scenes in memory and cuts them into chunks, the same path the
// dataset loader takes from disk.
data::Dataset synth_dataset(std::size_t scenes, std::size_t overlap, double duration, std::uint64_t seed,
                            std::size_t slots, std::size_t first = 0) {
  const auto stft = desk_stft();
  data::Dataset ds;
  ds.frames = stft.frames_per_chunk();
  ds.bins = stft.bins();
  ds.channels = 4;
  ds.slots = slots;
  for (std::size_t i = first; i < first + scenes; ++i) {
    scene::SceneSpec spec;
    spec.duration = duration;
    spec.sample_rate = 6400;
    spec.max_overlap = overlap;
    spec.max_events = std::max<std::size_t>(2, static_cast<std::size_t>(duration));
    spec.slots = slots;
    spec.seed = scene::stream_seed(seed, i);
    const auto r = scene::render_scene(spec, scene::sample_events(spec));
    ds.files.push_back(fmt("scene_%04zu", i));
    for (const auto& wc : dsp::chunk(r.wave, stft.chunk_seconds)) {
      data::Sample s;
      s.features = dsp::stft_features(wc, stft).values;
      s.targets = data::frame_targets(r.labels, wc.chunk_index, stft, slots);
      s.file = ds.files.size() - 1;
      s.chunk = wc.chunk_index;
      ds.append(std::move(s));
    }
  }
  return ds;
}

std::size_t active_frames(const data::Sample& s) {
  std::size_t n = 0;
  for (const auto& t : s.targets) {
    for (double a : t.activity) n += a > 0.5;
  }
  return n;
}

Outcome from_checks(std::initializer_list<verify::CheckResult> checks, double budget_s) {
  Outcome o;
  o.passed = true;
  double total = 0;
  for (const auto& c : checks) {
    o.passed = o.passed && c.passed;
    total += c.seconds;
    if (!o.summary.empty()) o.summary += "; ";
    o.summary += fmt("%s max %.3g (tol %.3g)", c.name.c_str(), c.max_error, c.tolerance);
    if (!c.passed) o.summary += " [" + c.detail + "]";
  }
  if (budget_s > 0) {
    o.passed = o.passed && total < budget_s;
    o.summary += fmt("; %.2f s of %.0f s budget", total, budget_s);
  }
  return o;
}

Outcome criterion_7() {
  const auto start = std::chrono::steady_clock::now();
  // single-source chunks: ov1 scenes, keep chunks with some activity
  auto pool = synth_dataset(16, 1, 4.0, 2024, 1);
  data::Dataset ds = pool;
  ds.samples.clear();
  for (const auto& s : pool.samples) {
    if (active_frames(s) >= 5 && ds.samples.size() < 32) ds.samples.push_back(s);
  }
  if (ds.samples.size() < 32) return {false, true, fmt("only %zu usable chunks", ds.samples.size())};

  model::Model m(desk_model(model::Variant::adrenaline, 1));
  train::kaiming_init(m, 1);
  train::TrainConfig tc;
  tc.batch_size = 8;
  tc.base_lr = 3e-3;
  tc.scheduler = train::Scheduler::noam;
  tc.warmup = 100;
  tc.weight_decay = 0.0;
  tc.max_epochs = 300;
  tc.patience = 299;
  tc.seed = 1;
  train::Trainer trainer(m, tc);
  if (std::getenv("ACCEPTANCE_TRACE")) {
    trainer.on_epoch = [](const train::EpochRecord& r) {
      if (r.epoch % 20 == 0) {
        std::printf("  epoch %zu loss %.4f act %.4f doa %.4f recall %.2f median %.2f\n", r.epoch, r.train.total,
                    r.train.activity, r.train.doa, r.train.frame_recall, r.train.median_doa * kDeg);
      }
    };
  }
  auto out = trainer.fit(ds, {});
  auto e = train::evaluate(m, ds, 8);
  const double first = out.log.front().train.total;
  const double drop = first / out.best_loss;
  const double minutes = seconds_since(start) / 60.0;
  Outcome o;
  o.passed = e.report.frame_recall >= 95.0 && e.report.median_doa * kDeg < 10.0 && drop >= 10.0 &&
             out.log.size() <= 300 && minutes < 10.0;
  o.summary = fmt("32 chunks, %zu epochs: training recall %.2f%% (>= 95), median DoA %.2f deg (< 10), loss %.4f -> %.4f "
                  "(%.1fx, >= 10x), %.1f min (< 10)",
                  out.log.size(), e.report.frame_recall, e.report.median_doa * kDeg, first, out.best_loss, drop,
                  minutes);
  return o;
}

Outcome criterion_8(std::size_t scenes, double duration, std::size_t epochs) {
  const auto start = std::chrono::steady_clock::now();
  auto all = synth_dataset(scenes, 2, duration, 77, 4);
  data::SplitSpec split;  // 80/20 by stem index
  data::Dataset tr = all, va = all;
  tr.samples.clear();
  va.samples.clear();
  for (const auto& s : all.samples) (split.is_validation(s.file) ? va : tr).samples.push_back(s);

  train::TrainConfig tc;
  tc.batch_size = 16;
  tc.base_lr = 2e-3;
  tc.warmup = 200;
  tc.max_epochs = epochs;
  tc.patience = std::max<std::size_t>(1, epochs / 4);
  tc.seed = 5;
  std::vector<std::pair<std::string, train::Evaluation>> results;
  for (auto v : {model::Variant::adrenaline, model::Variant::cnn_baseline}) {
    model::Model m(desk_model(v, 4));
    train::kaiming_init(m, tc.seed);
    train::Trainer(m, tc).fit(tr, va);
    results.emplace_back(model::variant_name(v), train::evaluate(m, va, tc.batch_size));
  }
  const auto& a = results[0].second.report;
  const auto& b = results[1].second.report;
  const auto mw = metrics::mann_whitney_u(a.doa_errors, b.doa_errors);
  Outcome o;
  o.blocking = false;
  o.passed = a.median_doa <= b.median_doa;
  o.summary = fmt("%zu ov2 scenes (%zu train / %zu val chunks): validation median DoA adrenaline %.2f deg vs "
                  "cnn-baseline %.2f deg, recall %.2f%% vs %.2f%%, Mann-Whitney U = %.0f, p = %.3g (two-sided); "
                  "%.1f min",
                  scenes, tr.samples.size(), va.samples.size(), a.median_doa * kDeg, b.median_doa * kDeg,
                  a.frame_recall, b.frame_recall, mw.u, mw.p_two_sided, seconds_since(start) / 60.0);
  return o;
}

bool same_log(const train::TrainOutcome& x, const train::TrainOutcome& y) {
  if (x.log.size() != y.log.size()) return false;
  for (std::size_t i = 0; i < x.log.size(); ++i) {
    auto a = x.log[i].to_json(), b = y.log[i].to_json();
    a.erase("seconds");
    b.erase("seconds");
    if (a != b) return false;
  }
  return true;
}

Outcome criterion_10(const std::filesystem::path& work) {
  auto all = synth_dataset(6, 2, 2.0, 99, 4);
  data::Dataset tr = all, va = all;
  tr.samples.clear();
  va.samples.clear();
  for (const auto& s : all.samples) (s.file < 5 ? tr : va).samples.push_back(s);
  train::TrainConfig tc;
  tc.batch_size = 4;
  tc.base_lr = 2e-3;
  tc.warmup = 20;
  tc.max_epochs = 4;
  tc.patience = 3;
  tc.seed = 11;
  auto run = [&](model::Model& m, const std::filesystem::path& dir) {
    train::kaiming_init(m, tc.seed);
    return train::Trainer(m, tc).fit(tr, va, dir);
  };
  std::filesystem::remove_all(work / "c10");
  model::Model m1(desk_model(model::Variant::adrenaline, 4)), m2(desk_model(model::Variant::adrenaline, 4));
  auto o1 = run(m1, work / "c10" / "a");
  auto o2 = run(m2, work / "c10" / "b");
  const bool logs = same_log(o1, o2);
  bool weights = true;
  const auto s1 = m1.state(), s2 = m2.state();
  for (std::size_t i = 0; i < s1.size(); ++i) weights = weights && s1[i].values == s2[i].values;

  model::Model restored(desk_model(model::Variant::adrenaline, 4));
  restored.load(work / "c10" / "a" / "best.ckpt");
  const double logged = o1.log.at(o1.best_epoch - 1).validation->total;
  const double again = train::evaluate(restored, va, tc.batch_size).metrics.total;
  std::filesystem::remove_all(work / "c10");
  Outcome o;
  o.passed = logs && weights && again == logged;
  o.summary = fmt("two seeded runs: logs %s, final weights %s; best.ckpt validation loss %.17g vs logged %.17g (%s)",
                  logs ? "bit-identical" : "DIFFER", weights ? "bit-identical" : "DIFFER", again, logged,
                  again == logged ? "bit-identical" : "DIFFER");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-10"};
  std::vector<int> only;
  std::string work = std::filesystem::temp_directory_path().string();
  std::size_t c8_scenes = 200, c8_epochs = 30;
  double c8_duration = 2.0;
  app.add_option("--criterion", only, "run only these criteria (repeatable)")->check(CLI::Range(1, 10));
  app.add_option("--work", work, "scratch directory")->capture_default_str();
  app.add_option("--c8-scenes", c8_scenes, "scenes for the generalization run")->capture_default_str();
  app.add_option("--c8-seconds", c8_duration, "seconds per scene for the generalization run")->capture_default_str();
  app.add_option("--c8-epochs", c8_epochs, "epoch limit for the generalization run")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int n) { return selected.empty() || selected.count(n); };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity",
       [] { return from_checks({verify::op_gradients(), verify::end_to_end_gradient()}, 60.0); }},
      {"assignment oracle", [] { return from_checks({verify::hungarian_oracle()}, 5.0); }},
      {"permutation-loss equivalence", [] { return from_checks({verify::permutation_loss_oracle()}, 0.0); }},
      {"DoA-error oracle", [] { return from_checks({verify::doa_oracle()}, 0.0); }},
      {"attention stochasticity", [] { return from_checks({verify::attention_rows()}, 0.0); }},
      {"shape contract at full dims",
       [] {
         auto r = verify::paper_shapes();
         return Outcome{r.passed, true, r.detail};
       }},
      {"learning demonstration (overfit)", criterion_7},
      {"generalization smoke test", [&] { return criterion_8(c8_scenes, c8_duration, c8_epochs); }},
      {"statistics oracle", [] { return from_checks({verify::mann_whitney_oracle()}, 0.0); }},
      {"determinism and persistence", [&] { return criterion_10(work); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!want(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, true, std::string("threw: ") + e.what()};
    }
    const char* verdict = o.passed ? "PASS" : (o.blocking ? "FAIL" : "FAIL (finding, non-blocking)");
    std::printf("criterion %2d %s  %s: %s\n", n, verdict, criteria[i].first.c_str(), o.summary.c_str());
    std::fflush(stdout);
    if (!o.passed && o.blocking) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
