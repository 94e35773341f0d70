// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "adrenaline/error.hpp"

namespace adrenaline::train {

using nlohmann::ordered_json;
using namespace adrenaline::ad;

Scheduler parse_scheduler(const std::string& name) {
  if (name == "none") return Scheduler::none;
  if (name == "noam") return Scheduler::noam;
  throw ConfigError("unknown scheduler '" + name + "' (none, noam)");
}

std::string scheduler_name(Scheduler s) { return s == Scheduler::noam ? "noam" : "none"; }

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch size must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("train: base lr must be positive");
  if (max_epochs == 0) throw ConfigError("train: max epochs must be positive");
  if (patience >= max_epochs) throw ConfigError("train: patience must be smaller than max epochs");
  if (scheduler == Scheduler::noam && warmup == 0) throw ConfigError("train: noam warmup must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train: eps must be positive");
}

ordered_json to_json(const TrainConfig& c) {
  ordered_json j;
  j["batch_size"] = c.batch_size;
  j["base_lr"] = c.base_lr;
  j["scheduler"] = scheduler_name(c.scheduler);
  j["model_dim"] = c.model_dim;
  j["warmup"] = c.warmup;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["lambda"] = c.lambda;
  j["weight_decay"] = c.weight_decay;
  j["teacher_forcing"] = c.teacher_forcing;
  j["doa_form"] = c.doa_form == loss::DoaForm::literal ? "literal" : "unit-vector";
  return j;
}

Tensor kaiming_normal(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  if (fan_in == 0) throw ConfigError("kaiming: fan-in must be >= 1");
  std::normal_distribution<double> g(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = g(rng);
  return Tensor::from(shape, std::move(v));
}

void kaiming_init(model::Model& model, std::uint64_t seed) {
  std::mt19937_64 rng(scene::stream_seed(seed, 100));
  for (auto& p : model.parameters()) {
    auto dst = p.value.mutable_data();
    switch (p.role) {
      case model::ParamRole::weight: {
        auto t = kaiming_normal(p.value.shape(), p.fan_in, rng);
        std::copy(t.data().begin(), t.data().end(), dst.begin());
        break;
      }
      case model::ParamRole::norm_scale: std::fill(dst.begin(), dst.end(), 1.0); break;
      case model::ParamRole::bias:
      case model::ParamRole::norm_shift: std::fill(dst.begin(), dst.end(), 0.0); break;
    }
  }
}

double noam_multiplier(std::size_t step, std::size_t model_dim, std::size_t warmup) {
  if (step == 0 || model_dim == 0 || warmup == 0) throw ConfigError("noam: step, model dim and warmup must be >= 1");
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(model_dim), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

double noam_lr(std::size_t step, double base_lr, std::size_t model_dim, std::size_t warmup) {
  return base_lr * noam_multiplier(step, model_dim, warmup) / noam_multiplier(warmup, model_dim, warmup);
}

AdamW::AdamW(std::vector<Tensor> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].mutable_data();
    const auto g = params_[i].grad();
    const bool has = !g.empty();
    if (has && g.size() != p.size()) throw ShapeError("adamw: gradient and parameter sizes differ");
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = has ? g[k] : 0.0;
      p[k] -= lr * wd_ * p[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

std::vector<NamedArray> AdamW::state(const std::vector<std::string>& names) const {
  std::vector<NamedArray> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"adam.m." + names.at(i), params_[i].shape(), m_[i]});
    out.push_back({"adam.v." + names.at(i), params_[i].shape(), v_[i]});
  }
  out.push_back({"adam.step", {1}, {static_cast<double>(t_)}});
  return out;
}

void AdamW::load_state(const std::vector<NamedArray>& arrays, const std::vector<std::string>& names) {
  std::map<std::string, const NamedArray*> by;
  for (const auto& a : arrays) by[a.name] = &a;
  auto get = [&](const std::string& n, std::size_t size) -> const std::vector<double>& {
    auto it = by.find(n);
    if (it == by.end() || it->second->values.size() != size) throw DataError("optimizer state: missing or bad '" + n + "'");
    return it->second->values;
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = get("adam.m." + names.at(i), params_[i].numel());
    v_[i] = get("adam.v." + names.at(i), params_[i].numel());
  }
  t_ = static_cast<std::size_t>(get("adam.step", 1)[0]);
}

ordered_json Metrics::to_json() const {
  ordered_json j;
  j["total"] = total;
  j["activity"] = activity;
  j["doa"] = doa;
  j["frame_recall"] = frame_recall;
  j["median_doa_deg"] = median_doa * 180.0 / std::numbers::pi;
  j["frames"] = frames;
  return j;
}

Metrics Metrics::from_json(const ordered_json& j) {
  Metrics m;
  m.total = j.at("total").get<double>();
  m.activity = j.at("activity").get<double>();
  m.doa = j.at("doa").get<double>();
  m.frame_recall = j.at("frame_recall").get<double>();
  m.median_doa = j.at("median_doa_deg").get<double>() * std::numbers::pi / 180.0;
  m.frames = j.at("frames").get<std::size_t>();
  return m;
}

ordered_json EpochRecord::to_json() const {
  ordered_json j;
  j["epoch"] = epoch;
  j["train"] = train.to_json();
  j["validation"] = validation ? validation->to_json() : ordered_json(nullptr);
  j["lr"] = lr;
  j["improved"] = improved;
  j["seconds"] = seconds;
  return j;
}

EpochRecord EpochRecord::from_json(const ordered_json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.train = Metrics::from_json(j.at("train"));
  if (!j.at("validation").is_null()) r.validation = Metrics::from_json(j.at("validation"));
  r.lr = j.at("lr").get<std::vector<double>>();
  r.improved = j.at("improved").get<bool>();
  r.seconds = j.at("seconds").get<double>();
  return r;
}

namespace {

struct Accumulator {
  double total = 0, activity = 0, doa = 0;
  std::size_t frames = 0;
  metrics::Evaluator evaluator;

  void add(const loss::LossBreakdown& b, const model::SelOutput& out, const data::Batch& batch) {
    const auto n = static_cast<double>(batch.activity.dim(0) * batch.activity.dim(1));
    total += b.total.item() * n;
    activity += b.activity.item() * n;
    doa += b.doa.item() * n;
    frames += static_cast<std::size_t>(n);
    evaluator.add(out, batch.activity, batch.azimuth, batch.elevation, batch.provenance);
  }

  std::pair<Metrics, metrics::EvalReport> finish() const {
    Metrics m;
    const auto n = static_cast<double>(frames);
    m.total = total / n;
    m.activity = activity / n;
    m.doa = doa / n;
    m.frames = frames;
    auto report = evaluator.report();
    m.frame_recall = report.frame_recall;
    m.median_doa = report.median_doa;
    return {m, std::move(report)};
  }
};

std::string provenance_text(const data::Dataset& ds, const data::Batch& batch) {
  std::string s;
  for (const auto& [file, chunk] : batch.provenance) {
    if (!s.empty()) s += ", ";
    s += (file < ds.files.size() ? ds.files[file] : std::to_string(file)) + "#" + std::to_string(chunk);
  }
  return s;
}

void check_finite(const loss::LossBreakdown& b, const data::Dataset& ds, const data::Batch& batch) {
  if (!std::isfinite(b.total.item())) {
    throw NumericError("non-finite loss in batch [" + provenance_text(ds, batch) + "]");
  }
}

void check_compatible(const model::ModelConfig& c, const data::Dataset& ds, const char* which) {
  if (ds.frames != c.frames || ds.bins != c.bins || ds.channels != c.channels || ds.slots != c.slots) {
    throw DataError(std::string(which) + " data is K=" + std::to_string(ds.frames) + " L=" + std::to_string(ds.bins) +
                    " C=" + std::to_string(ds.channels) + " S=" + std::to_string(ds.slots) + ", model expects K=" +
                    std::to_string(c.frames) + " L=" + std::to_string(c.bins) + " C=" + std::to_string(c.channels) +
                    " S=" + std::to_string(c.slots));
  }
}

std::vector<NamedArray> with_prefix(const std::vector<NamedArray>& arrays, const std::string& prefix, bool keep) {
  std::vector<NamedArray> out;
  for (const auto& a : arrays) {
    if ((a.name.rfind(prefix, 0) == 0) == keep) out.push_back(a);
  }
  return out;
}

}  // namespace

Tensor teacher_stack(const data::Batch& batch) { return concat({batch.activity, batch.azimuth, batch.elevation}, 2); }

Evaluation evaluate(model::Model& model, const data::Dataset& dataset, std::size_t batch_size,
                    const loss::LossOptions& options) {
  if (dataset.empty()) throw DataError("evaluation: empty dataset");
  check_compatible(model.config(), dataset, "evaluation");
  NoGradGuard no_grad;
  Accumulator acc;
  for (const auto& idx : data::sequential_batches(dataset.samples.size(), batch_size)) {
    auto batch = data::assemble(dataset, idx);
    auto out = model.forward(batch.features, {NormMode::eval, false, std::nullopt});
    auto b = loss::sel_loss(out, batch.activity, batch.azimuth, batch.elevation, options);
    check_finite(b, dataset, batch);
    acc.add(b, out, batch);
  }
  auto [m, report] = acc.finish();
  return {m, std::move(report)};
}

Trainer::Trainer(model::Model& model, TrainConfig config)
    : model_(model),
      config_(std::move(config)),
      optimizer_(
          [&] {
            std::vector<Tensor> ps;
            for (auto& p : model.parameters()) ps.push_back(p.value);
            return ps;
          }(),
          config_.beta1, config_.beta2, config_.eps, config_.weight_decay) {
  config_.validate();
  if (config_.teacher_forcing && model.config().variant != model::Variant::adrenaline) {
    throw ConfigError("teacher forcing only applies to the adrenaline variant");
  }
  if (config_.model_dim == 0) config_.model_dim = model.config().decoder_hidden();
  for (const auto& p : model.parameters()) names_.push_back(p.name);
}

double Trainer::learning_rate(std::size_t step) const {
  if (config_.scheduler == Scheduler::none) return config_.base_lr;
  return noam_lr(step, config_.base_lr, config_.model_dim, config_.warmup);
}

TrainOutcome Trainer::fit(const data::Dataset& train, const data::Dataset& validation,
                          const std::filesystem::path& run_dir, bool resume) {
  namespace fs = std::filesystem;
  if (train.empty()) throw DataError("training: empty training set");
  check_compatible(model_.config(), train, "training");
  if (!validation.empty()) check_compatible(model_.config(), validation, "validation");
  const loss::LossOptions loss_options{config_.lambda, config_.doa_form};

  TrainOutcome outcome;
  std::size_t since_improve = 0;
  std::vector<NamedArray> best_state = model_.state();
  const bool persist = !run_dir.empty();
  const fs::path log_path = run_dir / "train_log.jsonl", last = run_dir / "last.ckpt", best = run_dir / "best.ckpt";

  if (persist && resume) {
    if (!fs::exists(last)) throw DataError("resume: no last.ckpt in " + run_dir.string());
    auto arrays = load_checkpoint(last);
    model_.load_state(with_prefix(with_prefix(arrays, "adam.", false), "trainer.", false));
    optimizer_.load_state(with_prefix(arrays, "adam.", true), names_);
    std::map<std::string, double> t;
    for (const auto& a : with_prefix(arrays, "trainer.", true)) t[a.name] = a.values.at(0);
    outcome.best_epoch = static_cast<std::size_t>(t.at("trainer.best_epoch"));
    outcome.best_loss = t.at("trainer.best_loss");
    since_improve = static_cast<std::size_t>(t.at("trainer.since_improve"));
    std::ifstream is(log_path);
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty()) outcome.log.push_back(EpochRecord::from_json(ordered_json::parse(line)));
    }
    if (outcome.log.size() != static_cast<std::size_t>(t.at("trainer.epoch"))) {
      throw DataError("resume: train_log.jsonl and last.ckpt disagree on the epoch count");
    }
    best_state = fs::exists(best) ? load_checkpoint(best) : model_.state();
  } else if (persist) {
    fs::create_directories(run_dir);
    std::ofstream(log_path, std::ios::trunc);
  }

  for (std::size_t epoch = outcome.log.size() + 1; epoch <= config_.max_epochs; ++epoch) {
    if (!outcome.log.empty() && since_improve > config_.patience) break;
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    Accumulator acc;
    for (const auto& idx : data::epoch_batches(train.samples.size(), config_.batch_size, config_.seed, epoch)) {
      tape().clear();
      model_.zero_grad();
      auto batch = data::assemble(train, idx);
      model::ForwardOptions fo{NormMode::train, true, std::nullopt};
      if (config_.teacher_forcing) fo.teacher = teacher_stack(batch);
      auto out = model_.forward(batch.features, fo);
      auto b = loss::sel_loss(out, batch.activity, batch.azimuth, batch.elevation, loss_options);
      check_finite(b, train, batch);
      backward(b.total);
      const double lr = learning_rate(optimizer_.steps() + 1);
      optimizer_.step(lr);
      rec.lr.push_back(lr);
      acc.add(b, out, batch);
    }
    tape().clear();
    rec.train = acc.finish().first;
    if (!validation.empty()) rec.validation = evaluate(model_, validation, config_.batch_size, loss_options).metrics;
    const double score = rec.validation ? rec.validation->total : rec.train.total;
    if (outcome.log.empty() || score < outcome.best_loss) {
      outcome.best_loss = score;
      outcome.best_epoch = epoch;
      since_improve = 0;
      rec.improved = true;
      best_state = model_.state();
      if (persist) save_checkpoint(best, best_state);
    } else {
      ++since_improve;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    outcome.log.push_back(rec);
    if (persist) {
      std::ofstream(log_path, std::ios::app) << rec.to_json().dump() << "\n";
      auto arrays = model_.state();
      auto opt = optimizer_.state(names_);
      arrays.insert(arrays.end(), opt.begin(), opt.end());
      arrays.push_back({"trainer.epoch", {1}, {static_cast<double>(epoch)}});
      arrays.push_back({"trainer.best_epoch", {1}, {static_cast<double>(outcome.best_epoch)}});
      arrays.push_back({"trainer.best_loss", {1}, {outcome.best_loss}});
      arrays.push_back({"trainer.since_improve", {1}, {static_cast<double>(since_improve)}});
      save_checkpoint(last, arrays);
    }
    if (on_epoch) on_epoch(rec);
  }
  outcome.stopped_early = outcome.log.size() < config_.max_epochs;
  model_.load_state(best_state);
  return outcome;
}

ordered_json FoldsResult::to_json() const {
  ordered_json j;
  j["folds"] = ordered_json::array();
  for (const auto& r : reports) {
    ordered_json f;
    f["fold"] = r.fold;
    f["variant"] = r.variant;
    f["best_epoch"] = r.outcome.best_epoch;
    f["report"] = r.report.to_json();
    j["folds"].push_back(f);
  }
  j["comparisons"] = ordered_json::array();
  for (const auto& c : comparisons) {
    ordered_json k;
    k["a"] = c.a;
    k["b"] = c.b;
    k["u"] = c.test.u;
    k["p_two_sided"] = c.test.p_two_sided;
    k["p_less"] = c.test.p_less;
    k["p_greater"] = c.test.p_greater;
    k["exact"] = c.test.exact;
    j["comparisons"].push_back(k);
  }
  return j;
}

FoldsResult run_folds(const std::filesystem::path& root, std::size_t folds,
                      const std::vector<model::ModelConfig>& variants, const TrainConfig& config,
                      const dsp::StftConfig& stft, const std::filesystem::path& run_dir) {
  if (folds < 2) throw ConfigError("folds: need at least 2 folds");
  if (variants.empty()) throw ConfigError("folds: no model variants");
  FoldsResult result;
  std::vector<std::vector<double>> pooled(variants.size());
  for (std::size_t f = 0; f < folds; ++f) {
    data::SplitSpec spec;
    spec.fold = f;
    spec.folds = folds;
    auto split = data::load_split(root, spec);
    auto train_set = data::build_dataset(split.train, stft, variants.front().slots);
    auto val_set = data::build_dataset(split.validation, stft, variants.front().slots);
    if (val_set.samples.size() < config.batch_size || train_set.samples.size() < config.batch_size) {
      throw ConfigError("folds: fold " + std::to_string(f) + " has fewer chunks than one batch (" +
                        std::to_string(config.batch_size) + ")");
    }
    for (std::size_t v = 0; v < variants.size(); ++v) {
      model::Model m(variants[v]);
      kaiming_init(m, config.seed);
      Trainer trainer(m, config);
      const std::string name = model::variant_name(variants[v].variant);
      const auto dir = run_dir.empty() ? run_dir : run_dir / (name + "_fold" + std::to_string(f));
      FoldReport rep;
      rep.fold = f;
      rep.variant = name;
      rep.outcome = trainer.fit(train_set, val_set, dir);
      rep.report = evaluate(m, val_set, config.batch_size, {config.lambda, config.doa_form}).report;
      pooled[v].insert(pooled[v].end(), rep.report.doa_errors.begin(), rep.report.doa_errors.end());
      result.reports.push_back(std::move(rep));
    }
  }
  for (std::size_t a = 0; a < variants.size(); ++a) {
    for (std::size_t b = a + 1; b < variants.size(); ++b) {
      if (pooled[a].empty() || pooled[b].empty()) continue;
      result.comparisons.push_back({model::variant_name(variants[a].variant), model::variant_name(variants[b].variant),
                                    metrics::mann_whitney_u(pooled[a], pooled[b])});
    }
  }
  return result;
}

}  // namespace adrenaline::train
