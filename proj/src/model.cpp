// SPDX-License-Identifier: Apache-2.0
#include "adrenaline/model.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "adrenaline/error.hpp"

namespace adrenaline::model {

using namespace adrenaline::ad;
using nlohmann::ordered_json;

Variant parse_variant(const std::string& name) {
  if (name == "adrenaline") return Variant::adrenaline;
  if (name == "cnn-baseline") return Variant::cnn_baseline;
  if (name == "seldnet-m") return Variant::seldnet_m;
  throw ConfigError("unknown model variant '" + name + "' (adrenaline, cnn-baseline, seldnet-m)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::adrenaline: return "adrenaline";
    case Variant::cnn_baseline: return "cnn-baseline";
    case Variant::seldnet_m: return "seldnet-m";
  }
  return "?";
}

std::size_t ModelConfig::feature_dim() const {
  std::size_t l = bins;
  for (auto p : pools) l = p ? l / p : 0;
  return conv_filters * l;
}

void ModelConfig::validate() const {
  if (channels == 0 || frames == 0 || bins == 0) throw ConfigError("model: channels, frames and bins must be positive");
  if (conv_filters == 0 || hidden == 0 || slots == 0) throw ConfigError("model: filters, hidden and slots must be positive");
  if (pools.empty()) throw ConfigError("model: at least one conv layer is required");
  std::size_t product = 1;
  for (auto p : pools) {
    if (p == 0) throw ConfigError("model: pool widths must be positive");
    product *= p;
  }
  if (bins % product != 0) {
    throw ConfigError("model: bins (" + std::to_string(bins) + ") must be divisible by the pool product (" +
                      std::to_string(product) + ")");
  }
  if (variant == Variant::seldnet_m && (seld_hidden == 0 || seld_layers == 0)) {
    throw ConfigError("model: seldnet-m needs positive recurrent width and depth");
  }
}

ordered_json to_json(const ModelConfig& c) {
  ordered_json j;
  j["variant"] = variant_name(c.variant);
  j["channels"] = c.channels;
  j["frames"] = c.frames;
  j["bins"] = c.bins;
  j["conv_filters"] = c.conv_filters;
  j["pools"] = c.pools;
  j["hidden"] = c.hidden;
  j["slots"] = c.slots;
  j["seld_hidden"] = c.seld_hidden;
  j["seld_layers"] = c.seld_layers;
  j["feature_dim"] = c.feature_dim();
  return j;
}

ModelConfig model_config_from_json(const ordered_json& j) {
  try {
    ModelConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.channels = j.at("channels").get<std::size_t>();
    c.frames = j.at("frames").get<std::size_t>();
    c.bins = j.at("bins").get<std::size_t>();
    c.conv_filters = j.at("conv_filters").get<std::size_t>();
    c.pools = j.at("pools").get<std::vector<std::size_t>>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.slots = j.at("slots").get<std::size_t>();
    c.seld_hidden = j.value("seld_hidden", c.seld_hidden);
    c.seld_layers = j.value("seld_layers", c.seld_layers);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model card: ") + e.what());
  }
}

GruCell GruCell::zeros(std::size_t input, std::size_t hidden) {
  return {Tensor::zeros({input, 3 * hidden}), Tensor::zeros({hidden, 3 * hidden}), Tensor::zeros({3 * hidden}),
          Tensor::zeros({3 * hidden})};
}

Tensor gru_step_projected(const GruCell& cell, const Tensor& h, const Tensor& gx) {
  const std::size_t H = cell.hidden_size();
  Tensor gh = matmul(h, cell.u) + cell.b_u;
  Tensor z = sigmoid(narrow(gx, 1, 0, H) + narrow(gh, 1, 0, H));
  Tensor r = sigmoid(narrow(gx, 1, H, H) + narrow(gh, 1, H, H));
  Tensor n = tanh(narrow(gx, 1, 2 * H, H) + r * narrow(gh, 1, 2 * H, H));
  // (1 - z) * n + z * h
  return n + z * (h - n);
}

Tensor gru_step(const GruCell& cell, const Tensor& h, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != cell.input_size() || h.rank() != 2 || h.dim(1) != cell.hidden_size()) {
    throw ShapeError("gru: expected x [B x " + std::to_string(cell.input_size()) + "] and h [B x " +
                     std::to_string(cell.hidden_size()) + "], got " + shape_str(x.shape()) + " and " +
                     shape_str(h.shape()));
  }
  return gru_step_projected(cell, h, matmul(x, cell.w) + cell.b_w);
}

namespace {

// Input projections for every step at once: B x K x 3H.
Tensor project_sequence(const GruCell& cell, const Tensor& y) {
  const std::size_t B = y.dim(0), K = y.dim(1), D = y.dim(2);
  if (D != cell.input_size()) {
    throw ShapeError("gru: sequence feature size " + std::to_string(D) + " != cell input " +
                     std::to_string(cell.input_size()));
  }
  Tensor flat = matmul(reshape(y, {B * K, D}), cell.w) + cell.b_w;
  return reshape(flat, {B, K, 3 * cell.hidden_size()});
}

}  // namespace

Tensor encode(const BiGru& gru, const Tensor& y) {
  if (y.rank() != 3) throw ShapeError("encode: expected B x K x D, got " + shape_str(y.shape()));
  const std::size_t B = y.dim(0), K = y.dim(1);
  const Tensor gf = project_sequence(gru.forward, y);
  const Tensor gb = project_sequence(gru.backward, y);
  std::vector<Tensor> fwd(K), bwd(K);
  Tensor h = Tensor::zeros({B, gru.forward.hidden_size()});
  for (std::size_t k = 0; k < K; ++k) fwd[k] = h = gru_step_projected(gru.forward, h, select(gf, 1, k));
  h = Tensor::zeros({B, gru.backward.hidden_size()});
  for (std::size_t k = K; k-- > 0;) bwd[k] = h = gru_step_projected(gru.backward, h, select(gb, 1, k));
  std::vector<Tensor> steps(K);
  for (std::size_t k = 0; k < K; ++k) steps[k] = concat({fwd[k], bwd[k]}, 1);
  return stack(steps, 1);
}

Attention attend(const Tensor& encoder_states, const Tensor& decoder_hidden) {
  if (encoder_states.rank() != 3 || decoder_hidden.rank() != 2 || encoder_states.dim(0) != decoder_hidden.dim(0) ||
      encoder_states.dim(2) != decoder_hidden.dim(1)) {
    throw ShapeError("attend: encoder states " + shape_str(encoder_states.shape()) + " vs decoder state " +
                     shape_str(decoder_hidden.shape()));
  }
  const std::size_t B = encoder_states.dim(0), K = encoder_states.dim(1), D = encoder_states.dim(2);
  Tensor scores = reshape(bmm(encoder_states, reshape(decoder_hidden, {B, D, 1})), {B, K});
  Tensor weights = softmax(scale(scores, 1.0 / std::sqrt(static_cast<double>(D))));
  Tensor context = reshape(bmm(reshape(weights, {B, 1, K}), encoder_states), {B, D});
  return {context, weights};
}

HeadOutput apply_heads(const Heads& heads, const Tensor& h) {
  return {sigmoid(matmul(h, heads.activity)), matmul(h, heads.azimuth), matmul(h, heads.elevation)};
}

SelOutput decode(const GruCell& cell, const Heads& heads, const Tensor& encoder_states,
                 const std::optional<Tensor>& teacher) {
  const std::size_t B = encoder_states.dim(0), K = encoder_states.dim(1);
  const std::size_t S = heads.activity.dim(1);
  if (cell.hidden_size() != encoder_states.dim(2)) {
    throw ShapeError("decode: decoder hidden size must equal the encoder state size");
  }
  if (teacher && (teacher->rank() != 3 || teacher->dim(0) != B || teacher->dim(1) != K || teacher->dim(2) != 3 * S)) {
    throw ShapeError("decode: teacher stack must be " + shape_str({B, K, 3 * S}) + ", got " +
                     shape_str(teacher->shape()));
  }
  Tensor h = Tensor::zeros({B, cell.hidden_size()});
  Tensor x = Tensor::zeros({B, 3 * S});
  std::vector<Tensor> act(K), az(K), el(K), att(K);
  for (std::size_t k = 0; k < K; ++k) {
    if (teacher && k > 0) x = select(*teacher, 1, k - 1);
    auto a = attend(encoder_states, h);
    h = gru_step(cell, h, concat({a.context, x}, 1));
    auto out = apply_heads(heads, h);
    act[k] = out.activity;
    az[k] = out.azimuth;
    el[k] = out.elevation;
    att[k] = a.weights;
    if (!teacher) x = concat({out.activity, out.azimuth, out.elevation}, 1);
  }
  return {stack(act, 1), stack(az, 1), stack(el, 1), stack(att, 1)};
}

Tensor Model::add_param(const std::string& name, const Shape& shape, ParamRole role, std::size_t fan_in,
                        double fill) {
  params_.push_back({name, Tensor::full(shape, fill, true), role, fan_in});
  return params_.back().value;
}

void Model::add_gru(const std::string& prefix, GruCell& cell, std::size_t input, std::size_t hidden) {
  cell.w = add_param(prefix + ".w", {input, 3 * hidden}, ParamRole::weight, input);
  cell.u = add_param(prefix + ".u", {hidden, 3 * hidden}, ParamRole::weight, hidden);
  cell.b_w = add_param(prefix + ".b_w", {3 * hidden}, ParamRole::bias, input);
  cell.b_u = add_param(prefix + ".b_u", {3 * hidden}, ParamRole::bias, hidden);
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  std::size_t in = 2 * c.channels;
  for (std::size_t i = 0; i < c.conv_layers(); ++i) {
    const std::string p = "conv" + std::to_string(i);
    conv_kernels.push_back(add_param(p + ".kernel", {c.conv_filters, 3, 3, in}, ParamRole::weight, 9 * in));
    conv_bias.push_back(add_param(p + ".bias", {c.conv_filters}, ParamRole::bias, 9 * in));
    bn_gamma.push_back(add_param(p + ".bn.gamma", {c.conv_filters}, ParamRole::norm_scale, 1, 1.0));
    bn_beta.push_back(add_param(p + ".bn.beta", {c.conv_filters}, ParamRole::norm_shift, 1));
    bn_.emplace_back(c.conv_filters);
    in = c.conv_filters;
  }
  const std::size_t Dy = c.feature_dim(), S = c.slots;
  auto add_heads = [&](std::size_t width) {
    heads.activity = add_param("head.activity", {width, S}, ParamRole::weight, width);
    heads.azimuth = add_param("head.azimuth", {width, S}, ParamRole::weight, width);
    heads.elevation = add_param("head.elevation", {width, S}, ParamRole::weight, width);
  };
  switch (c.variant) {
    case Variant::adrenaline:
      add_gru("encoder.fwd", encoder.forward, Dy, c.hidden);
      add_gru("encoder.bwd", encoder.backward, Dy, c.hidden);
      add_gru("decoder", decoder, c.decoder_hidden() + 3 * S, c.decoder_hidden());
      add_heads(c.decoder_hidden());
      break;
    case Variant::cnn_baseline:
      fc_weight = add_param("fc.weight", {Dy, 3 * S}, ParamRole::weight, Dy);
      fc_bias = add_param("fc.bias", {3 * S}, ParamRole::bias, Dy);
      break;
    case Variant::seldnet_m: {
      std::size_t width = Dy;
      seld_layers.resize(c.seld_layers);
      for (std::size_t i = 0; i < c.seld_layers; ++i) {
        add_gru("seld" + std::to_string(i) + ".fwd", seld_layers[i].forward, width, c.seld_hidden);
        add_gru("seld" + std::to_string(i) + ".bwd", seld_layers[i].backward, width, c.seld_hidden);
        width = 2 * c.seld_hidden;
      }
      add_heads(width);
      break;
    }
  }
}

Tensor Model::extract(const Tensor& features, NormMode norm, bool update_stats) {
  const auto& c = config_;
  Tensor x = features.rank() == 3 ? reshape(features, {1, features.dim(0), features.dim(1), features.dim(2)}) : features;
  if (x.rank() != 4 || x.dim(1) != c.frames || x.dim(2) != c.bins || x.dim(3) != 2 * c.channels) {
    throw ShapeError("model: features must be [B x " + std::to_string(c.frames) + " x " + std::to_string(c.bins) +
                     " x " + std::to_string(2 * c.channels) + "], got " + shape_str(features.shape()));
  }
  const std::size_t B = x.dim(0);
  for (std::size_t i = 0; i < c.conv_layers(); ++i) {
    x = conv2d(x, conv_kernels[i], conv_bias[i]);
    x = batchnorm(x, bn_gamma[i], bn_beta[i], bn_[i], norm, update_stats);
    x = maxpool2d(relu(x), 1, c.pools[i]);
  }
  return reshape(x, {B, c.frames, c.feature_dim()});
}

SelOutput Model::forward(const Tensor& features, const ForwardOptions& options) {
  return forward_features(extract(features, options.norm, options.update_stats), options);
}

SelOutput Model::forward_features(const Tensor& y, const ForwardOptions& options) {
  const auto& c = config_;
  if (y.rank() != 3 || y.dim(1) != c.frames || y.dim(2) != c.feature_dim()) {
    throw ShapeError("model: frame features must be [B x " + std::to_string(c.frames) + " x " +
                     std::to_string(c.feature_dim()) + "], got " + shape_str(y.shape()));
  }
  const std::size_t B = y.dim(0), K = c.frames, S = c.slots;
  if (options.teacher && c.variant != Variant::adrenaline) {
    throw ConfigError("teacher forcing only applies to the adrenaline variant");
  }
  switch (c.variant) {
    case Variant::adrenaline:
      return decode(decoder, heads, encode(encoder, y), options.teacher);
    case Variant::cnn_baseline: {
      Tensor o = reshape(matmul(reshape(y, {B * K, c.feature_dim()}), fc_weight) + fc_bias, {B, K, 3 * S});
      return {sigmoid(narrow(o, 2, 0, S)), narrow(o, 2, S, S), narrow(o, 2, 2 * S, S), std::nullopt};
    }
    case Variant::seldnet_m: {
      Tensor h = y;
      for (const auto& layer : seld_layers) h = encode(layer, h);
      const std::size_t W = h.dim(2);
      auto out = apply_heads(heads, reshape(h, {B * K, W}));
      return {reshape(out.activity, {B, K, S}), reshape(out.azimuth, {B, K, S}), reshape(out.elevation, {B, K, S}),
              std::nullopt};
    }
  }
  throw std::logic_error("unreachable");
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

std::vector<NamedArray> Model::state() const {
  std::vector<NamedArray> out;
  for (const auto& p : params_) {
    out.push_back({p.name, p.value.shape(), {p.value.data().begin(), p.value.data().end()}});
  }
  for (std::size_t i = 0; i < bn_.size(); ++i) {
    const std::string prefix = "conv" + std::to_string(i) + ".bn.";
    out.push_back({prefix + "running_mean", {bn_[i].running_mean.size()}, bn_[i].running_mean});
    out.push_back({prefix + "running_var", {bn_[i].running_var.size()}, bn_[i].running_var});
    out.push_back({prefix + "updates", {1}, {static_cast<double>(bn_[i].updates)}});
  }
  return out;
}

void Model::load_state(const std::vector<NamedArray>& arrays) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const std::vector<double>& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint: missing array '" + name + "'");
    if (it->second->shape != shape) {
      throw DataError("checkpoint: '" + name + "' has shape " + shape_str(it->second->shape) + ", model expects " +
                      shape_str(shape));
    }
    return it->second->values;
  };
  std::size_t expected = params_.size() + 3 * bn_.size();
  if (arrays.size() != expected) {
    throw DataError("checkpoint: " + std::to_string(arrays.size()) + " arrays, model expects " +
                    std::to_string(expected));
  }
  for (auto& p : params_) {
    const auto& v = fetch(p.name, p.value.shape());
    std::copy(v.begin(), v.end(), p.value.mutable_data().begin());
  }
  for (std::size_t i = 0; i < bn_.size(); ++i) {
    const std::string prefix = "conv" + std::to_string(i) + ".bn.";
    bn_[i].running_mean = fetch(prefix + "running_mean", {bn_[i].running_mean.size()});
    bn_[i].running_var = fetch(prefix + "running_var", {bn_[i].running_var.size()});
    bn_[i].updates = static_cast<std::size_t>(fetch(prefix + "updates", {1})[0]);
  }
}

void Model::save(const std::filesystem::path& checkpoint) const { save_checkpoint(checkpoint, state()); }

void Model::load(const std::filesystem::path& checkpoint) { load_state(load_checkpoint(checkpoint)); }

void write_model_card(const std::filesystem::path& path, const ModelConfig& config, const ordered_json& metadata) {
  ordered_json card;
  card["model"] = to_json(config);
  card["parameter_count"] = Model(config).parameter_count();
  card["metadata"] = metadata;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("model card: cannot write " + path.string());
  os << card.dump(2) << "\n";
}

ModelConfig read_model_card(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("model card: cannot open " + path.string());
  try {
    return model_config_from_json(ordered_json::parse(is).at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model card: " + path.string() + ": " + e.what());
  }
}

}  // namespace adrenaline::model
