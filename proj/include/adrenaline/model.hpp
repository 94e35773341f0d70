// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adrenaline/checkpoint.hpp"
#include "adrenaline/ops.hpp"
#include "json.hpp"

namespace adrenaline::model {

using ad::Tensor;

enum class Variant { adrenaline, cnn_baseline, seldnet_m };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

struct ModelConfig {
  Variant variant = Variant::adrenaline;
  std::size_t channels = 4;  // C, audio channels (input has 2C feature channels)
  std::size_t frames = 25;   // K
  std::size_t bins = 1024;   // L
  std::size_t conv_filters = 64;
  std::vector<std::size_t> pools{8, 8, 2};  // one per conv layer, frequency axis only
  std::size_t hidden = 64;                  // D_h
  std::size_t slots = 4;                    // S
  std::size_t seld_hidden = 128;            // SELDNet(m) width per direction
  std::size_t seld_layers = 2;

  std::size_t conv_layers() const { return pools.size(); }
  std::size_t feature_dim() const;  // D_y
  std::size_t decoder_hidden() const { return 2 * hidden; }
  void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

/// Heads are B x K x S; attention is B x K x K (rows = decoder steps), empty for baselines.
struct SelOutput {
  Tensor activity;
  Tensor azimuth;
  Tensor elevation;
  std::optional<Tensor> attention;
};

enum class ParamRole { weight, bias, norm_scale, norm_shift };

struct Parameter {
  std::string name;
  Tensor value;
  ParamRole role = ParamRole::weight;
  std::size_t fan_in = 1;
};

/// Gates packed as (z, r, n) along the last axis of the weight matrices.
struct GruCell {
  Tensor w;    // in x 3H
  Tensor u;    // H x 3H
  Tensor b_w;  // 3H
  Tensor b_u;  // 3H

  static GruCell zeros(std::size_t input, std::size_t hidden);
  std::size_t input_size() const { return w.dim(0); }
  std::size_t hidden_size() const { return u.dim(0); }
};

/// One GRU step on a batch: h [B x H], x [B x in] -> [B x H].
Tensor gru_step(const GruCell& cell, const Tensor& h, const Tensor& x);
/// Same step with the input projection x W + b_w already computed.
Tensor gru_step_projected(const GruCell& cell, const Tensor& h, const Tensor& gx);

struct BiGru {
  GruCell forward;
  GruCell backward;
};

/// Bidirectional pass over y [B x K x D] from zero states; returns B x K x 2H
/// with the forward state first.
Tensor encode(const BiGru& gru, const Tensor& y);

struct Attention {
  Tensor context;  // B x 2D_h
  Tensor weights;  // B x K
};

/// Scaled dot-product attention of decoder state h [B x 2D_h] over encoder
/// states [B x K x 2D_h].
Attention attend(const Tensor& encoder_states, const Tensor& decoder_hidden);

struct Heads {
  Tensor activity;   // in x S
  Tensor azimuth;    // in x S
  Tensor elevation;  // in x S
};

struct HeadOutput {
  Tensor activity, azimuth, elevation;  // B x S
};

HeadOutput apply_heads(const Heads& heads, const Tensor& h);

/// Free-running when `teacher` is empty, otherwise x_{k-1} is read from the
/// B x K x 3S teacher stack laid out as [gamma | phi | theta].
SelOutput decode(const GruCell& cell, const Heads& heads, const Tensor& encoder_states,
                 const std::optional<Tensor>& teacher = std::nullopt);

struct ForwardOptions {
  ad::NormMode norm = ad::NormMode::train;
  bool update_stats = true;
  std::optional<Tensor> teacher;  // adrenaline variant only
};

class Model {
 public:
  explicit Model(ModelConfig config);
  Model(const Model&) = delete;  // handles share storage; snapshot through state()
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }

  /// features: B x K x L x 2C or K x L x 2C (treated as B = 1).
  SelOutput forward(const Tensor& features, const ForwardOptions& options = {});

  /// CNN front end only: B x K x D_y.
  Tensor extract(const Tensor& features, ad::NormMode norm, bool update_stats = true);
  /// Everything after the CNN front end, from y [B x K x D_y].
  SelOutput forward_features(const Tensor& y, const ForwardOptions& options = {});

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  std::vector<ad::BatchNormStats>& norm_stats() { return bn_; }

  /// Parameters plus batch-norm running statistics.
  std::vector<ad::NamedArray> state() const;
  void load_state(const std::vector<ad::NamedArray>& arrays);

  void save(const std::filesystem::path& checkpoint) const;
  void load(const std::filesystem::path& checkpoint);

  void zero_grad();

  // Named handles into the registry, exposed for tests.
  std::vector<Tensor> conv_kernels, conv_bias, bn_gamma, bn_beta;
  BiGru encoder;
  GruCell decoder;
  Heads heads;
  std::vector<BiGru> seld_layers;
  Tensor fc_weight, fc_bias;  // cnn-baseline

 private:
  Tensor add_param(const std::string& name, const ad::Shape& shape, ParamRole role, std::size_t fan_in,
                    double fill = 0.0);
  void add_gru(const std::string& prefix, GruCell& cell, std::size_t input, std::size_t hidden);

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::vector<ad::BatchNormStats> bn_;
};

/// Model card sidecar: the config plus free-form metadata.
void write_model_card(const std::filesystem::path& path, const ModelConfig& config,
                      const nlohmann::ordered_json& metadata = nlohmann::ordered_json::object());
ModelConfig read_model_card(const std::filesystem::path& path);

}  // namespace adrenaline::model
