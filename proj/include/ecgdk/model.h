#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecgdk/nn/checkpoint.h"
#include "ecgdk/nn/ops.h"
#include "ecgdk/nn/tensor.h"
#include "ecgdk/rng.h"

namespace ecgdk {

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t encoder_layers = 4;
  std::size_t heads = 4;
  std::size_t ff_dim = 64;
  double dropout = 0.25;
  std::size_t ecg_decoder_out = 32;
  std::size_t rr_decoder_out = 64;
  std::size_t fused_fc = 32;
  std::size_t classes = 3;
  bool use_rr_path = true;

  // Input geometry and backbone widths. The last conv of each path maps to d_model.
  std::size_t input_len = 1000;
  std::vector<std::size_t> ecg_channels{64, 128, 128};
  std::size_t rr_channels = 128;
  std::size_t feature_len = 7;

  void validate() const;

  // Token counts after the backbones.
  std::size_t ecg_seq_len() const;
  std::size_t rr_seq_len() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct BlockSummary {
  std::string name;
  nn::Shape output_shape;  // per sample, batch axis omitted
  std::size_t params = 0;
};

// Per-block output shapes and closed-form parameter counts.
std::vector<BlockSummary> summarize(const ModelConfig& cfg);
std::size_t param_count(const ModelConfig& cfg);

struct ModelOutput {
  nn::Tensor logits;     // [batch, classes]
  nn::Tensor embedding;  // [batch, fused_fc], the fused representation
};

class Model {
 public:
  // Kaiming-uniform weights (bound sqrt(6 / fan_in)) from Rng(seed), zero biases, unit norm gains.
  // Parameters are held at float32 precision.
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  // ecg [batch, 1, input_len] -> tokens [batch, seq, d_model] with positional encoding added.
  nn::Tensor ecg_tokens(const nn::Tensor& ecg) const;
  // feats [batch, 1, feature_len] -> tokens [batch, 3, d_model].
  nn::Tensor rr_tokens(const nn::Tensor& feats) const;

  // `feats` is required when use_rr_path is set and ignored otherwise. `rng` drives dropout and
  // is required when training.
  ModelOutput forward(const nn::Tensor& ecg, const nn::Tensor* feats, bool training, Rng* rng) const;

  std::vector<nn::NamedParam>& params() { return params_; }
  const std::vector<nn::NamedParam>& params() const { return params_; }
  std::size_t runtime_param_count() const;

  nlohmann::json manifest() const;
  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
  static Model load(const std::filesystem::path& path);

 private:
  struct EncoderLayer {
    nn::AttentionWeights attn;
    nn::Tensor ln1_g, ln1_b, ff1_w, ff1_b, ff2_w, ff2_b, ln2_g, ln2_b;
  };
  struct Affine {
    nn::Tensor w, b;
  };

  nn::Tensor add_param(const std::string& name, nn::Shape shape, Rng& rng, std::size_t fan_in);
  nn::Tensor add_const_param(const std::string& name, nn::Shape shape, double value);
  EncoderLayer make_encoder_layer(const std::string& prefix, Rng& rng);
  nn::Tensor encode(const nn::Tensor& tokens, const std::vector<EncoderLayer>& stack, bool training, Rng* rng) const;

  ModelConfig cfg_;
  std::uint64_t seed_;
  std::vector<nn::NamedParam> params_;

  std::vector<Affine> ecg_convs_;
  std::vector<EncoderLayer> ecg_encoder_;
  Affine ecg_decoder_;
  std::vector<Affine> rr_convs_;
  std::vector<EncoderLayer> rr_encoder_;
  Affine rr_decoder_;
  Affine fused_;
  Affine classifier_;
  nn::Tensor ecg_pe_;
  nn::Tensor rr_pe_;
};

}  // namespace ecgdk
