#include "ecgdk/model.h"

#include <cmath>

#include "ecgdk/common.h"

namespace ecgdk {

using nn::Shape;
using nn::Tensor;

void ModelConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0)
    throw ContractError("ModelConfig: d_model " + std::to_string(d_model) + " must be divisible by heads " +
                        std::to_string(heads));
  if (encoder_layers == 0 || ff_dim == 0 || ecg_decoder_out == 0 || fused_fc == 0 || classes < 2)
    throw ContractError("ModelConfig: layer sizes must be positive and classes >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("ModelConfig: dropout must lie in [0, 1)");
  if (ecg_channels.empty()) throw ContractError("ModelConfig: ecg_channels must not be empty");
  for (std::size_t c : ecg_channels)
    if (c == 0) throw ContractError("ModelConfig: zero channel width");
  if (input_len < 6) throw ContractError("ModelConfig: input_len too short");
  if (use_rr_path && (rr_channels == 0 || rr_decoder_out == 0 || feature_len < 5))
    throw ContractError("ModelConfig: RR path needs rr_channels, rr_decoder_out > 0 and feature_len >= 5");
}

std::size_t ModelConfig::ecg_seq_len() const {
  const std::size_t conv = nn::conv1d_output_length(input_len, 3, 1, 0);
  return nn::maxpool1d_output_length(conv, 2, 2);
}

std::size_t ModelConfig::rr_seq_len() const { return feature_len - 4; }

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"encoder_layers", c.encoder_layers},
          {"heads", c.heads},
          {"ff_dim", c.ff_dim},
          {"dropout", c.dropout},
          {"ecg_decoder_out", c.ecg_decoder_out},
          {"rr_decoder_out", c.rr_decoder_out},
          {"fused_fc", c.fused_fc},
          {"classes", c.classes},
          {"use_rr_path", c.use_rr_path},
          {"input_len", c.input_len},
          {"ecg_channels", c.ecg_channels},
          {"rr_channels", c.rr_channels},
          {"feature_len", c.feature_len}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("model config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "d_model") c.d_model = value.get<std::size_t>();
    else if (key == "encoder_layers") c.encoder_layers = value.get<std::size_t>();
    else if (key == "heads") c.heads = value.get<std::size_t>();
    else if (key == "ff_dim") c.ff_dim = value.get<std::size_t>();
    else if (key == "dropout") c.dropout = value.get<double>();
    else if (key == "ecg_decoder_out") c.ecg_decoder_out = value.get<std::size_t>();
    else if (key == "rr_decoder_out") c.rr_decoder_out = value.get<std::size_t>();
    else if (key == "fused_fc") c.fused_fc = value.get<std::size_t>();
    else if (key == "classes") c.classes = value.get<std::size_t>();
    else if (key == "use_rr_path") c.use_rr_path = value.get<bool>();
    else if (key == "input_len") c.input_len = value.get<std::size_t>();
    else if (key == "ecg_channels") c.ecg_channels = value.get<std::vector<std::size_t>>();
    else if (key == "rr_channels") c.rr_channels = value.get<std::size_t>();
    else if (key == "feature_len") c.feature_len = value.get<std::size_t>();
    else throw ContractError("model config: unknown key " + key);
  }
  c.validate();
  return c;
}

namespace {

std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) { return in * out * k + out; }
std::size_t linear_params(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t encoder_layer_params(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  return 4 * linear_params(d, d) + linear_params(d, c.ff_dim) + linear_params(c.ff_dim, d) + 4 * d;
}

}  // namespace

std::vector<BlockSummary> summarize(const ModelConfig& c) {
  c.validate();
  std::vector<BlockSummary> out;
  std::size_t len = c.input_len;
  std::size_t in = 1;
  std::vector<std::size_t> widths = c.ecg_channels;
  widths.push_back(c.d_model);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    len = nn::conv1d_output_length(len, 3, 1, i == 0 ? 0 : 1);
    out.push_back({"ecg.conv" + std::to_string(i + 1), {widths[i], len}, conv_params(in, widths[i], 3)});
    in = widths[i];
  }
  len = nn::maxpool1d_output_length(len, 2, 2);
  out.push_back({"ecg.pool", {c.d_model, len}, 0});
  out.push_back({"ecg.tokens", {len, c.d_model}, 0});
  out.push_back({"ecg.encoder", {len, c.d_model}, c.encoder_layers * encoder_layer_params(c)});
  out.push_back({"ecg.decoder", {c.ecg_decoder_out}, linear_params(c.d_model, c.ecg_decoder_out)});
  std::size_t concat = c.ecg_decoder_out;
  if (c.use_rr_path) {
    out.push_back({"rr.conv1", {c.rr_channels, c.feature_len - 2}, conv_params(1, c.rr_channels, 3)});
    out.push_back({"rr.conv2", {c.d_model, c.feature_len - 4}, conv_params(c.rr_channels, c.d_model, 3)});
    out.push_back({"rr.tokens", {c.rr_seq_len(), c.d_model}, 0});
    out.push_back({"rr.encoder", {c.rr_seq_len(), c.d_model}, c.encoder_layers * encoder_layer_params(c)});
    out.push_back({"rr.decoder", {c.rr_decoder_out}, linear_params(c.d_model, c.rr_decoder_out)});
    concat += c.rr_decoder_out;
  }
  out.push_back({"concat", {concat}, 0});
  out.push_back({"fused", {c.fused_fc}, linear_params(concat, c.fused_fc)});
  out.push_back({"classifier", {c.classes}, linear_params(c.fused_fc, c.classes)});
  return out;
}

std::size_t param_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& b : summarize(cfg)) n += b.params;
  return n;
}

Tensor Model::add_param(const std::string& name, Shape shape, Rng& rng, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape), true);
  for (double& v : t.mutable_values()) v = static_cast<double>(static_cast<float>(rng.uniform(-bound, bound)));
  params_.push_back({name, t});
  return t;
}

Tensor Model::add_const_param(const std::string& name, Shape shape, double value) {
  Tensor t(std::move(shape), true);
  for (double& v : t.mutable_values()) v = value;
  params_.push_back({name, t});
  return t;
}

Model::EncoderLayer Model::make_encoder_layer(const std::string& p, Rng& rng) {
  const std::size_t d = cfg_.d_model;
  EncoderLayer l;
  l.attn.wq = add_param(p + ".attn.wq", {d, d}, rng, d);
  l.attn.bq = add_const_param(p + ".attn.bq", {d}, 0.0);
  l.attn.wk = add_param(p + ".attn.wk", {d, d}, rng, d);
  l.attn.bk = add_const_param(p + ".attn.bk", {d}, 0.0);
  l.attn.wv = add_param(p + ".attn.wv", {d, d}, rng, d);
  l.attn.bv = add_const_param(p + ".attn.bv", {d}, 0.0);
  l.attn.wo = add_param(p + ".attn.wo", {d, d}, rng, d);
  l.attn.bo = add_const_param(p + ".attn.bo", {d}, 0.0);
  l.ln1_g = add_const_param(p + ".ln1.gain", {d}, 1.0);
  l.ln1_b = add_const_param(p + ".ln1.bias", {d}, 0.0);
  l.ff1_w = add_param(p + ".ff1.weight", {cfg_.ff_dim, d}, rng, d);
  l.ff1_b = add_const_param(p + ".ff1.bias", {cfg_.ff_dim}, 0.0);
  l.ff2_w = add_param(p + ".ff2.weight", {d, cfg_.ff_dim}, rng, cfg_.ff_dim);
  l.ff2_b = add_const_param(p + ".ff2.bias", {d}, 0.0);
  l.ln2_g = add_const_param(p + ".ln2.gain", {d}, 1.0);
  l.ln2_b = add_const_param(p + ".ln2.bias", {d}, 0.0);
  return l;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  Rng rng(seed, 0x1417);
  const std::size_t d = cfg_.d_model;

  std::vector<std::size_t> widths = cfg_.ecg_channels;
  widths.push_back(d);
  std::size_t in = 1;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string name = "ecg.conv" + std::to_string(i + 1);
    Affine c;
    c.w = add_param(name + ".weight", {widths[i], in, 3}, rng, in * 3);
    c.b = add_const_param(name + ".bias", {widths[i]}, 0.0);
    ecg_convs_.push_back(c);
    in = widths[i];
  }
  for (std::size_t i = 0; i < cfg_.encoder_layers; ++i)
    ecg_encoder_.push_back(make_encoder_layer("ecg.encoder" + std::to_string(i), rng));
  ecg_decoder_.w = add_param("ecg.decoder.weight", {cfg_.ecg_decoder_out, d}, rng, d);
  ecg_decoder_.b = add_const_param("ecg.decoder.bias", {cfg_.ecg_decoder_out}, 0.0);

  std::size_t concat = cfg_.ecg_decoder_out;
  if (cfg_.use_rr_path) {
    Affine c1, c2;
    c1.w = add_param("rr.conv1.weight", {cfg_.rr_channels, 1, 3}, rng, 3);
    c1.b = add_const_param("rr.conv1.bias", {cfg_.rr_channels}, 0.0);
    c2.w = add_param("rr.conv2.weight", {d, cfg_.rr_channels, 3}, rng, cfg_.rr_channels * 3);
    c2.b = add_const_param("rr.conv2.bias", {d}, 0.0);
    rr_convs_ = {c1, c2};
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i)
      rr_encoder_.push_back(make_encoder_layer("rr.encoder" + std::to_string(i), rng));
    rr_decoder_.w = add_param("rr.decoder.weight", {cfg_.rr_decoder_out, d}, rng, d);
    rr_decoder_.b = add_const_param("rr.decoder.bias", {cfg_.rr_decoder_out}, 0.0);
    concat += cfg_.rr_decoder_out;
    rr_pe_ = nn::positional_encoding(cfg_.rr_seq_len(), d);
  }
  fused_.w = add_param("fused.weight", {cfg_.fused_fc, concat}, rng, concat);
  fused_.b = add_const_param("fused.bias", {cfg_.fused_fc}, 0.0);
  classifier_.w = add_param("classifier.weight", {cfg_.classes, cfg_.fused_fc}, rng, cfg_.fused_fc);
  classifier_.b = add_const_param("classifier.bias", {cfg_.classes}, 0.0);
  ecg_pe_ = nn::positional_encoding(cfg_.ecg_seq_len(), d);
}

std::size_t Model::runtime_param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

Tensor Model::ecg_tokens(const Tensor& ecg) const {
  if (ecg.rank() != 3 || ecg.dim(1) != 1 || ecg.dim(2) != cfg_.input_len)
    throw ContractError("ecg input must be [batch, 1, " + std::to_string(cfg_.input_len) + "], got " +
                        nn::shape_string(ecg.shape()));
  Tensor h = ecg;
  for (std::size_t i = 0; i < ecg_convs_.size(); ++i)
    h = nn::relu(nn::conv1d(h, ecg_convs_[i].w, ecg_convs_[i].b, 1, i == 0 ? 0 : 1));
  h = nn::maxpool1d(h, 2, 2);
  return nn::add(nn::transpose_last2(h), ecg_pe_);
}

Tensor Model::rr_tokens(const Tensor& feats) const {
  if (!cfg_.use_rr_path) throw ContractError("rr_tokens called with use_rr_path = false");
  if (feats.rank() != 3 || feats.dim(1) != 1 || feats.dim(2) != cfg_.feature_len)
    throw ContractError("feature input must be [batch, 1, " + std::to_string(cfg_.feature_len) + "], got " +
                        nn::shape_string(feats.shape()));
  Tensor h = feats;
  for (const auto& c : rr_convs_) h = nn::relu(nn::conv1d(h, c.w, c.b, 1, 0));
  return nn::add(nn::transpose_last2(h), rr_pe_);
}

Tensor Model::encode(const Tensor& tokens, const std::vector<EncoderLayer>& stack, bool training, Rng* rng) const {
  Tensor x = tokens;
  for (const auto& l : stack) {
    Tensor a = nn::multi_head_attention(x, x, x, l.attn, cfg_.heads);
    x = nn::layer_norm(nn::add(x, nn::dropout(a, cfg_.dropout, rng, training)), l.ln1_g, l.ln1_b);
    Tensor f = nn::linear(nn::relu(nn::linear(x, l.ff1_w, l.ff1_b)), l.ff2_w, l.ff2_b);
    x = nn::layer_norm(nn::add(x, nn::dropout(f, cfg_.dropout, rng, training)), l.ln2_g, l.ln2_b);
  }
  return x;
}

ModelOutput Model::forward(const Tensor& ecg, const Tensor* feats, bool training, Rng* rng) const {
  if (training && cfg_.dropout > 0.0 && rng == nullptr) throw ContractError("training forward needs an Rng");
  const std::size_t batch = ecg.defined() && ecg.rank() > 0 ? ecg.dim(0) : 0;
  Tensor ecg_vec = nn::mean_over_axis1(encode(ecg_tokens(ecg), ecg_encoder_, training, rng));
  Tensor joined = nn::relu(nn::linear(ecg_vec, ecg_decoder_.w, ecg_decoder_.b));
  if (cfg_.use_rr_path) {
    if (feats == nullptr || !feats->defined()) throw ContractError("RR features are required when use_rr_path is set");
    if (feats->dim(0) != batch) throw ContractError("ECG and feature batches differ in size");
    Tensor rr_vec = nn::mean_over_axis1(encode(rr_tokens(*feats), rr_encoder_, training, rng));
    joined = nn::concat_last(joined, nn::relu(nn::linear(rr_vec, rr_decoder_.w, rr_decoder_.b)));
  }
  ModelOutput out;
  out.embedding = nn::relu(nn::linear(joined, fused_.w, fused_.b));
  out.logits = nn::linear(out.embedding, classifier_.w, classifier_.b);
  return out;
}

nlohmann::json Model::manifest() const {
  return {{"format", "ecgdk-checkpoint"}, {"model_config", to_json(cfg_)}, {"seed", seed_}};
}

void Model::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nlohmann::json m = manifest();
  for (const auto& [k, v] : extra.items()) m[k] = v;
  nn::save_checkpoint(path, m, params_);
}

Model Model::load(const std::filesystem::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  if (!ckpt.manifest.contains("model_config") || !ckpt.manifest.contains("seed"))
    throw ContractError("checkpoint manifest lacks model_config or seed");
  Model m(model_config_from_json(ckpt.manifest.at("model_config")), ckpt.manifest.at("seed").get<std::uint64_t>());
  nn::assign_params(ckpt, m.params_);
  return m;
}

}  // namespace ecgdk
