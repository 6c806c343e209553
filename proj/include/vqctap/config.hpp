#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace vqctap {

// Architecture dimensions. Defaults are the desk-scale configuration; see
// paper_scale_config() for the full-size one.
struct ModelConfig {
  int64_t mel_bands = 40;
  int64_t vocab_size = 18;  // 16 phonemes + pad + silence
  int64_t pad_id = 0;
  int64_t silence_id = 1;
  int64_t phoneme_embed_dim = 64;
  int64_t hidden_dim = 64;
  int64_t latent_dim = 64;
  int64_t attention_heads = 2;
  int64_t ffn_dim = 256;
  int64_t speech_encoder_layers = 2;
  int64_t phoneme_encoder_layers = 2;
  int64_t speech_decoder_layers = 2;
  int64_t phoneme_decoder_layers = 2;
  int64_t speech_decoder_convs = 1;
  int64_t prompt_channels = 64;
  int64_t prompt_convs = 6;
  int64_t prompt_dim = 64;
  int64_t codebook_size = 64;
  int64_t prompt_window_frames = 300;  // 3 s at 100 frames/s
};

// Loss weights and the stepping ramps for the KL and consistency terms.
struct ScheduleConfig {
  int64_t kl_start = 500;
  int64_t kl_end = 1500;
  double kl_upper = 1e-2;
  int64_t consistency_start = 1000;
  int64_t consistency_end = 2000;
  double consistency_upper = 1.0;
  double weight_mse = 1.0;
  double weight_vq = 1.0;
  double weight_classify = 1.0;
  double weight_contrastive = 0.1;
  double kl_margin = 0.5;
};

struct OptimConfig {
  double learning_rate = 2e-4;
  int64_t batch_size = 8;
  double ema_decay = 0.99;
  double ema_epsilon = 1e-5;
  double init_tau = 1.0 / 0.07;
};

struct ConnectorConfig {
  int64_t diffusion_steps = 50;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  int64_t residual_layers = 8;
  int64_t residual_blocks = 2;
  int64_t channels = 64;
  int64_t conditioner_layers = 1;
  double learning_rate = 1e-3;
  int64_t batch_size = 4;
};

struct InferenceConfig {
  int64_t uniform_duration = 10;  // frames per phoneme when no durations are given
};

struct Config {
  std::string scale = "desk";
  ModelConfig model;
  ScheduleConfig schedule;
  OptimConfig optim;
  ConnectorConfig connector;
  InferenceConfig inference;
};

Config desk_config();
Config paper_scale_config();

/// Parses `key = value` lines; `#` starts a comment. A `scale = desk|paper`
/// line selects the preset the remaining keys override, wherever it appears.
/// Unknown keys and malformed values raise ParameterError.
Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);

/// Canonical `key=value` pairs for every field, in a fixed order.
std::vector<std::pair<std::string, std::string>> config_entries(const Config& config);
std::string to_text(const Config& config);

/// The architecture-defining subset (model.* keys) that must match between a
/// checkpoint and the network it is loaded into.
std::vector<std::pair<std::string, std::string>> model_entries(const ModelConfig& model);

/// 64-bit FNV-1a over the canonical model entries.
uint64_t model_hash(const ModelConfig& model);

void validate(const Config& config);

}  // namespace vqctap
