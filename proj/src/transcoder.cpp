#include "vqctap/transcoder.hpp"

#include <cmath>
#include <string>

#include "vqctap/errors.hpp"

namespace vqctap {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv1d conv1d(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding) {
  return torch::nn::Conv1d(
      torch::nn::Conv1dOptions(in, out, kernel).stride(stride).padding(padding));
}

// Kernel 4, stride 2, padding 1: exactly doubles the length.
torch::nn::ConvTranspose1d upsample2(int64_t channels) {
  return torch::nn::ConvTranspose1d(
      torch::nn::ConvTranspose1dOptions(channels, channels, 4).stride(2).padding(1));
}

void check_sequence(const torch::Tensor& x, const torch::Tensor& mask, const char* who) {
  if (!x.defined() || x.dim() < 2) {
    throw ShapeError(std::string(who) + ": expected a [B, T, ...] batch");
  }
  if (!mask.defined() || mask.dim() != 2 || mask.size(0) != x.size(0) ||
      mask.size(1) != x.size(1)) {
    throw ShapeError(std::string(who) + ": mask must be [B, T] matching the input");
  }
}

void check_compressible(const torch::Tensor& x, const char* who) {
  if (x.size(1) == 0 || x.size(1) % kCompression != 0) {
    throw ShapeError(std::string(who) + ": frame count " + std::to_string(x.size(1)) +
                     " is not a positive multiple of 4");
  }
}

torch::Tensor unit_layer_norm(const torch::Tensor& x) {
  return F::layer_norm(x, F::LayerNormFuncOptions({x.size(-1)}));
}

torch::Tensor add_positions(const torch::Tensor& x) {
  return x + sinusoidal_positions(x.size(1), x.size(2), x.options()).unsqueeze(0);
}

}  // namespace

SpeechEncoderImpl::SpeechEncoderImpl(const ModelConfig& c) : latent_dim_(c.latent_dim) {
  conv1_ = register_module("conv1", conv1d(c.mel_bands, c.hidden_dim, 3, 2, 1));
  conv2_ = register_module("conv2", conv1d(c.hidden_dim, c.hidden_dim, 3, 2, 1));
  transformer_ = register_module(
      "transformer",
      TransformerStack(c.hidden_dim, c.attention_heads, c.ffn_dim, c.speech_encoder_layers));
  project_ = register_module("project", torch::nn::Linear(c.hidden_dim, c.latent_dim));
}

LatentSeq SpeechEncoderImpl::forward(const torch::Tensor& mel, const torch::Tensor& mask) {
  check_sequence(mel, mask, "speech_encode");
  check_compressible(mel, "speech_encode");
  auto x = (mel * mask.unsqueeze(-1).to(mel.scalar_type())).transpose(1, 2);
  x = F::gelu(conv1_->forward(x));
  x = F::gelu(conv2_->forward(x)).transpose(1, 2);
  auto out_mask = downsample_mask(mask, kCompression);
  x = transformer_->forward(add_positions(x), out_mask);
  return LatentSeq{unit_layer_norm(project_->forward(x)), out_mask};
}

PhonemeEncoderImpl::PhonemeEncoderImpl(const ModelConfig& c) : latent_dim_(c.latent_dim) {
  embedding_ = register_module("embedding", torch::nn::Embedding(c.vocab_size, c.phoneme_embed_dim));
  conv_ = register_module("conv", conv1d(c.phoneme_embed_dim, c.hidden_dim, kCompression,
                                         kCompression, 0));
  transformer_ = register_module(
      "transformer",
      TransformerStack(c.hidden_dim, c.attention_heads, c.ffn_dim, c.phoneme_encoder_layers));
  project_ = register_module("project", torch::nn::Linear(c.hidden_dim, c.latent_dim));
}

LatentSeq PhonemeEncoderImpl::forward(const torch::Tensor& ids, const torch::Tensor& mask) {
  check_sequence(ids, mask, "phoneme_encode");
  check_compressible(ids, "phoneme_encode");
  auto x = embedding_->forward(ids);
  x = x * mask.unsqueeze(-1).to(x.scalar_type());
  x = F::relu(conv_->forward(x.transpose(1, 2))).transpose(1, 2);
  auto out_mask = downsample_mask(mask, kCompression);
  x = transformer_->forward(add_positions(x), out_mask);
  return LatentSeq{unit_layer_norm(project_->forward(x)), out_mask};
}

SeResBlockImpl::SeResBlockImpl(int64_t channels) {
  conv1_ = register_module("conv1", conv1d(channels, channels, 3, 1, 1));
  conv2_ = register_module("conv2", conv1d(channels, channels, 3, 1, 1));
  const int64_t reduced = std::max<int64_t>(channels / 4, 1);
  squeeze_ = register_module("squeeze", torch::nn::Linear(channels, reduced));
  excite_ = register_module("excite", torch::nn::Linear(reduced, channels));
}

torch::Tensor SeResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  const auto m = mask.unsqueeze(1).to(x.scalar_type());
  auto y = F::relu(conv1_->forward(x)) * m;
  y = conv2_->forward(y) * m;
  auto pooled = masked_mean(y.transpose(1, 2), mask);
  auto gate = torch::sigmoid(excite_->forward(F::relu(squeeze_->forward(pooled))));
  return F::relu(x + y * gate.unsqueeze(-1)) * m;
}

PromptEncoderImpl::PromptEncoderImpl(const ModelConfig& c) {
  for (int64_t i = 0; i < c.prompt_convs; ++i) {
    convs_->push_back(conv1d(i == 0 ? c.mel_bands : c.prompt_channels, c.prompt_channels, 3, 1, 1));
  }
  register_module("convs", convs_);
  se_block_ = register_module("se_block", SeResBlock(c.prompt_channels));
  mu_head_ = register_module("mu_head", torch::nn::Linear(c.prompt_channels, c.prompt_dim));
  logvar_head_ = register_module("logvar_head", torch::nn::Linear(c.prompt_channels, c.prompt_dim));
}

ParaVec PromptEncoderImpl::forward(const torch::Tensor& clip, const torch::Tensor& mask,
                                   std::optional<at::Generator> generator) {
  check_sequence(clip, mask, "prompt_encode");
  if (clip.size(1) == 0) throw LengthError("prompt_encode: empty clip");
  const auto m = mask.unsqueeze(1).to(clip.scalar_type());
  auto x = clip.transpose(1, 2) * m;
  for (const auto& conv : *convs_) {
    x = F::relu(conv->as<torch::nn::Conv1d>()->forward(x)) * m;
  }
  x = se_block_->forward(x, mask);
  auto pooled = masked_mean(x.transpose(1, 2), mask);

  ParaVec out;
  out.mu = mu_head_->forward(pooled);
  out.sigma = torch::exp(0.5 * logvar_head_->forward(pooled));
  if (is_training()) {
    auto eps = torch::randn(out.mu.sizes(), generator, out.mu.options());
    out.sample = out.mu + out.sigma * eps;
  } else {
    out.sample = out.mu;
  }
  return out;
}

SpeechDecoderImpl::SpeechDecoderImpl(const ModelConfig& c) : latent_dim_(c.latent_dim) {
  condition_ = register_module("condition", torch::nn::Linear(c.prompt_dim, c.latent_dim));
  input_ = register_module("input", torch::nn::Linear(c.latent_dim, c.hidden_dim));
  transformer_ = register_module(
      "transformer",
      TransformerStack(c.hidden_dim, c.attention_heads, c.ffn_dim, c.speech_decoder_layers));
  for (int64_t i = 0; i < c.speech_decoder_convs; ++i) {
    convs_->push_back(conv1d(c.hidden_dim, c.hidden_dim, 3, 1, 1));
  }
  register_module("convs", convs_);
  up1_ = register_module("up1", upsample2(c.hidden_dim));
  up2_ = register_module("up2", upsample2(c.hidden_dim));
  output_ = register_module("output", torch::nn::Linear(c.hidden_dim, c.mel_bands));
}

torch::Tensor SpeechDecoderImpl::forward(const torch::Tensor& q, const torch::Tensor& g,
                                         const torch::Tensor& mask) {
  check_sequence(q, mask, "speech_decode");
  if (q.dim() != 3 || q.size(2) != latent_dim_) {
    throw ShapeError("speech_decode: expected width " + std::to_string(latent_dim_) + ", got " +
                     std::to_string(q.size(-1)));
  }
  if (g.dim() != 2 || g.size(0) != q.size(0) ||
      g.size(1) != condition_->options.in_features()) {
    throw ShapeError("speech_decode: paralinguistic vector must be [B, D_g]");
  }
  auto x = q + condition_->forward(g).unsqueeze(1);
  x = transformer_->forward(add_positions(input_->forward(x)), mask).transpose(1, 2);
  for (const auto& conv : *convs_) x = torch::tanh(conv->as<torch::nn::Conv1d>()->forward(x));
  x = torch::tanh(up1_->forward(x));
  x = torch::tanh(up2_->forward(x));
  return output_->forward(x.transpose(1, 2));
}

PhonemeDecoderImpl::PhonemeDecoderImpl(const ModelConfig& c) : latent_dim_(c.latent_dim) {
  input_ = register_module("input", torch::nn::Linear(c.latent_dim, c.hidden_dim));
  transformer_ = register_module(
      "transformer",
      TransformerStack(c.hidden_dim, c.attention_heads, c.ffn_dim, c.phoneme_decoder_layers));
  up1_ = register_module("up1", upsample2(c.hidden_dim));
  up2_ = register_module("up2", upsample2(c.hidden_dim));
  output_ = register_module("output", torch::nn::Linear(c.hidden_dim, c.vocab_size));
}

torch::Tensor PhonemeDecoderImpl::forward(const torch::Tensor& q, const torch::Tensor& mask) {
  check_sequence(q, mask, "phoneme_decode");
  if (q.dim() != 3 || q.size(2) != latent_dim_) {
    throw ShapeError("phoneme_decode: expected width " + std::to_string(latent_dim_) + ", got " +
                     std::to_string(q.size(-1)));
  }
  auto x = transformer_->forward(add_positions(input_->forward(q)), mask).transpose(1, 2);
  x = torch::tanh(up1_->forward(x));
  x = torch::tanh(up2_->forward(x));
  return output_->forward(x.transpose(1, 2));
}

TranscoderImpl::TranscoderImpl(const ModelConfig& config, double init_tau) : config_(config) {
  speech_encoder = register_module("speech_encoder", SpeechEncoder(config));
  phoneme_encoder = register_module("phoneme_encoder", PhonemeEncoder(config));
  prompt_encoder = register_module("prompt_encoder", PromptEncoder(config));
  speech_decoder = register_module("speech_decoder", SpeechDecoder(config));
  phoneme_decoder = register_module("phoneme_decoder", PhonemeDecoder(config));
  log_tau = register_parameter("log_tau", torch::full({}, std::log(init_tau)));
  mel_mean = register_buffer("mel_mean", torch::zeros({config.mel_bands}));
  mel_std = register_buffer("mel_std", torch::ones({config.mel_bands}));
}

void TranscoderImpl::fit_mel_statistics(const torch::Tensor& mel, const torch::Tensor& mask) {
  torch::NoGradGuard no_grad;
  auto frames = mel.reshape({-1, mel.size(-1)}).index({mask.reshape({-1})});
  if (frames.size(0) < 2) throw DegenerateInputError("mel statistics need at least two frames");
  mel_mean.copy_(frames.mean(0));
  mel_std.copy_(frames.std(0, /*unbiased=*/false).clamp_min(1e-3));
}

torch::Tensor TranscoderImpl::standardize(const torch::Tensor& mel) const {
  return (mel - mel_mean) / mel_std;
}

LatentSeq TranscoderImpl::speech_encode(const torch::Tensor& mel, const torch::Tensor& mask) {
  return speech_encoder->forward(standardize(mel), mask);
}

LatentSeq TranscoderImpl::phoneme_encode(const torch::Tensor& ids, const torch::Tensor& mask) {
  return phoneme_encoder->forward(ids, mask);
}

ParaVec TranscoderImpl::prompt_encode(const torch::Tensor& clip, const torch::Tensor& mask,
                                      std::optional<at::Generator> generator) {
  return prompt_encoder->forward(standardize(clip), mask, std::move(generator));
}

torch::Tensor TranscoderImpl::speech_decode(const torch::Tensor& q, const torch::Tensor& g,
                                            const torch::Tensor& mask) {
  return speech_decoder->forward(q, g, mask) * mel_std + mel_mean;
}

torch::Tensor TranscoderImpl::phoneme_decode(const torch::Tensor& q, const torch::Tensor& mask) {
  return phoneme_decoder->forward(q, mask);
}

torch::Tensor TranscoderImpl::tau() const {
  return torch::exp(log_tau.clamp(0.0, std::log(100.0)));
}

}  // namespace vqctap
