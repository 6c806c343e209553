#pragma once

#include <torch/torch.h>

#include <optional>

#include "vqctap/config.hpp"
#include "vqctap/layers.hpp"

namespace vqctap {

/// Length-compressed frame-level embedding sequence.
struct LatentSeq {
  torch::Tensor values;  // [B, T / 4, d], row-wise layer-normalized at encoder output
  torch::Tensor mask;    // [B, T / 4] bool
};

/// Global paralinguistic vector from the prompt encoder.
struct ParaVec {
  torch::Tensor mu;      // [B, D_g]
  torch::Tensor sigma;   // [B, D_g], exp(0.5 * logvar) > 0
  torch::Tensor sample;  // mu + sigma * eps in training, mu in eval
};

inline constexpr int64_t kCompression = 4;

// 2 strided convolutions (4x compression) with GELU, transformer layers, then
// a linear projection to the joint space and a parameter-free LayerNorm.
class SpeechEncoderImpl : public torch::nn::Module {
 public:
  explicit SpeechEncoderImpl(const ModelConfig& config);
  // mel [B, T, 40], mask [B, T]; T must be a multiple of 4.
  LatentSeq forward(const torch::Tensor& mel, const torch::Tensor& mask);

 private:
  int64_t latent_dim_;
  torch::nn::Conv1d conv1_{nullptr};
  torch::nn::Conv1d conv2_{nullptr};
  TransformerStack transformer_{nullptr};
  torch::nn::Linear project_{nullptr};
};
TORCH_MODULE(SpeechEncoder);

// Phoneme embedding table, one kernel-4 stride-4 convolution with ReLU,
// transformer layers, linear projection and parameter-free LayerNorm.
class PhonemeEncoderImpl : public torch::nn::Module {
 public:
  explicit PhonemeEncoderImpl(const ModelConfig& config);
  // ids [B, T] int64 (frame-aligned), mask [B, T]; T must be a multiple of 4.
  LatentSeq forward(const torch::Tensor& ids, const torch::Tensor& mask);

 private:
  int64_t latent_dim_;
  torch::nn::Embedding embedding_{nullptr};
  torch::nn::Conv1d conv_{nullptr};
  TransformerStack transformer_{nullptr};
  torch::nn::Linear project_{nullptr};
};
TORCH_MODULE(PhonemeEncoder);

// Squeeze-and-excitation residual block over [B, C, T].
class SeResBlockImpl : public torch::nn::Module {
 public:
  explicit SeResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask);

 private:
  torch::nn::Conv1d conv1_{nullptr};
  torch::nn::Conv1d conv2_{nullptr};
  torch::nn::Linear squeeze_{nullptr};
  torch::nn::Linear excite_{nullptr};
};
TORCH_MODULE(SeResBlock);

// VAE prompt encoder: convolution stack, SE-ResNet block, masked temporal
// pooling, then mean and log-variance heads.
class PromptEncoderImpl : public torch::nn::Module {
 public:
  explicit PromptEncoderImpl(const ModelConfig& config);
  // clip [B, T, 40], mask [B, T]. `generator` drives the reparameterized
  // draw in training mode.
  ParaVec forward(const torch::Tensor& clip, const torch::Tensor& mask,
                  std::optional<at::Generator> generator = std::nullopt);

 private:
  torch::nn::ModuleList convs_;
  SeResBlock se_block_{nullptr};
  torch::nn::Linear mu_head_{nullptr};
  torch::nn::Linear logvar_head_{nullptr};
};
TORCH_MODULE(PromptEncoder);

// Adds the projected paralinguistic vector to every input step, then
// transformer layers, tanh convolutions, two stride-2 transposed convolutions
// and a linear layer to 40 mel bands.
class SpeechDecoderImpl : public torch::nn::Module {
 public:
  explicit SpeechDecoderImpl(const ModelConfig& config);
  // q [B, T', d], g [B, D_g], mask [B, T'] -> mel [B, 4 T', 40]
  torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& g, const torch::Tensor& mask);

 private:
  int64_t latent_dim_;
  torch::nn::Linear condition_{nullptr};
  torch::nn::Linear input_{nullptr};
  TransformerStack transformer_{nullptr};
  torch::nn::ModuleList convs_;
  torch::nn::ConvTranspose1d up1_{nullptr};
  torch::nn::ConvTranspose1d up2_{nullptr};
  torch::nn::Linear output_{nullptr};
};
TORCH_MODULE(SpeechDecoder);

class PhonemeDecoderImpl : public torch::nn::Module {
 public:
  explicit PhonemeDecoderImpl(const ModelConfig& config);
  // q [B, T', d], mask [B, T'] -> logits [B, 4 T', V]
  torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& mask);

 private:
  int64_t latent_dim_;
  torch::nn::Linear input_{nullptr};
  TransformerStack transformer_{nullptr};
  torch::nn::ConvTranspose1d up1_{nullptr};
  torch::nn::ConvTranspose1d up2_{nullptr};
  torch::nn::Linear output_{nullptr};
};
TORCH_MODULE(PhonemeDecoder);

/// The five networks of the cross-modal aligned sequence transcoder plus the
/// learnable contrastive temperature (stored as a log). Mel inputs are
/// standardized per band with the `mel_mean` / `mel_std` buffers and the
/// speech decoder output is mapped back, so callers always see log-mel.
class TranscoderImpl : public torch::nn::Module {
 public:
  explicit TranscoderImpl(const ModelConfig& config, double init_tau = 1.0 / 0.07);

  const ModelConfig& config() const { return config_; }

  LatentSeq speech_encode(const torch::Tensor& mel, const torch::Tensor& mask);
  LatentSeq phoneme_encode(const torch::Tensor& ids, const torch::Tensor& mask);
  ParaVec prompt_encode(const torch::Tensor& clip, const torch::Tensor& mask,
                        std::optional<at::Generator> generator = std::nullopt);
  torch::Tensor speech_decode(const torch::Tensor& q, const torch::Tensor& g,
                              const torch::Tensor& mask);
  torch::Tensor phoneme_decode(const torch::Tensor& q, const torch::Tensor& mask);

  /// exp(log_tau) clamped to [1, 100].
  torch::Tensor tau() const;

  /// Sets the per-band standardization from the valid frames of a
  /// [B, T, 40] batch (std floored at 1e-3).
  void fit_mel_statistics(const torch::Tensor& mel, const torch::Tensor& mask);

  SpeechEncoder speech_encoder{nullptr};
  PhonemeEncoder phoneme_encoder{nullptr};
  PromptEncoder prompt_encoder{nullptr};
  SpeechDecoder speech_decoder{nullptr};
  PhonemeDecoder phoneme_decoder{nullptr};
  torch::Tensor log_tau;
  torch::Tensor mel_mean;  // [40] buffer
  torch::Tensor mel_std;   // [40] buffer

 private:
  torch::Tensor standardize(const torch::Tensor& mel) const;

  ModelConfig config_;
};
TORCH_MODULE(Transcoder);

}  // namespace vqctap
