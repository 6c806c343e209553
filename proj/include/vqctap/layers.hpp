#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace vqctap {

/// Sinusoidal position table [length, dim] in the given dtype.
torch::Tensor sinusoidal_positions(int64_t length, int64_t dim, torch::TensorOptions options);

/// Sinusoidal embedding of (possibly fractional) positions, [N] -> [N, dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor& positions, int64_t dim);

/// [B, T] bool -> [B, T / factor]: a block is valid iff any of its frames is.
torch::Tensor downsample_mask(const torch::Tensor& mask, int64_t factor);

/// [B, T] bool -> [B, T * factor].
torch::Tensor upsample_mask(const torch::Tensor& mask, int64_t factor);

/// Mean over valid time steps: x [B, T, C], mask [B, T] -> [B, C].
torch::Tensor masked_mean(const torch::Tensor& x, const torch::Tensor& mask);

class SelfAttentionImpl : public torch::nn::Module {
 public:
  SelfAttentionImpl(int64_t dim, int64_t heads);

  // x [B, T, C]; mask [B, T] bool, keys outside the mask are ignored.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask);

 private:
  int64_t heads_;
  torch::nn::Linear qkv_{nullptr};
  torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(SelfAttention);

// Pre-norm transformer layer.
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int64_t dim, int64_t heads, int64_t ffn_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask);

 private:
  torch::nn::LayerNorm norm1_{nullptr};
  torch::nn::LayerNorm norm2_{nullptr};
  SelfAttention attention_{nullptr};
  torch::nn::Linear ff1_{nullptr};
  torch::nn::Linear ff2_{nullptr};
};
TORCH_MODULE(TransformerBlock);

// Stack of blocks followed by a final LayerNorm. Zero layers is the identity
// plus the final norm.
class TransformerStackImpl : public torch::nn::Module {
 public:
  TransformerStackImpl(int64_t dim, int64_t heads, int64_t ffn_dim, int64_t layers);
  torch::Tensor forward(torch::Tensor x, const torch::Tensor& mask);

 private:
  torch::nn::ModuleList blocks_;
  torch::nn::LayerNorm final_norm_{nullptr};
};
TORCH_MODULE(TransformerStack);

}  // namespace vqctap
