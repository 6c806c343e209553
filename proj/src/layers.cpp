#include "vqctap/layers.hpp"

#include <cmath>

namespace vqctap {

namespace F = torch::nn::functional;

torch::Tensor sinusoidal_positions(int64_t length, int64_t dim, torch::TensorOptions options) {
  auto positions = torch::arange(length, torch::TensorOptions().dtype(torch::kFloat64));
  return sinusoidal_embedding(positions, dim).to(options.dtype());
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& positions, int64_t dim) {
  const int64_t half = dim / 2;
  auto pos = positions.to(torch::kFloat64).unsqueeze(1);
  auto freqs = torch::exp(torch::arange(half, torch::kFloat64) *
                          (-std::log(10000.0) / std::max<int64_t>(half - 1, 1)));
  auto angles = pos * freqs.unsqueeze(0);
  auto table = torch::cat({torch::sin(angles), torch::cos(angles)}, 1);
  if (table.size(1) < dim) table = F::pad(table, F::PadFuncOptions({0, dim - table.size(1)}));
  return table.to(positions.is_floating_point() ? positions.scalar_type() : torch::kFloat32);
}

torch::Tensor downsample_mask(const torch::Tensor& mask, int64_t factor) {
  return mask.view({mask.size(0), mask.size(1) / factor, factor}).any(-1);
}

torch::Tensor upsample_mask(const torch::Tensor& mask, int64_t factor) {
  return mask.unsqueeze(-1).expand({mask.size(0), mask.size(1), factor}).reshape(
      {mask.size(0), mask.size(1) * factor});
}

torch::Tensor masked_mean(const torch::Tensor& x, const torch::Tensor& mask) {
  auto weights = mask.to(x.scalar_type()).unsqueeze(-1);
  auto total = (x * weights).sum(1);
  auto count = weights.sum(1).clamp_min(1.0);
  return total / count;
}

SelfAttentionImpl::SelfAttentionImpl(int64_t dim, int64_t heads) : heads_(heads) {
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  out_ = register_module("out", torch::nn::Linear(dim, dim));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  const int64_t batch = x.size(0);
  const int64_t time = x.size(1);
  const int64_t dim = x.size(2);
  const int64_t head_dim = dim / heads_;

  auto qkv = qkv_->forward(x).view({batch, time, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0];
  auto k = qkv[1];
  auto v = qkv[2];
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
  // Finite fill value keeps fully padded rows NaN-free.
  scores = scores.masked_fill(mask.logical_not().view({batch, 1, 1, time}), -1e9);
  auto weights = torch::softmax(scores, -1);
  auto context = torch::matmul(weights, v).permute({0, 2, 1, 3}).reshape({batch, time, dim});
  return out_->forward(context);
}

TransformerBlockImpl::TransformerBlockImpl(int64_t dim, int64_t heads, int64_t ffn_dim) {
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attention_ = register_module("attention", SelfAttention(dim, heads));
  ff1_ = register_module("ff1", torch::nn::Linear(dim, ffn_dim));
  ff2_ = register_module("ff2", torch::nn::Linear(ffn_dim, dim));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  auto h = x + attention_->forward(norm1_->forward(x), mask);
  return h + ff2_->forward(F::gelu(ff1_->forward(norm2_->forward(h))));
}

TransformerStackImpl::TransformerStackImpl(int64_t dim, int64_t heads, int64_t ffn_dim,
                                           int64_t layers) {
  for (int64_t i = 0; i < layers; ++i) blocks_->push_back(TransformerBlock(dim, heads, ffn_dim));
  register_module("blocks", blocks_);
  final_norm_ = register_module("final_norm",
                                torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

torch::Tensor TransformerStackImpl::forward(torch::Tensor x, const torch::Tensor& mask) {
  for (const auto& block : *blocks_) x = block->as<TransformerBlock>()->forward(x, mask);
  return final_norm_->forward(x);
}

}  // namespace vqctap
