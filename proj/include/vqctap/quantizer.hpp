#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "vqctap/transcoder.hpp"

namespace vqctap {

/// Single codebook updated by exponential moving averages rather than by a
/// codebook loss. All tensors share one dtype (float32 for the model, float64
/// is supported for exact checks).
struct Codebook {
  torch::Tensor entries;     // [K, d]
  torch::Tensor ema_counts;  // [K]
  torch::Tensor ema_sums;    // [K, d]
  double decay = 0.99;
  double epsilon = 1e-5;
  bool initialized = false;

  /// Zeroed, uninitialized codebook of K entries.
  static Codebook empty(int64_t size, int64_t dim, double decay = 0.99, double epsilon = 1e-5,
                        torch::Dtype dtype = torch::kFloat32);

  /// Codebook with the given entries; every entry starts with an EMA count of
  /// one and a sum equal to itself.
  static Codebook from_entries(const torch::Tensor& entries, double decay = 0.99,
                               double epsilon = 1e-5);

  int64_t size() const { return entries.size(0); }
  int64_t dim() const { return entries.size(1); }
};

/// Data-dependent initialization: K valid frames of `s` drawn without
/// replacement. When fewer than K frames are valid, all of them are used and
/// the remainder are copies of randomly chosen valid frames perturbed by
/// N(0, 0.01^2) noise.
void initialize_from(Codebook& codebook, const LatentSeq& s, at::Generator generator);

struct QuantizedSeq {
  torch::Tensor values;      // [B, T', d]; forward value is the codebook row, gradient is identity to s
  torch::Tensor indices;     // [B, T'] int64 in [0, K)
  torch::Tensor mask;        // [B, T'] bool
  torch::Tensor commitment;  // scalar: mean over valid frames of |s_t - sg[e]|^2
};

/// Nearest entry by squared Euclidean distance, lowest index on ties.
/// Throws ShapeError on a width mismatch and DegenerateInputError when the
/// mask selects no frame.
QuantizedSeq quantize(const LatentSeq& s, const Codebook& codebook);

/// Nearest-entry indices only, for flat [N, d] rows.
torch::Tensor nearest_indices(const torch::Tensor& rows, const Codebook& codebook);

/// counts <- decay * counts + (1 - decay) * assignment counts
/// sums   <- decay * sums   + (1 - decay) * sum of assigned frames
/// entries <- sums / Laplace-smoothed counts. Masked frames are ignored.
/// Throws ConsistencyError when q does not line up with s.
void ema_update(Codebook& codebook, const LatentSeq& s, const QuantizedSeq& q);

}  // namespace vqctap
