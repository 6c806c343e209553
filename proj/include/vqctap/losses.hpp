#pragma once

#include <torch/torch.h>

#include "vqctap/transcoder.hpp"

namespace vqctap {

/// max(0, KL(N(mu, sigma^2) || N(0, I)) - delta). The closed-form KL is summed
/// over dimensions per sample and averaged over the batch before the margin is
/// applied. mu and sigma are [D] or [B, D]. Throws DomainError unless
/// sigma > 0 everywhere.
torch::Tensor kl_margin_loss(const torch::Tensor& mu, const torch::Tensor& sigma, double delta);

/// (1/n^2) * sum((Ga^T Ga - Gb^T Gb)^2) with n = D_g, for [B, D_g] inputs.
/// Throws ShapeError on a width or batch mismatch.
torch::Tensor gram_consistency_loss(const torch::Tensor& ga, const torch::Tensor& gb);

/// Valid frames of both sequences flattened to [N, d].
struct FlatPair {
  torch::Tensor s;
  torch::Tensor p;
};

/// Throws ShapeError on mismatched shapes, ConsistencyError when the masks
/// differ and DegenerateInputError when fewer than two frames are valid.
FlatPair flatten_valid(const LatentSeq& s, const LatentSeq& p);

/// tau * S P^T over the flattened valid frames, [N, N].
torch::Tensor similarity_matrix(const LatentSeq& s, const LatentSeq& p, const torch::Tensor& tau);

/// Symmetric cross-entropy toward the diagonal of the similarity matrix:
/// 0.5 * (mean row CE + mean column CE).
torch::Tensor contrastive_loss(const LatentSeq& s, const LatentSeq& p, const torch::Tensor& tau);
torch::Tensor contrastive_loss(const LatentSeq& s, const LatentSeq& p, double tau);

struct RetrievalAccuracy {
  double speech_to_phoneme = 0.0;  // rows whose argmax is the diagonal
  double phoneme_to_speech = 0.0;  // columns whose argmax is the diagonal
  int64_t frames = 0;
};

/// Frame-level retrieval over S P^T (the temperature does not change argmax).
RetrievalAccuracy retrieval_accuracy(const LatentSeq& s, const LatentSeq& p);

}  // namespace vqctap
