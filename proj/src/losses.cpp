#include "vqctap/losses.hpp"

#include <string>

#include "vqctap/errors.hpp"

namespace vqctap {

namespace F = torch::nn::functional;

torch::Tensor kl_margin_loss(const torch::Tensor& mu, const torch::Tensor& sigma, double delta) {
  if (mu.sizes() != sigma.sizes() || mu.dim() < 1 || mu.dim() > 2) {
    throw ShapeError("kl_margin_loss: mu and sigma must share a [D] or [B, D] shape");
  }
  if (delta < 0.0) throw ParameterError("kl_margin_loss: delta must be nonnegative");
  if (!(sigma > 0).all().item<bool>()) {
    throw DomainError("kl_margin_loss: sigma must be positive");
  }
  auto var = sigma.pow(2);
  auto per_dim = 0.5 * (mu.pow(2) + var - 1.0 - torch::log(var));
  auto kl = mu.dim() == 1 ? per_dim.sum() : per_dim.sum(1).mean();
  return torch::clamp_min(kl - delta, 0.0);
}

torch::Tensor gram_consistency_loss(const torch::Tensor& ga, const torch::Tensor& gb) {
  if (ga.dim() != 2 || gb.dim() != 2 || ga.size(1) != gb.size(1)) {
    throw ShapeError("gram_consistency_loss: width mismatch " + std::to_string(ga.size(-1)) +
                     " vs " + std::to_string(gb.size(-1)));
  }
  if (ga.size(0) != gb.size(0)) {
    throw ShapeError("gram_consistency_loss: batch size mismatch");
  }
  const double n = static_cast<double>(ga.size(1));
  auto diff = torch::matmul(ga.t(), ga) - torch::matmul(gb.t(), gb);
  return diff.pow(2).sum() / (n * n);
}

FlatPair flatten_valid(const LatentSeq& s, const LatentSeq& p) {
  if (s.values.dim() != 3 || s.values.sizes() != p.values.sizes()) {
    throw ShapeError("contrastive_loss: speech and phoneme sequences must share [B, T', d]");
  }
  if (s.mask.sizes() != p.mask.sizes() || !torch::equal(s.mask, p.mask)) {
    throw ConsistencyError("contrastive_loss: speech and phoneme masks differ");
  }
  const int64_t d = s.values.size(2);
  auto keep = s.mask.reshape({-1});
  FlatPair flat{s.values.reshape({-1, d}).index({keep}), p.values.reshape({-1, d}).index({keep})};
  if (flat.s.size(0) < 2) {
    throw DegenerateInputError("contrastive_loss: need at least two valid frames");
  }
  return flat;
}

torch::Tensor similarity_matrix(const LatentSeq& s, const LatentSeq& p, const torch::Tensor& tau) {
  auto flat = flatten_valid(s, p);
  return tau * torch::matmul(flat.s, flat.p.t());
}

torch::Tensor contrastive_loss(const LatentSeq& s, const LatentSeq& p, const torch::Tensor& tau) {
  auto logits = similarity_matrix(s, p, tau);
  auto target = torch::arange(logits.size(0), torch::kInt64);
  auto rows = F::cross_entropy(logits, target);
  auto cols = F::cross_entropy(logits.t(), target);
  return 0.5 * (rows + cols);
}

torch::Tensor contrastive_loss(const LatentSeq& s, const LatentSeq& p, double tau) {
  return contrastive_loss(s, p, torch::full({}, tau, s.values.options().requires_grad(false)));
}

RetrievalAccuracy retrieval_accuracy(const LatentSeq& s, const LatentSeq& p) {
  torch::NoGradGuard no_grad;
  auto flat = flatten_valid(s, p);
  auto sim = torch::matmul(flat.s, flat.p.t());
  const int64_t n = sim.size(0);
  auto diagonal = torch::arange(n, torch::kInt64);
  RetrievalAccuracy acc;
  acc.frames = n;
  acc.speech_to_phoneme = sim.argmax(1).eq(diagonal).sum().item<double>() / static_cast<double>(n);
  acc.phoneme_to_speech = sim.argmax(0).eq(diagonal).sum().item<double>() / static_cast<double>(n);
  return acc;
}

}  // namespace vqctap
