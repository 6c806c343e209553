#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vqctap/checkpoint.hpp"
#include "vqctap/config.hpp"
#include "vqctap/layers.hpp"
#include "vqctap/scheduler.hpp"
#include "vqctap/transcoder.hpp"

namespace vqctap {

/// Linear beta schedule. Vectors are indexed by t - 1 for t in 1..T.
struct NoiseSchedule {
  int64_t steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  /// sqrt((1 - abar_{t-1}) / (1 - abar_t) * (1 - alpha_t)) with abar_0 = 1,
  /// so sigma(1) = 0. Throws IndexError outside 1..T.
  double sigma(int64_t t) const;
};

/// Throws ParameterError unless 0 < beta_min <= beta_max < 1 and steps >= 1.
NoiseSchedule build_noise_schedule(int64_t steps, double beta_min, double beta_max);

/// sqrt(abar_t) s0 + sqrt(1 - abar_t) eps; `t` is one step for the whole
/// batch. Throws IndexError outside 1..T and ShapeError when eps does not
/// match s0.
LatentSeq q_sample(const LatentSeq& s0, int64_t t, const torch::Tensor& eps, const NoiseSchedule& ns);

/// Per-row steps, t is [B] int64.
torch::Tensor q_sample(const torch::Tensor& s0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& ns);

/// eps_theta(x_t, t, P): x_t [B, T', d], t [B] int64, conditioning P.
using EpsPredictor =
    std::function<torch::Tensor(const torch::Tensor& x_t, const torch::Tensor& t, const LatentSeq& p)>;

/// Masked mean of |eps - eps_theta(q_sample(s0, t, eps), t, p)|^2 over valid
/// frames and dimensions. Throws ShapeError when s0 and p are not aligned.
torch::Tensor diffusion_loss(const LatentSeq& s0, const LatentSeq& p, const torch::Tensor& t,
                             const torch::Tensor& eps, const NoiseSchedule& ns,
                             const EpsPredictor& predictor);

/// Ancestral sampling from S_T ~ N(0, I) drawn with `seed`:
///   S_{t-1} = 1/sqrt(alpha_t) (S_t - (1 - alpha_t)/sqrt(1 - abar_t) eps_theta) + sigma_t psi
/// with psi = 0 at t = 1. Throws StateError when `predictor` is empty.
LatentSeq connector_sample(const LatentSeq& p, const NoiseSchedule& ns, uint64_t seed,
                           const EpsPredictor& predictor);

/// Same loop from a given S_T; noise for t > 1 is still drawn from `seed`.
LatentSeq connector_sample_from(const torch::Tensor& s_T, const LatentSeq& p,
                                const NoiseSchedule& ns, uint64_t seed,
                                const EpsPredictor& predictor);

/// Non-causal dilated residual stack. The phoneme conditioner output is added
/// as a bias to every dilated convolution, the step embedding to every layer
/// input, and all skip outputs are summed.
class DenoiserNetImpl : public torch::nn::Module {
 public:
  DenoiserNetImpl(const ConnectorConfig& config, const ModelConfig& model);
  torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& t, const LatentSeq& p);

 private:
  int64_t layers_;
  int64_t channels_;
  int64_t step_width_;
  torch::nn::Conv1d input_{nullptr};
  torch::nn::Linear step1_{nullptr};
  torch::nn::Linear step2_{nullptr};
  torch::nn::Linear cond_input_{nullptr};
  TransformerStack conditioner_{nullptr};
  torch::nn::ModuleList step_proj_;
  torch::nn::ModuleList dilated_;
  torch::nn::ModuleList cond_proj_;
  torch::nn::ModuleList output_proj_;
  torch::nn::Conv1d skip_out_{nullptr};
  torch::nn::Conv1d final_{nullptr};
};
TORCH_MODULE(DenoiserNet);

/// Frozen-encoder outputs for one utterance, valid compressed frames only.
struct EncodedUtterance {
  std::string id;
  torch::Tensor s0;  // [T', d] pre-quantization speech embedding
  torch::Tensor p;   // [T', d] phoneme embedding
};

/// Runs the frozen speech and phoneme encoders over every paired example.
std::vector<EncodedUtterance> encode_for_connector(const Dataset& dataset, Transcoder& net);

/// Zero-pads to the longest row; both sequences share one mask.
std::pair<LatentSeq, LatentSeq> collate_encoded(const std::vector<const EncodedUtterance*>& rows);

/// Denoiser, schedule and optimizer state of the semantic connector.
class Connector {
 public:
  Connector(const Config& config, uint64_t seed);
  Connector(const Connector&) = delete;
  Connector& operator=(const Connector&) = delete;

  const NoiseSchedule& schedule() const { return schedule_; }
  DenoiserNet& net() { return net_; }
  int64_t steps_trained() const { return steps_trained_; }

  /// One Adam update on diffusion_loss with t ~ U{1..T} per row.
  double train_step(const LatentSeq& s0, const LatentSeq& p);

  /// Shuffled passes over `data` in batches of connector.batch_size (the
  /// whole set when it is smaller).
  std::pair<LatentSeq, LatentSeq> next_batch(const std::vector<EncodedUtterance>& data);

  /// Mean diffusion loss over every t in 1..T with noise fixed by `seed`;
  /// does not touch the optimizer.
  double evaluate(const LatentSeq& s0, const LatentSeq& p, uint64_t seed);

  EpsPredictor predictor();

  /// Throws StateError when the denoiser has never been trained.
  LatentSeq sample(const LatentSeq& p, uint64_t seed);

  /// Adds `connector/*` blocks and manifest keys.
  void store(Checkpoint& checkpoint) const;
  /// Throws StateError when the checkpoint has no connector.
  static std::unique_ptr<Connector> restore(const Checkpoint& checkpoint, const Config& config);

 private:
  Config config_;
  NoiseSchedule schedule_;
  DenoiserNet net_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
  at::Generator generator_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int64_t steps_trained_ = 0;
};

}  // namespace vqctap
