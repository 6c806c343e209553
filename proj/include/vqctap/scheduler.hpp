#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vqctap/checkpoint.hpp"
#include "vqctap/config.hpp"
#include "vqctap/corpus.hpp"
#include "vqctap/quantizer.hpp"
#include "vqctap/transcoder.hpp"

namespace vqctap {

/// 0 up to `start`, a linear ramp to `upper` at `end`, `upper` afterwards.
/// Throws ParameterError unless start < end.
double loss_weight(int64_t step, int64_t start, int64_t end, double upper);

struct Example {
  std::string id;
  torch::Tensor mel;              // [T, 40]
  std::vector<int64_t> frame_ids;  // T ids, empty for speech-only data
  std::string speaker;
};

struct Dataset {
  std::vector<Example> items;
};

/// Loads every manifest entry as a mel spectrogram. With `paired`, phonemes
/// and durations are required and the regulated length must equal the mel
/// frame count (InputError otherwise).
Dataset load_dataset(const std::filesystem::path& manifest, const ModelConfig& model, bool paired);
Dataset dataset_from_corpus(const SyntheticCorpus& corpus, bool paired);

/// Everything below is padded in time to a multiple of 4; masks are bool.
struct TrainBatch {
  torch::Tensor mel;          // [B, T, 40]
  torch::Tensor mask;         // [B, T]
  torch::Tensor ids;          // [B, T] int64, pad id on padding
  torch::Tensor prompt;       // [B, Tp, 40], crop of the same utterance
  torch::Tensor prompt_mask;  // [B, Tp]
  torch::Tensor random_mel;   // [B, Tr, 40], undefined when no unpaired data
  torch::Tensor random_mask;  // [B, Tr]

  bool has_random() const { return random_mel.defined(); }
};

/// Pads and stacks examples. `prompt_starts[i]` and `prompt_len` select each
/// row's prompt window; `random` may be empty.
TrainBatch collate(const std::vector<const Example*>& paired,
                   const std::vector<const Example*>& random, int64_t prompt_window,
                   const std::vector<int64_t>& prompt_starts, int64_t pad_id);

/// Valid-frame-masked mean squared error over all bands.
torch::Tensor masked_mse(const torch::Tensor& prediction, const torch::Tensor& target,
                         const torch::Tensor& mask);

/// Cross-entropy over valid frames.
torch::Tensor masked_cross_entropy(const torch::Tensor& logits, const torch::Tensor& ids,
                                   const torch::Tensor& mask);

struct LossRecord {
  int64_t step = 0;
  double total = 0.0;
  double mse = 0.0;
  double vq = 0.0;
  double classify = 0.0;
  double contrastive = 0.0;
  double kl = 0.0;
  double consistency = 0.0;
  double beat_kl = 0.0;
  double beat_consistency = 0.0;
};

/// Sum of base-weighted terms plus the two ramped terms, in double.
double weighted_total(const LossRecord& record, const ScheduleConfig& schedule);

std::string loss_csv_header();
std::string loss_csv_row(const LossRecord& record);
std::vector<LossRecord> read_loss_log(const std::filesystem::path& path);

class LossLog {
 public:
  explicit LossLog(const std::filesystem::path& path);
  void write(const LossRecord& record);

 private:
  std::ofstream out_;
};

/// Transcoder and codebook restored from a checkpoint for inference.
struct TrainedModel {
  Config config;
  Transcoder net{nullptr};
  Codebook codebook;
  double train_reconstruction = 0.0;
};

/// Throws FormatError when an architecture key of `expected` differs from the
/// checkpoint's (the message names the key and both values) or when a block
/// is missing or misshapen.
void check_model_compatible(const Checkpoint& checkpoint, const ModelConfig& expected);
Config checkpoint_config(const Checkpoint& checkpoint);
TrainedModel load_model(const Checkpoint& checkpoint);
TrainedModel load_model(const Checkpoint& checkpoint, const Config& expected);

/// Owns the full training state: networks, codebook, Adam moments, step and
/// both random streams (host mt19937_64 for batching, torch generator for
/// reparameterization and codebook initialization).
class Trainer {
 public:
  Trainer(const Config& config, uint64_t seed);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const Config& config() const { return config_; }
  int64_t step() const { return step_; }
  Transcoder& model() { return model_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }
  torch::optim::Adam& optimizer() { return *optimizer_; }

  /// Draws the next batch: shuffled passes over `paired` when it exceeds the
  /// batch size, the whole set otherwise; random speech rows are drawn
  /// uniformly from `unpaired` when it is non-empty.
  TrainBatch next_batch(const Dataset& paired, const Dataset* unpaired);

  /// One combined optimizer update on
  ///   w_mse L_mse + w_vq L_vq + w_cls L_classify + w_con L_contrastive
  ///   + beat_kl L_kl + beat_cons L_consistency
  /// followed by one EMA codebook update. Ramped terms only enter the graph
  /// once their weight is positive. Throws BatchError when consistency is
  /// active without random speech and DivergenceError on a non-finite loss.
  LossRecord train_step(const TrainBatch& batch);

  /// Mean L_mse over the most recent steps (up to 10).
  double recent_reconstruction() const;

  Checkpoint to_checkpoint() const;
  /// Restores a state saved by to_checkpoint; `config` must match the
  /// checkpoint's architecture.
  static std::unique_ptr<Trainer> from_checkpoint(const Checkpoint& checkpoint,
                                                  const Config& config);

 private:
  Config config_;
  Transcoder model_{nullptr};
  Codebook codebook_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  int64_t step_ = 0;
  std::mt19937_64 rng_;
  at::Generator generator_;
  std::vector<int64_t> order_;
  std::size_t cursor_ = 0;
  std::deque<double> recent_mse_;
};

}  // namespace vqctap
