#include "vqctap/scheduler.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "vqctap/audio.hpp"
#include "vqctap/errors.hpp"
#include "vqctap/losses.hpp"
#include "vqctap/phonemes.hpp"

namespace vqctap {

namespace F = torch::nn::functional;

namespace {

int64_t round_up(int64_t n, int64_t m) { return (n + m - 1) / m * m; }

Example make_example(const std::string& id, const Waveform& wave, const PhonemeSeq& phonemes,
                     const DurationSeq& durations, const std::string& speaker,
                     const PhonemeVocab& vocab, bool paired) {
  Example ex;
  ex.id = id;
  ex.speaker = speaker;
  ex.mel = mel_spectrogram(wave).values;
  if (paired) {
    if (phonemes.ids.empty()) throw InputError("utterance " + id + " has no phonemes");
    validate(phonemes, vocab);
    ex.frame_ids = length_regulate(phonemes, durations).ids;
    if (static_cast<int64_t>(ex.frame_ids.size()) != ex.mel.size(0)) {
      throw InputError("utterance " + id + ": durations cover " +
                       std::to_string(ex.frame_ids.size()) + " frames but the audio has " +
                       std::to_string(ex.mel.size(0)));
    }
  }
  return ex;
}

torch::Tensor bytes_tensor(const std::string& text) {
  auto t = torch::empty({static_cast<int64_t>(text.size())}, torch::kUInt8);
  std::memcpy(t.data_ptr(), text.data(), text.size());
  return t;
}

std::string tensor_bytes(const torch::Tensor& t) {
  auto c = t.contiguous();
  return std::string(static_cast<const char*>(c.data_ptr()), static_cast<std::size_t>(c.nbytes()));
}

}  // namespace

double loss_weight(int64_t step, int64_t start, int64_t end, double upper) {
  if (start >= end) {
    throw ParameterError("loss_weight: start (" + std::to_string(start) + ") must be below end (" +
                         std::to_string(end) + ")");
  }
  if (step <= start) return 0.0;
  if (step >= end) return upper;
  return upper * static_cast<double>(step - start) / static_cast<double>(end - start);
}

Dataset load_dataset(const std::filesystem::path& manifest, const ModelConfig& model, bool paired) {
  const auto vocab = PhonemeVocab::from(model);
  Dataset ds;
  for (const auto& entry : read_manifest(manifest)) {
    ds.items.push_back(make_example(entry.utt_id, read_wav(entry.wav_path), entry.phonemes,
                                    entry.durations, entry.speaker, vocab, paired));
  }
  return ds;
}

Dataset dataset_from_corpus(const SyntheticCorpus& corpus, bool paired) {
  Dataset ds;
  for (const auto& u : corpus.utterances) {
    ds.items.push_back(make_example(u.id, u.wave, u.phonemes, u.durations,
                                    std::to_string(u.speaker), PhonemeVocab{}, paired));
  }
  return ds;
}

TrainBatch collate(const std::vector<const Example*>& paired,
                   const std::vector<const Example*>& random, int64_t prompt_window,
                   const std::vector<int64_t>& prompt_starts, int64_t pad_id) {
  if (paired.empty()) throw BatchError("collate: empty batch");
  if (prompt_starts.size() != paired.size()) throw BatchError("collate: one prompt start per row");
  if (!random.empty() && random.size() != paired.size()) {
    throw BatchError("collate: random speech must have one row per paired row");
  }
  const auto batch = static_cast<int64_t>(paired.size());
  const int64_t bands = paired.front()->mel.size(1);

  int64_t longest = 0;
  int64_t longest_prompt = 0;
  for (std::size_t i = 0; i < paired.size(); ++i) {
    const int64_t t = paired[i]->mel.size(0);
    if (static_cast<int64_t>(paired[i]->frame_ids.size()) != t) {
      throw BatchError("collate: utterance " + paired[i]->id + " lacks frame-aligned phonemes");
    }
    longest = std::max(longest, t);
    longest_prompt = std::max(longest_prompt, std::min(t, prompt_window));
  }

  TrainBatch b;
  const int64_t t_pad = round_up(longest, kCompression);
  const int64_t p_pad = round_up(longest_prompt, kCompression);
  b.mel = torch::zeros({batch, t_pad, bands});
  b.mask = torch::zeros({batch, t_pad}, torch::kBool);
  b.ids = torch::full({batch, t_pad}, pad_id, torch::kInt64);
  b.prompt = torch::zeros({batch, p_pad, bands});
  b.prompt_mask = torch::zeros({batch, p_pad}, torch::kBool);
  for (int64_t i = 0; i < batch; ++i) {
    const Example& ex = *paired[static_cast<std::size_t>(i)];
    const int64_t t = ex.mel.size(0);
    b.mel[i].narrow(0, 0, t).copy_(ex.mel);
    b.mask[i].narrow(0, 0, t).fill_(true);
    b.ids[i].narrow(0, 0, t).copy_(torch::tensor(ex.frame_ids, torch::kInt64));
    const int64_t len = std::min(t, prompt_window);
    const int64_t start = prompt_starts[static_cast<std::size_t>(i)];
    if (start < 0 || start + len > t) throw BatchError("collate: prompt window out of range");
    b.prompt[i].narrow(0, 0, len).copy_(ex.mel.narrow(0, start, len));
    b.prompt_mask[i].narrow(0, 0, len).fill_(true);
  }

  if (!random.empty()) {
    int64_t longest_random = 0;
    for (const auto* ex : random) longest_random = std::max(longest_random, ex->mel.size(0));
    const int64_t r_pad = round_up(longest_random, kCompression);
    b.random_mel = torch::zeros({batch, r_pad, bands});
    b.random_mask = torch::zeros({batch, r_pad}, torch::kBool);
    for (int64_t i = 0; i < batch; ++i) {
      const auto& mel = random[static_cast<std::size_t>(i)]->mel;
      b.random_mel[i].narrow(0, 0, mel.size(0)).copy_(mel);
      b.random_mask[i].narrow(0, 0, mel.size(0)).fill_(true);
    }
  }
  return b;
}

torch::Tensor masked_mse(const torch::Tensor& prediction, const torch::Tensor& target,
                         const torch::Tensor& mask) {
  if (prediction.sizes() != target.sizes()) {
    throw ShapeError("masked_mse: prediction and target shapes differ");
  }
  auto weights = mask.to(prediction.scalar_type()).unsqueeze(-1);
  const double bands = static_cast<double>(prediction.size(-1));
  return ((prediction - target).pow(2) * weights).sum() / (weights.sum() * bands);
}

torch::Tensor masked_cross_entropy(const torch::Tensor& logits, const torch::Tensor& ids,
                                   const torch::Tensor& mask) {
  auto keep = mask.reshape({-1});
  auto flat_logits = logits.reshape({-1, logits.size(-1)}).index({keep});
  auto flat_ids = ids.reshape({-1}).index({keep});
  return F::cross_entropy(flat_logits, flat_ids);
}

double weighted_total(const LossRecord& r, const ScheduleConfig& s) {
  return s.weight_mse * r.mse + s.weight_vq * r.vq + s.weight_classify * r.classify +
         s.weight_contrastive * r.contrastive + r.beat_kl * r.kl +
         r.beat_consistency * r.consistency;
}

std::string loss_csv_header() {
  return "step,loss_total,loss_mse,loss_vq,loss_classify,loss_contrastive,loss_kl,"
         "loss_consistency,beat_kl,beat_consistency";
}

std::string loss_csv_row(const LossRecord& r) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10) << r.step << ',' << r.total
      << ',' << r.mse << ',' << r.vq << ',' << r.classify << ',' << r.contrastive << ',' << r.kl
      << ',' << r.consistency << ',' << r.beat_kl << ',' << r.beat_consistency;
  return out.str();
}

std::vector<LossRecord> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open loss log " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != loss_csv_header()) {
    throw FormatError("loss log " + path.string() + " has an unexpected header");
  }
  std::vector<LossRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 10) throw FormatError("loss log: malformed row '" + line + "'");
    LossRecord r;
    r.step = parse_int(fields[0]);
    double* targets[] = {&r.total, &r.mse, &r.vq, &r.classify, &r.contrastive,
                         &r.kl, &r.consistency, &r.beat_kl, &r.beat_consistency};
    for (std::size_t i = 0; i < 9; ++i) *targets[i] = std::stod(fields[i + 1]);
    records.push_back(r);
  }
  return records;
}

LossLog::LossLog(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
  if (!out_) throw FileError("cannot write loss log " + path.string());
  out_ << loss_csv_header() << '\n';
}

void LossLog::write(const LossRecord& record) {
  out_ << loss_csv_row(record) << '\n';
  out_.flush();
}

Config checkpoint_config(const Checkpoint& checkpoint) {
  try {
    return parse_config(checkpoint.meta("config"));
  } catch (const ParameterError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
}

void check_model_compatible(const Checkpoint& checkpoint, const ModelConfig& expected) {
  const auto stored = model_entries(checkpoint_config(checkpoint).model);
  const auto wanted = model_entries(expected);
  for (std::size_t i = 0; i < stored.size() && i < wanted.size(); ++i) {
    if (stored[i].second != wanted[i].second) {
      throw FormatError("checkpoint does not match the config: " + stored[i].first +
                        " is " + stored[i].second + " in the checkpoint but " +
                        wanted[i].second + " in the config");
    }
  }
  if (checkpoint.meta("model_hash") != std::to_string(model_hash(expected))) {
    throw FormatError("checkpoint model hash does not match the config");
  }
}

namespace {

Codebook restore_codebook(const Checkpoint& ckpt) {
  Codebook cb;
  cb.entries = ckpt.block("codebook/entries").clone();
  cb.ema_counts = ckpt.block("codebook/ema_counts").clone();
  cb.ema_sums = ckpt.block("codebook/ema_sums").clone();
  cb.decay = parse_double(ckpt.meta("codebook.decay"));
  cb.epsilon = parse_double(ckpt.meta("codebook.epsilon"));
  cb.initialized = ckpt.meta("codebook.initialized") == "1";
  if (cb.entries.dim() != 2 || cb.ema_counts.size(0) != cb.entries.size(0) ||
      cb.ema_sums.sizes() != cb.entries.sizes()) {
    throw FormatError("checkpoint codebook blocks are inconsistent");
  }
  return cb;
}

TrainedModel build_model(const Checkpoint& ckpt, Config config) {
  TrainedModel m;
  m.config = std::move(config);
  m.net = Transcoder(m.config.model, m.config.optim.init_tau);
  restore_parameters(ckpt, "transcoder/", *m.net);
  m.net->eval();
  m.codebook = restore_codebook(ckpt);
  if (m.codebook.size() != m.config.model.codebook_size ||
      m.codebook.dim() != m.config.model.latent_dim) {
    throw FormatError("checkpoint codebook is " + std::to_string(m.codebook.size()) + " x " +
                      std::to_string(m.codebook.dim()) + " but the config expects " +
                      std::to_string(m.config.model.codebook_size) + " x " +
                      std::to_string(m.config.model.latent_dim));
  }
  m.train_reconstruction = parse_double(ckpt.meta("train_reconstruction"));
  return m;
}

}  // namespace

TrainedModel load_model(const Checkpoint& checkpoint) {
  return build_model(checkpoint, checkpoint_config(checkpoint));
}

TrainedModel load_model(const Checkpoint& checkpoint, const Config& expected) {
  check_model_compatible(checkpoint, expected.model);
  return build_model(checkpoint, expected);
}

Trainer::Trainer(const Config& config, uint64_t seed)
    : config_(config),
      rng_(seed),
      generator_(at::make_generator<at::CPUGeneratorImpl>(seed ^ 0x9E3779B97F4A7C15ull)) {
  validate(config_);
  torch::manual_seed(seed);
  model_ = Transcoder(config_.model, config_.optim.init_tau);
  codebook_ = Codebook::empty(config_.model.codebook_size, config_.model.latent_dim,
                              config_.optim.ema_decay, config_.optim.ema_epsilon);
  optimizer_ = std::make_unique<torch::optim::Adam>(
      model_->parameters(), torch::optim::AdamOptions(config_.optim.learning_rate));
}

TrainBatch Trainer::next_batch(const Dataset& paired, const Dataset* unpaired) {
  const auto n = paired.items.size();
  if (n == 0) throw BatchError("no paired training data");
  const auto batch = static_cast<std::size_t>(config_.optim.batch_size);

  std::vector<const Example*> rows;
  if (n <= batch) {
    for (const auto& ex : paired.items) rows.push_back(&ex);
  } else {
    if (order_.size() != n || cursor_ + batch > n) {
      order_.resize(n);
      std::iota(order_.begin(), order_.end(), 0);
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      rows.push_back(&paired.items[static_cast<std::size_t>(order_[cursor_ + i])]);
    }
    cursor_ += batch;
  }

  const int64_t window = config_.model.prompt_window_frames;
  std::vector<int64_t> starts;
  for (const auto* ex : rows) {
    const int64_t t = ex->mel.size(0);
    if (t > window) {
      starts.push_back(std::uniform_int_distribution<int64_t>(0, t - window)(rng_));
    } else {
      starts.push_back(0);
    }
  }

  std::vector<const Example*> random;
  if (unpaired != nullptr && !unpaired->items.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, unpaired->items.size() - 1);
    for (std::size_t i = 0; i < rows.size(); ++i) random.push_back(&unpaired->items[pick(rng_)]);
  }
  return collate(rows, random, window, starts, config_.model.pad_id);
}

LossRecord Trainer::train_step(const TrainBatch& batch) {
  const ScheduleConfig& sc = config_.schedule;
  LossRecord rec;
  rec.step = step_;
  rec.beat_kl = loss_weight(step_, sc.kl_start, sc.kl_end, sc.kl_upper);
  rec.beat_consistency = loss_weight(step_, sc.consistency_start, sc.consistency_end,
                                     sc.consistency_upper);
  if (rec.beat_consistency > 0.0 && !batch.has_random()) {
    throw BatchError("consistency loss is active at step " + std::to_string(step_) +
                     " but the batch has no random speech");
  }

  model_->train();
  // The first batch sets the data-dependent state: mel standardization here,
  // codebook entries below.
  if (step_ == 0 && !codebook_.initialized) model_->fit_mel_statistics(batch.mel, batch.mask);
  auto s = model_->speech_encode(batch.mel, batch.mask);
  auto p = model_->phoneme_encode(batch.ids, batch.mask);
  if (!codebook_.initialized) initialize_from(codebook_, s, generator_);
  auto g = model_->prompt_encode(batch.prompt, batch.prompt_mask, generator_);

  auto q = quantize(s, codebook_);
  auto reconstructed = model_->speech_decode(q.values, g.sample, q.mask);
  auto logits = model_->phoneme_decode(q.values, q.mask);

  auto l_mse = masked_mse(reconstructed, batch.mel, batch.mask);
  auto l_classify = masked_cross_entropy(logits, batch.ids, batch.mask);
  auto l_contrastive = contrastive_loss(s, p, model_->tau());
  auto l_kl = kl_margin_loss(g.mu, g.sigma, sc.kl_margin);

  auto objective = sc.weight_mse * l_mse + sc.weight_vq * q.commitment +
                   sc.weight_classify * l_classify + sc.weight_contrastive * l_contrastive;
  if (rec.beat_kl > 0.0) objective = objective + rec.beat_kl * l_kl;

  torch::Tensor l_consistency;
  if (batch.has_random()) {
    // G from the paired utterance conditions both decodings; the style read
    // back from each output must agree with it and with each other.
    auto consistency = [&] {
      auto r = model_->speech_encode(batch.random_mel, batch.random_mask);
      auto qr = quantize(r, codebook_);
      auto r_decoded = model_->speech_decode(qr.values, g.sample, qr.mask);
      auto g_s = model_->prompt_encode(reconstructed, batch.mask, generator_);
      auto g_r = model_->prompt_encode(r_decoded, batch.random_mask, generator_);
      return gram_consistency_loss(g.sample, g_s.sample) +
             gram_consistency_loss(g_s.sample, g_r.sample);
    };
    if (rec.beat_consistency > 0.0) {
      l_consistency = consistency();
      objective = objective + rec.beat_consistency * l_consistency;
    } else {
      torch::NoGradGuard no_grad;
      l_consistency = consistency();
    }
  }

  rec.mse = l_mse.item<double>();
  rec.vq = q.commitment.item<double>();
  rec.classify = l_classify.item<double>();
  rec.contrastive = l_contrastive.item<double>();
  rec.kl = l_kl.item<double>();
  rec.consistency = l_consistency.defined() ? l_consistency.item<double>() : 0.0;
  rec.total = weighted_total(rec, sc);
  if (!std::isfinite(rec.total) || !std::isfinite(objective.item<double>())) {
    throw DivergenceError(step_, "non-finite training loss");
  }

  optimizer_->zero_grad();
  objective.backward();
  optimizer_->step();
  ema_update(codebook_, s, q);

  ++step_;
  recent_mse_.push_back(rec.mse);
  if (recent_mse_.size() > 10) recent_mse_.pop_front();
  return rec;
}

double Trainer::recent_reconstruction() const {
  if (recent_mse_.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(recent_mse_.begin(), recent_mse_.end(), 0.0) /
         static_cast<double>(recent_mse_.size());
}

Checkpoint Trainer::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.manifest["format"] = "vqctap";
  ckpt.manifest["config"] = to_text(config_);
  ckpt.manifest["model_hash"] = std::to_string(model_hash(config_.model));
  ckpt.manifest["step"] = std::to_string(step_);
  ckpt.manifest["train_reconstruction"] = format_double(recent_reconstruction());
  ckpt.manifest["codebook.decay"] = format_double(codebook_.decay);
  ckpt.manifest["codebook.epsilon"] = format_double(codebook_.epsilon);
  ckpt.manifest["codebook.initialized"] = codebook_.initialized ? "1" : "0";
  ckpt.manifest["sampler.cursor"] = std::to_string(cursor_);

  store_parameters(ckpt, "transcoder/", *model_);
  ckpt.blocks["codebook/entries"] = codebook_.entries.clone();
  ckpt.blocks["codebook/ema_counts"] = codebook_.ema_counts.clone();
  ckpt.blocks["codebook/ema_sums"] = codebook_.ema_sums.clone();

  const auto& state = optimizer_->state();
  for (const auto& item : model_->named_parameters()) {
    auto it = state.find(item.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& adam = static_cast<const torch::optim::AdamParamState&>(*it->second);
    const std::string base = "adam/" + item.key() + "/";
    ckpt.blocks[base + "step"] = torch::tensor(adam.step(), torch::kInt64);
    ckpt.blocks[base + "exp_avg"] = adam.exp_avg().clone();
    ckpt.blocks[base + "exp_avg_sq"] = adam.exp_avg_sq().clone();
  }

  std::ostringstream host;
  host << rng_;
  ckpt.blocks["rng/host"] = bytes_tensor(host.str());
  ckpt.blocks["rng/torch"] = generator_.get_state();
  ckpt.blocks["sampler/order"] = torch::tensor(order_, torch::kInt64);
  ckpt.blocks["trainer/recent_mse"] =
      torch::tensor(std::vector<double>(recent_mse_.begin(), recent_mse_.end()), torch::kFloat64);
  return ckpt;
}

std::unique_ptr<Trainer> Trainer::from_checkpoint(const Checkpoint& ckpt, const Config& config) {
  check_model_compatible(ckpt, config.model);
  auto trainer = std::make_unique<Trainer>(config, 0);
  restore_parameters(ckpt, "transcoder/", *trainer->model_);
  trainer->codebook_ = restore_codebook(ckpt);
  trainer->step_ = parse_int(ckpt.meta("step"));
  trainer->cursor_ = static_cast<std::size_t>(parse_int(ckpt.meta("sampler.cursor")));

  auto& state = trainer->optimizer_->state();
  for (const auto& item : trainer->model_->named_parameters()) {
    const std::string base = "adam/" + item.key() + "/";
    if (!ckpt.has_block(base + "step")) continue;
    auto adam = std::make_unique<torch::optim::AdamParamState>();
    adam->step(ckpt.block(base + "step").item<int64_t>());
    adam->exp_avg(ckpt.block(base + "exp_avg").clone());
    adam->exp_avg_sq(ckpt.block(base + "exp_avg_sq").clone());
    state[item.value().unsafeGetTensorImpl()] = std::move(adam);
  }

  std::istringstream host(tensor_bytes(ckpt.block("rng/host")));
  host >> trainer->rng_;
  if (!host) throw FormatError("checkpoint: malformed host RNG state");
  trainer->generator_.set_state(ckpt.block("rng/torch"));
  const auto& order = ckpt.block("sampler/order");
  trainer->order_.assign(order.data_ptr<int64_t>(), order.data_ptr<int64_t>() + order.numel());
  const auto& recent = ckpt.block("trainer/recent_mse");
  trainer->recent_mse_.assign(recent.data_ptr<double>(), recent.data_ptr<double>() + recent.numel());
  return trainer;
}

}  // namespace vqctap
