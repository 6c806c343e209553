#include "vqctap/connector.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vqctap/errors.hpp"
#include "vqctap/phonemes.hpp"

namespace vqctap {

namespace F = torch::nn::functional;

namespace {

void check_step(int64_t t, const NoiseSchedule& ns) {
  if (t < 1 || t > ns.steps) {
    throw IndexError("diffusion step " + std::to_string(t) + " outside 1.." +
                     std::to_string(ns.steps));
  }
}

// Per-row schedule coefficients gathered for steps t, shaped [B, 1, 1].
torch::Tensor gather(const std::vector<double>& table, const torch::Tensor& t,
                     const torch::TensorOptions& options) {
  auto values = torch::tensor(table, torch::kFloat64);
  return values.index_select(0, t.to(torch::kInt64) - 1).to(options.dtype()).view({-1, 1, 1});
}

LatentSeq run_sampler(torch::Tensor x, const LatentSeq& p, const NoiseSchedule& ns,
                      at::Generator& generator, const EpsPredictor& predictor) {
  if (!predictor) throw StateError("connector sampling needs a trained denoiser");
  if (x.sizes() != p.values.sizes()) {
    throw ShapeError("connector sampling: initial state must match the conditioning shape");
  }
  torch::NoGradGuard no_grad;
  const auto keep = p.mask.unsqueeze(-1).to(x.scalar_type());
  const int64_t batch = x.size(0);
  x = x * keep;
  for (int64_t t = ns.steps; t >= 1; --t) {
    auto steps = torch::full({batch}, t, torch::kInt64);
    auto eps = predictor(x, steps, p);
    const double a = ns.alpha[static_cast<std::size_t>(t - 1)];
    const double ab = ns.alpha_bar[static_cast<std::size_t>(t - 1)];
    auto mu = (x - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps) / std::sqrt(a);
    if (t > 1) {
      auto psi = torch::randn(x.sizes(), generator, x.options());
      x = mu + ns.sigma(t) * psi;
    } else {
      x = mu;
    }
    x = x * keep;
  }
  return LatentSeq{x, p.mask};
}

}  // namespace

double NoiseSchedule::sigma(int64_t t) const {
  check_step(t, *this);
  if (t == 1) return 0.0;
  const auto i = static_cast<std::size_t>(t - 1);
  return std::sqrt((1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]) * (1.0 - alpha[i]));
}

NoiseSchedule build_noise_schedule(int64_t steps, double beta_min, double beta_max) {
  if (steps < 1) throw ParameterError("noise schedule needs at least one step");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
    throw ParameterError("noise schedule needs 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule ns;
  ns.steps = steps;
  double product = 1.0;
  for (int64_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    const double b = beta_min + (beta_max - beta_min) * frac;
    product *= 1.0 - b;
    ns.beta.push_back(b);
    ns.alpha.push_back(1.0 - b);
    ns.alpha_bar.push_back(product);
  }
  return ns;
}

LatentSeq q_sample(const LatentSeq& s0, int64_t t, const torch::Tensor& eps, const NoiseSchedule& ns) {
  check_step(t, ns);
  if (eps.sizes() != s0.values.sizes()) throw ShapeError("q_sample: eps must match s0");
  const double ab = ns.alpha_bar[static_cast<std::size_t>(t - 1)];
  return LatentSeq{std::sqrt(ab) * s0.values + std::sqrt(1.0 - ab) * eps, s0.mask};
}

torch::Tensor q_sample(const torch::Tensor& s0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& ns) {
  if (eps.sizes() != s0.sizes()) throw ShapeError("q_sample: eps must match s0");
  if (t.dim() != 1 || t.size(0) != s0.size(0)) throw ShapeError("q_sample: one step per row");
  if (t.numel() > 0 && (t.min().item<int64_t>() < 1 || t.max().item<int64_t>() > ns.steps)) {
    throw IndexError("q_sample: diffusion step outside 1.." + std::to_string(ns.steps));
  }
  auto ab = gather(ns.alpha_bar, t, s0.options());
  return torch::sqrt(ab) * s0 + torch::sqrt(1.0 - ab) * eps;
}

torch::Tensor diffusion_loss(const LatentSeq& s0, const LatentSeq& p, const torch::Tensor& t,
                             const torch::Tensor& eps, const NoiseSchedule& ns,
                             const EpsPredictor& predictor) {
  if (s0.values.sizes() != p.values.sizes() || !torch::equal(s0.mask, p.mask)) {
    throw ShapeError("diffusion_loss: speech and phoneme embeddings must be aligned");
  }
  auto x_t = q_sample(s0.values, t, eps, ns);
  auto predicted = predictor(x_t, t, p);
  auto weights = s0.mask.unsqueeze(-1).to(predicted.scalar_type());
  const double width = static_cast<double>(s0.values.size(-1));
  return ((eps - predicted).pow(2) * weights).sum() / (weights.sum() * width);
}

LatentSeq connector_sample(const LatentSeq& p, const NoiseSchedule& ns, uint64_t seed,
                           const EpsPredictor& predictor) {
  auto generator = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto s_T = torch::randn(p.values.sizes(), generator, p.values.options());
  return run_sampler(s_T, p, ns, generator, predictor);
}

LatentSeq connector_sample_from(const torch::Tensor& s_T, const LatentSeq& p,
                                const NoiseSchedule& ns, uint64_t seed,
                                const EpsPredictor& predictor) {
  auto generator = at::make_generator<at::CPUGeneratorImpl>(seed);
  return run_sampler(s_T, p, ns, generator, predictor);
}

std::vector<EncodedUtterance> encode_for_connector(const Dataset& dataset, Transcoder& net) {
  torch::NoGradGuard no_grad;
  net->eval();
  const auto pad_id = net->config().pad_id;
  std::vector<EncodedUtterance> out;
  for (const auto& ex : dataset.items) {
    if (static_cast<int64_t>(ex.frame_ids.size()) != ex.mel.size(0)) {
      throw InputError("connector data: utterance " + ex.id + " has no frame-aligned phonemes");
    }
    auto mel = pad_to_multiple(ex.mel, kCompression);
    auto ids = pad_to_multiple(ex.frame_ids, kCompression, pad_id);
    auto mask = mel.mask.unsqueeze(0);
    auto s = net->speech_encode(mel.values.unsqueeze(0), mask);
    auto p = net->phoneme_encode(torch::tensor(ids.ids, torch::kInt64).unsqueeze(0), mask);
    const int64_t valid = s.mask.sum().item<int64_t>();
    out.push_back(EncodedUtterance{ex.id, s.values[0].narrow(0, 0, valid).clone(),
                                   p.values[0].narrow(0, 0, valid).clone()});
  }
  return out;
}

std::pair<LatentSeq, LatentSeq> collate_encoded(const std::vector<const EncodedUtterance*>& rows) {
  if (rows.empty()) throw BatchError("collate_encoded: empty batch");
  int64_t longest = 0;
  for (const auto* r : rows) {
    if (r->s0.sizes() != r->p.sizes()) throw ShapeError("collate_encoded: S and P lengths differ");
    longest = std::max(longest, r->s0.size(0));
  }
  const auto batch = static_cast<int64_t>(rows.size());
  const int64_t d = rows.front()->s0.size(1);
  auto s = torch::zeros({batch, longest, d}, rows.front()->s0.options());
  auto p = torch::zeros({batch, longest, d}, rows.front()->p.options());
  auto mask = torch::zeros({batch, longest}, torch::kBool);
  for (int64_t i = 0; i < batch; ++i) {
    const auto* r = rows[static_cast<std::size_t>(i)];
    const int64_t t = r->s0.size(0);
    s[i].narrow(0, 0, t).copy_(r->s0);
    p[i].narrow(0, 0, t).copy_(r->p);
    mask[i].narrow(0, 0, t).fill_(true);
  }
  return {LatentSeq{s, mask}, LatentSeq{p, mask}};
}

DenoiserNetImpl::DenoiserNetImpl(const ConnectorConfig& c, const ModelConfig& model)
    : layers_(c.residual_layers), channels_(c.channels), step_width_(128) {
  const int64_t d = model.latent_dim;
  const int64_t per_block = c.residual_layers / c.residual_blocks;
  const int64_t step_hidden = 4 * c.channels;
  input_ = register_module("input", torch::nn::Conv1d(torch::nn::Conv1dOptions(d, c.channels, 1)));
  step1_ = register_module("step1", torch::nn::Linear(step_width_, step_hidden));
  step2_ = register_module("step2", torch::nn::Linear(step_hidden, step_hidden));
  cond_input_ = register_module("cond_input", torch::nn::Linear(d, c.channels));
  conditioner_ = register_module(
      "conditioner", TransformerStack(c.channels, model.attention_heads, 4 * c.channels,
                                      c.conditioner_layers));
  for (int64_t i = 0; i < c.residual_layers; ++i) {
    const int64_t dilation = int64_t{1} << (i % per_block);
    step_proj_->push_back(torch::nn::Linear(step_hidden, c.channels));
    dilated_->push_back(torch::nn::Conv1d(
        torch::nn::Conv1dOptions(c.channels, 2 * c.channels, 3).dilation(dilation).padding(dilation)));
    cond_proj_->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(c.channels, 2 * c.channels, 1)));
    output_proj_->push_back(
        torch::nn::Conv1d(torch::nn::Conv1dOptions(c.channels, 2 * c.channels, 1)));
  }
  register_module("step_proj", step_proj_);
  register_module("dilated", dilated_);
  register_module("cond_proj", cond_proj_);
  register_module("output_proj", output_proj_);
  skip_out_ = register_module(
      "skip_out", torch::nn::Conv1d(torch::nn::Conv1dOptions(c.channels, c.channels, 1)));
  final_ = register_module("final", torch::nn::Conv1d(torch::nn::Conv1dOptions(c.channels, d, 1)));
  // Kaiming-normal convolutions and a zero prediction at start, as in DiffWave.
  torch::NoGradGuard no_grad;
  for (auto& module : modules(/*include_self=*/false)) {
    if (auto* conv = module->as<torch::nn::Conv1dImpl>()) torch::nn::init::kaiming_normal_(conv->weight);
  }
  final_->weight.zero_();
  final_->bias.zero_();
}

torch::Tensor DenoiserNetImpl::forward(const torch::Tensor& x_t, const torch::Tensor& t,
                                       const LatentSeq& p) {
  if (x_t.dim() != 3 || x_t.sizes() != p.values.sizes()) {
    throw ShapeError("denoiser: x_t and the phoneme conditioning must share [B, T', d]");
  }
  if (t.dim() != 1 || t.size(0) != x_t.size(0)) throw ShapeError("denoiser: one step per row");
  const auto m = p.mask.unsqueeze(1).to(x_t.scalar_type());

  auto x = F::silu(input_->forward(x_t.transpose(1, 2))) * m;
  auto step = sinusoidal_embedding(t.to(torch::kFloat64), step_width_).to(x_t.scalar_type());
  step = F::silu(step2_->forward(F::silu(step1_->forward(step))));
  auto cond = cond_input_->forward(p.values);
  cond = cond + sinusoidal_positions(cond.size(1), cond.size(2), cond.options()).unsqueeze(0);
  cond = conditioner_->forward(cond, p.mask).transpose(1, 2);

  torch::Tensor skip;
  const double root_half = std::sqrt(0.5);
  for (int64_t i = 0; i < layers_; ++i) {
    auto y = x + step_proj_[i]->as<torch::nn::Linear>()->forward(step).unsqueeze(-1);
    y = dilated_[i]->as<torch::nn::Conv1d>()->forward(y) +
        cond_proj_[i]->as<torch::nn::Conv1d>()->forward(cond);
    auto halves = y.chunk(2, 1);
    y = torch::sigmoid(halves[0]) * torch::tanh(halves[1]);
    auto out = output_proj_[i]->as<torch::nn::Conv1d>()->forward(y).chunk(2, 1);
    x = (x + out[0]) * m * root_half;
    skip = skip.defined() ? skip + out[1] : out[1];
  }
  skip = skip / std::sqrt(static_cast<double>(layers_));
  auto eps = final_->forward(F::silu(skip_out_->forward(skip))) * m;
  return eps.transpose(1, 2);
}

Connector::Connector(const Config& config, uint64_t seed)
    : config_(config),
      schedule_(build_noise_schedule(config.connector.diffusion_steps, config.connector.beta_min,
                                     config.connector.beta_max)),
      generator_(at::make_generator<at::CPUGeneratorImpl>(seed ^ 0xD1B54A32D192ED03ull)),
      rng_(seed) {
  if (config.connector.residual_blocks < 1 ||
      config.connector.residual_layers % config.connector.residual_blocks != 0) {
    throw ParameterError("connector residual layers must split evenly into blocks");
  }
  torch::manual_seed(seed);
  net_ = DenoiserNet(config.connector, config.model);
  optimizer_ = std::make_unique<torch::optim::Adam>(
      net_->parameters(), torch::optim::AdamOptions(config.connector.learning_rate));
}

EpsPredictor Connector::predictor() {
  return [net = net_](const torch::Tensor& x, const torch::Tensor& t, const LatentSeq& p) mutable {
    return net->forward(x, t, p);
  };
}

double Connector::train_step(const LatentSeq& s0, const LatentSeq& p) {
  LatentSeq target{s0.values.detach(), s0.mask};
  LatentSeq cond{p.values.detach(), p.mask};
  net_->train();
  const int64_t batch = target.values.size(0);
  auto t = torch::randint(1, schedule_.steps + 1, {batch}, generator_, torch::kInt64);
  auto eps = torch::randn(target.values.sizes(), generator_, target.values.options());
  auto loss = diffusion_loss(target, cond, t, eps, schedule_, predictor());
  const double value = loss.item<double>();
  if (!std::isfinite(value)) throw DivergenceError(steps_trained_, "non-finite connector loss");
  optimizer_->zero_grad();
  loss.backward();
  optimizer_->step();
  ++steps_trained_;
  return value;
}

std::pair<LatentSeq, LatentSeq> Connector::next_batch(const std::vector<EncodedUtterance>& data) {
  if (data.empty()) throw BatchError("no connector training data");
  const auto batch = static_cast<std::size_t>(config_.connector.batch_size);
  std::vector<const EncodedUtterance*> rows;
  if (data.size() <= batch) {
    for (const auto& u : data) rows.push_back(&u);
  } else {
    if (order_.size() != data.size() || cursor_ + batch > data.size()) {
      order_.resize(data.size());
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    for (std::size_t i = 0; i < batch; ++i) rows.push_back(&data[order_[cursor_ + i]]);
    cursor_ += batch;
  }
  return collate_encoded(rows);
}

double Connector::evaluate(const LatentSeq& s0, const LatentSeq& p, uint64_t seed) {
  torch::NoGradGuard no_grad;
  net_->eval();
  auto generator = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto eps = torch::randn(s0.values.sizes(), generator, s0.values.options());
  const int64_t batch = s0.values.size(0);
  double total = 0.0;
  for (int64_t t = 1; t <= schedule_.steps; ++t) {
    auto steps = torch::full({batch}, t, torch::kInt64);
    total += diffusion_loss(s0, p, steps, eps, schedule_, predictor()).item<double>();
  }
  return total / static_cast<double>(schedule_.steps);
}

LatentSeq Connector::sample(const LatentSeq& p, uint64_t seed) {
  if (steps_trained_ == 0) throw StateError("the connector has not been trained");
  net_->eval();
  return connector_sample(p, schedule_, seed, predictor());
}

void Connector::store(Checkpoint& checkpoint) const {
  store_parameters(checkpoint, "connector/", *net_);
  checkpoint.manifest["connector.steps_trained"] = std::to_string(steps_trained_);
}

std::unique_ptr<Connector> Connector::restore(const Checkpoint& checkpoint, const Config& config) {
  if (checkpoint.manifest.count("connector.steps_trained") == 0) {
    throw StateError("checkpoint has no connector block");
  }
  auto connector = std::make_unique<Connector>(config, 0);
  restore_parameters(checkpoint, "connector/", *connector->net_);
  connector->steps_trained_ = parse_int(checkpoint.meta("connector.steps_trained"));
  return connector;
}

}  // namespace vqctap
