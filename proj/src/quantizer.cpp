#include "vqctap/quantizer.hpp"

#include <span>
#include <string>

#include "vqctap/errors.hpp"
#include "vqctap/kernels.hpp"

namespace vqctap {

namespace {

template <class T>
torch::Tensor search(const torch::Tensor& rows, const torch::Tensor& entries) {
  const int64_t n = rows.size(0);
  const int64_t d = rows.size(1);
  auto index = torch::empty({n}, torch::kInt64);
  auto distance = torch::empty({n}, rows.options());
  kernels::nearest_rows<T>(
      kernels::active(), std::span<const T>(rows.data_ptr<T>(), static_cast<std::size_t>(n * d)),
      std::span<const T>(entries.data_ptr<T>(), static_cast<std::size_t>(entries.numel())),
      static_cast<std::size_t>(d),
      std::span<int64_t>(index.data_ptr<int64_t>(), static_cast<std::size_t>(n)),
      std::span<T>(distance.data_ptr<T>(), static_cast<std::size_t>(n)));
  return index;
}

template <class T>
void accumulate(const torch::Tensor& rows, const torch::Tensor& index, const torch::Tensor& include,
                torch::Tensor& sums, torch::Tensor& counts) {
  const auto n = static_cast<std::size_t>(rows.size(0));
  const auto d = static_cast<std::size_t>(rows.size(1));
  kernels::scatter_accumulate<T>(
      kernels::active(), std::span<const T>(rows.data_ptr<T>(), n * d), d,
      std::span<const int64_t>(index.data_ptr<int64_t>(), n),
      std::span<const uint8_t>(include.data_ptr<uint8_t>(), n), T{1},
      std::span<T>(sums.data_ptr<T>(), static_cast<std::size_t>(sums.numel())),
      std::span<T>(counts.data_ptr<T>(), static_cast<std::size_t>(counts.numel())));
}

torch::Tensor valid_rows(const LatentSeq& s, torch::Dtype dtype) {
  const int64_t d = s.values.size(-1);
  auto flat = s.values.detach().reshape({-1, d});
  auto keep = s.mask.reshape({-1});
  return flat.index({keep}).to(dtype).contiguous();
}

void check_codebook(const Codebook& cb) {
  if (!cb.entries.defined() || cb.entries.dim() != 2 || cb.entries.size(0) < 1) {
    throw StateError("codebook has no entries");
  }
}

}  // namespace

Codebook Codebook::empty(int64_t size, int64_t dim, double decay, double epsilon,
                         torch::Dtype dtype) {
  if (size < 1 || dim < 1) throw ParameterError("codebook size and width must be >= 1");
  Codebook cb;
  cb.entries = torch::zeros({size, dim}, dtype);
  cb.ema_counts = torch::ones({size}, dtype);
  cb.ema_sums = torch::zeros({size, dim}, dtype);
  cb.decay = decay;
  cb.epsilon = epsilon;
  cb.initialized = false;
  return cb;
}

Codebook Codebook::from_entries(const torch::Tensor& entries, double decay, double epsilon) {
  if (entries.dim() != 2 || entries.size(0) < 1) {
    throw ParameterError("codebook entries must be a non-empty [K, d] matrix");
  }
  Codebook cb;
  cb.entries = entries.detach().clone().contiguous();
  cb.ema_counts = torch::ones({entries.size(0)}, entries.options());
  cb.ema_sums = cb.entries.clone();
  cb.decay = decay;
  cb.epsilon = epsilon;
  cb.initialized = true;
  return cb;
}

void initialize_from(Codebook& codebook, const LatentSeq& s, at::Generator generator) {
  torch::NoGradGuard no_grad;
  check_codebook(codebook);
  const auto dtype = codebook.entries.scalar_type();
  auto rows = valid_rows(s, dtype);
  const int64_t n = rows.size(0);
  const int64_t k = codebook.size();
  if (n == 0) throw DegenerateInputError("codebook initialization: no valid frames");
  if (rows.size(1) != codebook.dim()) {
    throw ShapeError("codebook initialization: frame width " + std::to_string(rows.size(1)) +
                     " != codebook width " + std::to_string(codebook.dim()));
  }

  torch::Tensor entries;
  if (n >= k) {
    auto order = torch::randperm(n, generator, torch::kInt64);
    entries = rows.index_select(0, order.narrow(0, 0, k));
  } else {
    auto extra_idx = torch::randint(n, {k - n}, generator, torch::kInt64);
    auto extra = rows.index_select(0, extra_idx);
    extra = extra + 0.01 * torch::randn(extra.sizes(), generator, extra.options());
    entries = torch::cat({rows, extra}, 0);
  }
  codebook.entries = entries.contiguous();
  codebook.ema_sums = entries.clone();
  codebook.ema_counts = torch::ones({k}, entries.options());
  codebook.initialized = true;
}

torch::Tensor nearest_indices(const torch::Tensor& rows, const Codebook& codebook) {
  check_codebook(codebook);
  if (rows.dim() != 2 || rows.size(1) != codebook.dim()) {
    throw ShapeError("quantize: frame width " + std::to_string(rows.size(-1)) +
                     " != codebook width " + std::to_string(codebook.dim()));
  }
  const auto dtype = codebook.entries.scalar_type();
  auto flat = rows.detach().to(dtype).contiguous();
  auto entries = codebook.entries.contiguous();
  if (dtype == torch::kFloat32) return search<float>(flat, entries);
  if (dtype == torch::kFloat64) return search<double>(flat, entries);
  throw ParameterError("codebook dtype must be float32 or float64");
}

QuantizedSeq quantize(const LatentSeq& s, const Codebook& codebook) {
  check_codebook(codebook);
  if (s.values.dim() != 3 || s.values.size(2) != codebook.dim()) {
    throw ShapeError("quantize: frame width " + std::to_string(s.values.size(-1)) +
                     " != codebook width " + std::to_string(codebook.dim()));
  }
  if (!s.mask.any().item<bool>()) {
    throw DegenerateInputError("quantize: no valid frames");
  }
  const int64_t batch = s.values.size(0);
  const int64_t time = s.values.size(1);
  const int64_t d = s.values.size(2);

  auto index = nearest_indices(s.values.reshape({-1, d}), codebook);
  auto codes = codebook.entries.index_select(0, index)
                   .view({batch, time, d})
                   .to(s.values.scalar_type())
                   .detach();

  QuantizedSeq q;
  q.indices = index.view({batch, time});
  q.mask = s.mask;
  // Forward value is exactly the codebook row; the (s - sg[s]) term is zero
  // but carries an identity gradient back to s.
  q.values = codes + (s.values - s.values.detach());
  auto per_frame = (s.values - codes).pow(2).sum(-1);
  auto weights = s.mask.to(per_frame.scalar_type());
  q.commitment = (per_frame * weights).sum() / weights.sum();
  return q;
}

void ema_update(Codebook& codebook, const LatentSeq& s, const QuantizedSeq& q) {
  torch::NoGradGuard no_grad;
  check_codebook(codebook);
  if (!q.indices.defined() || q.indices.sizes() != s.mask.sizes() ||
      s.values.dim() != 3 || s.values.size(0) != s.mask.size(0) ||
      s.values.size(1) != s.mask.size(1)) {
    throw ConsistencyError("ema_update: quantized sequence does not match the latent sequence");
  }
  if (s.values.size(2) != codebook.dim()) {
    throw ConsistencyError("ema_update: latent width does not match the codebook");
  }
  const auto dtype = codebook.entries.scalar_type();
  const int64_t d = codebook.dim();
  auto rows = s.values.detach().reshape({-1, d}).to(dtype).contiguous();
  auto index = q.indices.reshape({-1}).to(torch::kInt64).contiguous();
  if (index.numel() > 0 &&
      (index.min().item<int64_t>() < 0 || index.max().item<int64_t>() >= codebook.size())) {
    throw ConsistencyError("ema_update: code index out of range");
  }
  auto include = s.mask.reshape({-1}).to(torch::kUInt8).contiguous();

  auto batch_sums = torch::zeros_like(codebook.ema_sums);
  auto batch_counts = torch::zeros_like(codebook.ema_counts);
  if (dtype == torch::kFloat32) {
    accumulate<float>(rows, index, include, batch_sums, batch_counts);
  } else if (dtype == torch::kFloat64) {
    accumulate<double>(rows, index, include, batch_sums, batch_counts);
  } else {
    throw ParameterError("codebook dtype must be float32 or float64");
  }

  const double g = codebook.decay;
  codebook.ema_counts = g * codebook.ema_counts + (1.0 - g) * batch_counts;
  codebook.ema_sums = g * codebook.ema_sums + (1.0 - g) * batch_sums;
  const auto total = codebook.ema_counts.sum();
  const auto smoothed = (codebook.ema_counts + codebook.epsilon) /
                        (total + static_cast<double>(codebook.size()) * codebook.epsilon) * total;
  codebook.entries = (codebook.ema_sums / smoothed.unsqueeze(1)).contiguous();
}

}  // namespace vqctap
