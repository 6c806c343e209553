#include "vqctap/kernels.hpp"

#include <cstdlib>
#include <string>

namespace vqctap::kernels {

namespace detail {
// Defined in kernels_avx2.cpp / kernels_neon.cpp when those variants are built.
const KernelTable* avx2_table_impl();
const KernelTable* neon_table_impl();
}  // namespace detail

namespace {

template <class T>
T dot_scalar(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
T squared_distance_scalar(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

template <class T>
void axpy_scalar(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

constexpr KernelTable kScalarTable{
    Isa::kScalar,
    &dot_scalar<float>,
    &dot_scalar<double>,
    &squared_distance_scalar<float>,
    &squared_distance_scalar<double>,
    &axpy_scalar<float>,
    &axpy_scalar<double>,
};

const KernelTable& select_table() {
  if (const char* forced = std::getenv("VQCTAP_ISA")) {
    const std::string name(forced);
    if (name == "scalar") return kScalarTable;
    if (name == "avx2" && avx2_table()) return *avx2_table();
    if (name == "neon" && neon_table()) return *neon_table();
  }
  if (const KernelTable* t = avx2_table()) return *t;
  if (const KernelTable* t = neon_table()) return *t;
  return kScalarTable;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kNeon:
      return "neon";
  }
  return "unknown";
}

const KernelTable& scalar_table() { return kScalarTable; }

const KernelTable* avx2_table() {
#if defined(VQCTAP_HAVE_AVX2)
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported ? detail::avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_table() {
#if defined(VQCTAP_HAVE_NEON)
  return detail::neon_table_impl();
#else
  return nullptr;
#endif
}

std::vector<const KernelTable*> available_tables() {
  std::vector<const KernelTable*> tables{&kScalarTable};
  if (const KernelTable* t = avx2_table()) tables.push_back(t);
  if (const KernelTable* t = neon_table()) tables.push_back(t);
  return tables;
}

const KernelTable& active() {
  static const KernelTable& table = select_table();
  return table;
}

template <class T>
void nearest_rows(const KernelTable& k, std::span<const T> points, std::span<const T> codebook,
                  std::size_t dim, std::span<int64_t> out_index, std::span<T> out_distance) {
  const std::size_t n_points = dim == 0 ? 0 : points.size() / dim;
  const std::size_t n_codes = dim == 0 ? 0 : codebook.size() / dim;
  for (std::size_t i = 0; i < n_points; ++i) {
    const auto point = points.subspan(i * dim, dim);
    int64_t best = 0;
    T best_distance = squared_distance(k, point, codebook.subspan(0, dim));
    for (std::size_t c = 1; c < n_codes; ++c) {
      const T distance = squared_distance(k, point, codebook.subspan(c * dim, dim));
      // strict comparison keeps the lowest index on ties
      if (distance < best_distance) {
        best_distance = distance;
        best = static_cast<int64_t>(c);
      }
    }
    out_index[i] = best;
    out_distance[i] = best_distance;
  }
}

template <class T>
void scatter_accumulate(const KernelTable& k, std::span<const T> points, std::size_t dim,
                        std::span<const int64_t> index, std::span<const uint8_t> include,
                        T weight, std::span<T> sums, std::span<T> counts) {
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (!include[i]) continue;
    const auto code = static_cast<std::size_t>(index[i]);
    axpy(k, weight, points.subspan(i * dim, dim), sums.subspan(code * dim, dim));
    counts[code] += weight;
  }
}

template void nearest_rows<float>(const KernelTable&, std::span<const float>,
                                  std::span<const float>, std::size_t, std::span<int64_t>,
                                  std::span<float>);
template void nearest_rows<double>(const KernelTable&, std::span<const double>,
                                   std::span<const double>, std::size_t, std::span<int64_t>,
                                   std::span<double>);
template void scatter_accumulate<float>(const KernelTable&, std::span<const float>, std::size_t,
                                        std::span<const int64_t>, std::span<const uint8_t>, float,
                                        std::span<float>, std::span<float>);
template void scatter_accumulate<double>(const KernelTable&, std::span<const double>, std::size_t,
                                         std::span<const int64_t>, std::span<const uint8_t>,
                                         double, std::span<double>, std::span<double>);

}  // namespace vqctap::kernels
