#pragma once

// Data-parallel inner loops with a scalar reference implementation and
// vectorized variants (AVX2+FMA on x86-64, NEON on AArch64). The variant is
// chosen once at runtime from the CPU's capabilities; setting the environment
// variable VQCTAP_ISA=scalar forces the reference path.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace vqctap::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  float (*dot_f32)(const float* a, const float* b, std::size_t n);
  double (*dot_f64)(const double* a, const double* b, std::size_t n);
  float (*squared_distance_f32)(const float* a, const float* b, std::size_t n);
  double (*squared_distance_f64)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);
  void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_table();
// nullptr when the variant is not compiled in or the CPU lacks the extension.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// Scalar first, then every vectorized table usable on this machine.
std::vector<const KernelTable*> available_tables();

// The table used by the library. Selected on first call, then fixed.
const KernelTable& active();

inline float dot(const KernelTable& k, std::span<const float> a, std::span<const float> b) {
  return k.dot_f32(a.data(), b.data(), a.size());
}
inline double dot(const KernelTable& k, std::span<const double> a, std::span<const double> b) {
  return k.dot_f64(a.data(), b.data(), a.size());
}
inline float squared_distance(const KernelTable& k, std::span<const float> a,
                              std::span<const float> b) {
  return k.squared_distance_f32(a.data(), b.data(), a.size());
}
inline double squared_distance(const KernelTable& k, std::span<const double> a,
                               std::span<const double> b) {
  return k.squared_distance_f64(a.data(), b.data(), a.size());
}
inline void axpy(const KernelTable& k, float alpha, std::span<const float> x, std::span<float> y) {
  k.axpy_f32(alpha, x.data(), y.data(), x.size());
}
inline void axpy(const KernelTable& k, double alpha, std::span<const double> x,
                 std::span<double> y) {
  k.axpy_f64(alpha, x.data(), y.data(), x.size());
}

/// For each row of `points` (row-major, `dim` columns) finds the row of
/// `codebook` at the smallest squared Euclidean distance. Ties resolve to the
/// lowest codebook index. `out_index` and `out_distance` hold one entry per
/// point.
template <class T>
void nearest_rows(const KernelTable& k, std::span<const T> points, std::span<const T> codebook,
                  std::size_t dim, std::span<int64_t> out_index, std::span<T> out_distance);

/// Accumulates `weight * points[i]` into `sums[index[i]]` and `weight` into
/// `counts[index[i]]` for every i with `include[i] != 0`.
template <class T>
void scatter_accumulate(const KernelTable& k, std::span<const T> points, std::size_t dim,
                        std::span<const int64_t> index, std::span<const uint8_t> include,
                        T weight, std::span<T> sums, std::span<T> counts);

}  // namespace vqctap::kernels
