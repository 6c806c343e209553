#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "vqctap/kernels.hpp"

using namespace vqctap;

namespace {

template <class T>
std::vector<T> random_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal;
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(normal(rng));
  return v;
}

template <class T>
long double reference_dot(const std::vector<T>& a, const std::vector<T>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

template <class T>
long double reference_distance(const std::vector<T>& a, const std::vector<T>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

// Rounding bound for a length-n reduction of products with magnitude sum `mag`.
template <class T>
double reduction_bound(std::size_t n, long double mag) {
  return 4.0 * static_cast<double>(n + 1) * std::numeric_limits<T>::epsilon() *
         static_cast<double>(mag);
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("scalar table is always available and listed first") {
    const auto tables = kernels::available_tables();
    REQUIRE(!tables.empty());
    CHECK(tables.front()->isa == kernels::Isa::kScalar);
    CHECK(kernels::isa_name(kernels::scalar_table().isa) == "scalar");
  }

  TEST_CASE("every variant matches the reference reductions on odd lengths") {
    std::mt19937_64 rng(11);
    for (const auto* table : kernels::available_tables()) {
      CAPTURE(kernels::isa_name(table->isa));
      for (std::size_t n : {0u, 1u, 3u, 7u, 8u, 15u, 16u, 17u, 64u, 129u, 1000u}) {
        CAPTURE(n);
        const auto af = random_vector<float>(rng, n);
        const auto bf = random_vector<float>(rng, n);
        const auto ad = random_vector<double>(rng, n);
        const auto bd = random_vector<double>(rng, n);
        long double magf = 0, magd = 0, magdf = 0, magdd = 0;
        for (std::size_t i = 0; i < n; ++i) {
          magf += std::fabs(static_cast<long double>(af[i]) * bf[i]);
          magd += std::fabs(static_cast<long double>(ad[i]) * bd[i]);
          magdf += std::pow(static_cast<long double>(af[i]) - bf[i], 2);
          magdd += std::pow(static_cast<long double>(ad[i]) - bd[i], 2);
        }
        CHECK(std::fabs(kernels::dot(*table, std::span<const float>(af), std::span<const float>(bf)) -
                        static_cast<double>(reference_dot(af, bf))) <=
              reduction_bound<float>(n, magf) + 1e-30);
        CHECK(std::fabs(kernels::dot(*table, std::span<const double>(ad), std::span<const double>(bd)) -
                        static_cast<double>(reference_dot(ad, bd))) <=
              reduction_bound<double>(n, magd) + 1e-300);
        CHECK(std::fabs(kernels::squared_distance(*table, std::span<const float>(af),
                                                  std::span<const float>(bf)) -
                        static_cast<double>(reference_distance(af, bf))) <=
              reduction_bound<float>(n, magdf) + 1e-30);
        CHECK(std::fabs(kernels::squared_distance(*table, std::span<const double>(ad),
                                                  std::span<const double>(bd)) -
                        static_cast<double>(reference_distance(ad, bd))) <=
              reduction_bound<double>(n, magdd) + 1e-300);
      }
    }
  }

  TEST_CASE("axpy variants agree with the scalar path exactly") {
    std::mt19937_64 rng(12);
    for (const auto* table : kernels::available_tables()) {
      CAPTURE(kernels::isa_name(table->isa));
      for (std::size_t n : {1u, 5u, 8u, 13u, 33u}) {
        const auto x = random_vector<double>(rng, n);
        auto y = random_vector<double>(rng, n);
        auto expected = y;
        for (std::size_t i = 0; i < n; ++i) expected[i] = std::fma(0.75, x[i], expected[i]);
        kernels::axpy(*table, 0.75, std::span<const double>(x), std::span<double>(y));
        for (std::size_t i = 0; i < n; ++i) CHECK(y[i] == doctest::Approx(expected[i]).epsilon(1e-15));

        const auto xf = random_vector<float>(rng, n);
        auto yf = random_vector<float>(rng, n);
        auto expectedf = yf;
        for (std::size_t i = 0; i < n; ++i) expectedf[i] = std::fma(-1.5f, xf[i], expectedf[i]);
        kernels::axpy(*table, -1.5f, std::span<const float>(xf), std::span<float>(yf));
        for (std::size_t i = 0; i < n; ++i) CHECK(yf[i] == doctest::Approx(expectedf[i]).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("nearest_rows agrees with an exhaustive scan for every variant") {
    std::mt19937_64 rng(13);
    const std::size_t dim = 9, points = 300, entries = 17;
    const auto p = random_vector<double>(rng, points * dim);
    const auto c = random_vector<double>(rng, entries * dim);
    for (const auto* table : kernels::available_tables()) {
      std::vector<int64_t> index(points);
      std::vector<double> distance(points);
      kernels::nearest_rows<double>(*table, p, c, dim, index, distance);
      for (std::size_t i = 0; i < points; ++i) {
        int64_t best = 0;
        long double best_d = std::numeric_limits<long double>::max();
        for (std::size_t k = 0; k < entries; ++k) {
          long double d = 0;
          for (std::size_t j = 0; j < dim; ++j) {
            const long double diff = static_cast<long double>(p[i * dim + j]) - c[k * dim + j];
            d += diff * diff;
          }
          if (d < best_d) {
            best_d = d;
            best = static_cast<int64_t>(k);
          }
        }
        CHECK(index[i] == best);
        CHECK(distance[i] == doctest::Approx(static_cast<double>(best_d)).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("nearest_rows resolves ties to the lowest index") {
    const std::vector<float> codebook{1.0f, 0.0f, -1.0f, 0.0f, 1.0f, 0.0f};
    const std::vector<float> point{0.0f, 0.0f};
    for (const auto* table : kernels::available_tables()) {
      std::vector<int64_t> index(1);
      std::vector<float> distance(1);
      kernels::nearest_rows<float>(*table, point, codebook, 2, index, distance);
      CHECK(index[0] == 0);
      CHECK(distance[0] == 1.0f);
    }
  }

  TEST_CASE("scatter_accumulate skips excluded rows and matches every variant") {
    std::mt19937_64 rng(14);
    const std::size_t dim = 5, n = 40, k = 6;
    const auto points = random_vector<double>(rng, n * dim);
    std::vector<int64_t> index(n);
    std::vector<uint8_t> include(n);
    for (std::size_t i = 0; i < n; ++i) {
      index[i] = static_cast<int64_t>(rng() % k);
      include[i] = static_cast<uint8_t>(i % 3 != 0);
    }
    std::vector<double> ref_sums(k * dim, 0.0), ref_counts(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (!include[i]) continue;
      ref_counts[index[i]] += 0.5;
      for (std::size_t j = 0; j < dim; ++j) ref_sums[index[i] * dim + j] += 0.5 * points[i * dim + j];
    }
    for (const auto* table : kernels::available_tables()) {
      std::vector<double> sums(k * dim, 0.0), counts(k, 0.0);
      kernels::scatter_accumulate<double>(*table, points, dim, index, include, 0.5, sums, counts);
      for (std::size_t i = 0; i < k; ++i) CHECK(counts[i] == ref_counts[i]);
      for (std::size_t i = 0; i < k * dim; ++i) CHECK(sums[i] == doctest::Approx(ref_sums[i]).epsilon(1e-14));
    }
  }
}
