#pragma once

// Brute-force reference computations in plain double loops, independent of
// the tensor implementations they check.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "vqctap/quantizer.hpp"

namespace vqctap::testing {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous();
  Matrix m(static_cast<std::size_t>(c.size(0)), std::vector<double>(c.size(1)));
  auto a = c.accessor<double, 2>();
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = a[i][j];
  }
  return m;
}

// 0.5 * (row CE + column CE) toward the diagonal of tau * S P^T.
inline double contrastive_oracle(const Matrix& s, const Matrix& p, double tau) {
  const std::size_t n = s.size();
  Matrix c(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < s[i].size(); ++k) dot += s[i][k] * p[j][k];
      c[i][j] = tau * dot;
    }
  }
  double rows = 0, cols = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    double col_max = row_max;
    for (std::size_t j = 0; j < n; ++j) {
      row_max = std::max(row_max, c[i][j]);
      col_max = std::max(col_max, c[j][i]);
    }
    double row_sum = 0, col_sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row_sum += std::exp(c[i][j] - row_max);
      col_sum += std::exp(c[j][i] - col_max);
    }
    rows += -(c[i][i] - row_max - std::log(row_sum));
    cols += -(c[i][i] - col_max - std::log(col_sum));
  }
  return 0.5 * (rows / n + cols / n);
}

// Batch-mean closed-form Gaussian KL to N(0, I), then the margin.
inline double kl_margin_oracle(const Matrix& mu, const Matrix& sigma, double delta) {
  double total = 0;
  for (std::size_t b = 0; b < mu.size(); ++b) {
    for (std::size_t d = 0; d < mu[b].size(); ++d) {
      const double s2 = sigma[b][d] * sigma[b][d];
      total += 0.5 * (mu[b][d] * mu[b][d] + s2 - 1.0 - std::log(s2));
    }
  }
  return std::max(0.0, total / static_cast<double>(mu.size()) - delta);
}

inline double gram_oracle(const Matrix& a, const Matrix& b) {
  const std::size_t n = a[0].size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double ga = 0, gb = 0;
      for (std::size_t r = 0; r < a.size(); ++r) {
        ga += a[r][i] * a[r][j];
        gb += b[r][i] * b[r][j];
      }
      total += (ga - gb) * (ga - gb);
    }
  }
  return total / static_cast<double>(n * n);
}

// Largest relative deviation between autograd and central differences of a
// scalar function of one float64 tensor, with the relative error floored at
// an absolute scale of 1.
inline double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f,
                             torch::Tensor x, double h = 1e-6) {
  x = x.detach().clone().to(torch::kFloat64).requires_grad_(true);
  f(x).backward();
  const auto analytic = x.grad().clone();
  torch::NoGradGuard no_grad;
  auto flat = x.view({-1});
  const auto g = analytic.view({-1});
  double worst = 0;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double original = flat[i].item<double>();
    flat[i] = original + h;
    const double up = f(x).item<double>();
    flat[i] = original - h;
    const double down = f(x).item<double>();
    flat[i] = original;
    const double numeric = (up - down) / (2 * h);
    const double err = std::fabs(g[i].item<double>() - numeric) / std::max(1.0, std::fabs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

struct ClusterRun {
  double max_gap = 0;  // largest L2 distance between an entry and its k-means mean
  int64_t updates = 0;
};

// Four well-separated Gaussian clusters in 2-D, 200 samples each. The codebook
// starts from four samples of the pooled data and takes `updates` EMA steps on
// the full sample set; the reference is Lloyd's k-means on the same samples.
inline ClusterRun cluster_convergence(uint64_t seed, int64_t updates = 500) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  const double centers[4][2] = {{0, 0}, {10, 0}, {0, 10}, {10, 10}};
  const int64_t per = 200;
  auto data = torch::empty({4 * per, 2}, torch::kFloat64);
  auto acc = data.accessor<double, 2>();
  for (int64_t c = 0; c < 4; ++c) {
    for (int64_t i = 0; i < per; ++i) {
      acc[c * per + i][0] = centers[c][0] + noise(rng);
      acc[c * per + i][1] = centers[c][1] + noise(rng);
    }
  }

  // Lloyd's algorithm from the true centers; converges in one pass here.
  double means[4][2] = {};
  for (int iter = 0; iter < 20; ++iter) {
    double sums[4][2] = {}, counts[4] = {};
    for (int64_t i = 0; i < 4 * per; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::max();
      for (int c = 0; c < 4; ++c) {
        const double* ref = iter == 0 ? centers[c] : means[c];
        const double d = std::pow(acc[i][0] - ref[0], 2) + std::pow(acc[i][1] - ref[1], 2);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      sums[best][0] += acc[i][0];
      sums[best][1] += acc[i][1];
      counts[best] += 1;
    }
    for (int c = 0; c < 4; ++c) {
      means[c][0] = sums[c][0] / counts[c];
      means[c][1] = sums[c][1] / counts[c];
    }
  }

  const int64_t picks[4] = {3, per + 5, 2 * per + 7, 3 * per + 11};
  auto init = torch::empty({4, 2}, torch::kFloat64);
  for (int c = 0; c < 4; ++c) init[c] = data[picks[c]];
  Codebook cb = Codebook::from_entries(init);
  LatentSeq s{data.unsqueeze(0), torch::ones({1, 4 * per}, torch::kBool)};
  for (int64_t u = 0; u < updates; ++u) ema_update(cb, s, quantize(s, cb));

  ClusterRun run;
  run.updates = updates;
  auto e = cb.entries.accessor<double, 2>();
  for (int c = 0; c < 4; ++c) {
    double best = std::numeric_limits<double>::max();
    for (int k = 0; k < 4; ++k) {
      best = std::min(best, std::hypot(e[k][0] - means[c][0], e[k][1] - means[c][1]));
    }
    run.max_gap = std::max(run.max_gap, best);
  }
  return run;
}

}  // namespace vqctap::testing
