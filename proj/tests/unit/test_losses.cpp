#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vqctap/errors.hpp"
#include "vqctap/losses.hpp"

using namespace vqctap;
using vqctap::testing::to_matrix;

namespace {

LatentSeq full(const torch::Tensor& values) {
  return LatentSeq{values, torch::ones({values.size(0), values.size(1)}, torch::kBool)};
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("kl margin closed-form values") {
    const auto one = torch::ones({1}, torch::kFloat64);
    CHECK(kl_margin_loss(torch::zeros({3}, torch::kFloat64), torch::ones({3}, torch::kFloat64), 0.0)
              .item<double>() == 0.0);
    CHECK(kl_margin_loss(one, one, 0.0).item<double>() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(kl_margin_loss(one, one, 1.0).item<double>() == 0.0);
    CHECK_THROWS_AS(kl_margin_loss(one, torch::zeros({1}, torch::kFloat64), 0.0), DomainError);
    CHECK_THROWS_AS(kl_margin_loss(one, -one, 0.0), DomainError);
  }

  TEST_CASE("kl margin is nonincreasing in the margin") {
    torch::manual_seed(41);
    const auto mu = torch::randn({4, 6}, torch::kFloat64);
    const auto sigma = torch::rand({4, 6}, torch::kFloat64) + 0.2;
    double previous = 1e300;
    for (double delta = 0; delta < 10; delta += 0.25) {
      const double v = kl_margin_loss(mu, sigma, delta).item<double>();
      CHECK(v <= previous);
      previous = v;
    }
  }

  TEST_CASE("gram consistency closed-form values") {
    const auto a = torch::tensor({{1.0, 0.0}}, torch::kFloat64);
    const auto b = torch::tensor({{0.0, 1.0}}, torch::kFloat64);
    CHECK(gram_consistency_loss(a, b).item<double>() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(gram_consistency_loss(b, a).item<double>() == gram_consistency_loss(a, b).item<double>());
    CHECK(gram_consistency_loss(a, a).item<double>() == 0.0);
    CHECK_THROWS_AS(gram_consistency_loss(a, torch::zeros({1, 3}, torch::kFloat64)), ShapeError);
    CHECK_THROWS_AS(gram_consistency_loss(a, torch::zeros({2, 2}, torch::kFloat64)), ShapeError);
  }

  TEST_CASE("gram consistency vanishes for rotated batches") {
    // Q G has the same Gram matrix as G for orthogonal Q acting on the batch.
    torch::manual_seed(42);
    const auto g = torch::randn({3, 5}, torch::kFloat64);
    const auto q = std::get<0>(at::linalg_qr(torch::randn({3, 3}, torch::kFloat64)));
    CHECK(gram_consistency_loss(g, q.matmul(g)).item<double>() < 1e-24);
    CHECK(gram_consistency_loss(g, g * 1.1).item<double>() > 0.0);
  }

  TEST_CASE("contrastive loss limits") {
    const auto same = torch::ones({1, 5, 4}, torch::kFloat64);
    CHECK(contrastive_loss(full(same), full(same), 3.0).item<double>() ==
          doctest::Approx(std::log(5.0)).epsilon(1e-12));
    const auto eye = torch::eye(4, torch::kFloat64).unsqueeze(0);
    CHECK(contrastive_loss(full(eye), full(eye), 100.0).item<double>() < 1e-40);
  }

  TEST_CASE("contrastive loss matches a dense softmax oracle at N = 6") {
    torch::manual_seed(43);
    const auto s = torch::randn({2, 3, 5}, torch::kFloat64);
    const auto p = torch::randn({2, 3, 5}, torch::kFloat64);
    const double expected = testing::contrastive_oracle(to_matrix(s.view({6, 5})),
                                                        to_matrix(p.view({6, 5})), 1.0);
    CHECK(std::fabs(contrastive_loss(full(s), full(p), 1.0).item<double>() - expected) < 1e-6);
  }

  TEST_CASE("contrastive loss drops masked frames before flattening") {
    torch::manual_seed(44);
    const auto s = torch::randn({2, 4, 3}, torch::kFloat64);
    const auto p = torch::randn({2, 4, 3}, torch::kFloat64);
    auto mask = torch::ones({2, 4}, torch::kBool);
    mask[0][3] = false;
    mask[1][2] = false;
    mask[1][3] = false;
    const auto keep = mask.view({-1});
    const auto expected = testing::contrastive_oracle(to_matrix(s.view({8, 3}).index({keep})),
                                                      to_matrix(p.view({8, 3}).index({keep})), 2.0);
    const double got = contrastive_loss(LatentSeq{s, mask}, LatentSeq{p, mask}, 2.0).item<double>();
    CHECK(std::fabs(got - expected) < 1e-9);
    CHECK(similarity_matrix(LatentSeq{s, mask}, LatentSeq{p, mask},
                            torch::tensor(2.0, torch::kFloat64))
              .sizes() == torch::IntArrayRef({5, 5}));
  }

  TEST_CASE("contrastive loss is invariant to a shared frame permutation") {
    torch::manual_seed(45);
    const auto s = torch::randn({1, 9, 4}, torch::kFloat64);
    const auto p = torch::randn({1, 9, 4}, torch::kFloat64);
    const auto perm = torch::randperm(9, torch::kInt64);
    const double a = contrastive_loss(full(s), full(p), 1.5).item<double>();
    const double b =
        contrastive_loss(full(s.index_select(1, perm)), full(p.index_select(1, perm)), 1.5)
            .item<double>();
    CHECK(a >= 0.0);
    CHECK(std::fabs(a - b) < 1e-12);
  }

  TEST_CASE("contrastive loss rejects degenerate and mismatched batches") {
    const auto s = torch::randn({1, 3, 2}, torch::kFloat64);
    auto other = torch::ones({1, 3}, torch::kBool);
    other[0][2] = false;
    CHECK_THROWS_AS(contrastive_loss(full(s), LatentSeq{s, other}, 1.0), ConsistencyError);
    auto single = torch::zeros({1, 3}, torch::kBool);
    single[0][0] = true;
    CHECK_THROWS_AS(contrastive_loss(LatentSeq{s, single}, LatentSeq{s, single}, 1.0),
                    DegenerateInputError);
    CHECK_THROWS_AS(contrastive_loss(full(s), full(torch::randn({1, 3, 4}, torch::kFloat64)), 1.0),
                    ShapeError);
  }

  TEST_CASE("loss gradients match central finite differences") {
    torch::manual_seed(46);
    const auto p = torch::randn({1, 5, 3}, torch::kFloat64);
    const auto mask = torch::ones({1, 5}, torch::kBool);
    CHECK(testing::gradient_error(
              [&](const torch::Tensor& s) {
                return contrastive_loss(LatentSeq{s, mask}, LatentSeq{p, mask}, 1.7);
              },
              torch::randn({1, 5, 3}, torch::kFloat64)) < 1e-3);

    const auto sigma = torch::rand({2, 4}, torch::kFloat64) + 0.5;
    CHECK(testing::gradient_error(
              [&](const torch::Tensor& mu) { return kl_margin_loss(mu, sigma, 0.1); },
              torch::randn({2, 4}, torch::kFloat64) * 2) < 1e-3);
    const auto mu = torch::randn({2, 4}, torch::kFloat64) * 2;
    CHECK(testing::gradient_error(
              [&](const torch::Tensor& sg) { return kl_margin_loss(mu, sg, 0.1); },
              torch::rand({2, 4}, torch::kFloat64) + 0.5) < 1e-3);

    const auto gb = torch::randn({3, 4}, torch::kFloat64);
    CHECK(testing::gradient_error(
              [&](const torch::Tensor& ga) { return gram_consistency_loss(ga, gb); },
              torch::randn({3, 4}, torch::kFloat64)) < 1e-3);
  }

  TEST_CASE("retrieval accuracy counts diagonal argmax hits") {
    const auto eye = torch::eye(4, torch::kFloat64).unsqueeze(0);
    auto acc = retrieval_accuracy(full(eye), full(eye));
    CHECK(acc.frames == 4);
    CHECK(acc.speech_to_phoneme == 1.0);
    CHECK(acc.phoneme_to_speech == 1.0);
    const auto rolled = eye.roll(1, 1);
    acc = retrieval_accuracy(full(eye), full(rolled));
    CHECK(acc.speech_to_phoneme == 0.0);
  }
}
