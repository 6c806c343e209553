#include <doctest.h>

#include <cmath>
#include <limits>

#include "scratch.hpp"
#include "vqctap/errors.hpp"
#include "vqctap/scheduler.hpp"

using namespace vqctap;

namespace {

const Dataset& small_paired() {
  static const Dataset data = dataset_from_corpus(make_synthetic_corpus(3, 4, 2), true);
  return data;
}

const Dataset& small_unpaired() {
  static const Dataset data = dataset_from_corpus(make_synthetic_corpus(4, 2, 2), false);
  return data;
}

Config quick_config() {
  Config c = desk_config();
  c.optim.batch_size = 2;
  c.schedule.kl_start = 2;
  c.schedule.kl_end = 6;
  c.schedule.consistency_start = 3;
  c.schedule.consistency_end = 7;
  return c;
}

bool same_record(const LossRecord& a, const LossRecord& b) {
  return a.step == b.step && a.total == b.total && a.mse == b.mse && a.vq == b.vq &&
         a.classify == b.classify && a.contrastive == b.contrastive && a.kl == b.kl &&
         a.consistency == b.consistency && a.beat_kl == b.beat_kl &&
         a.beat_consistency == b.beat_consistency;
}

bool same_parameters(Trainer& a, Trainer& b) {
  const auto pa = a.model()->parameters();
  const auto pb = b.model()->parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!torch::equal(pa[i], pb[i])) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("scheduler") {
  TEST_CASE("loss weight ramp") {
    CHECK(loss_weight(500, 500, 1500, 0.01) == 0.0);
    CHECK(loss_weight(0, 500, 1500, 0.01) == 0.0);
    CHECK(loss_weight(1000, 500, 1500, 0.01) == 0.005);
    CHECK(loss_weight(1500, 500, 1500, 0.01) == 0.01);
    CHECK(loss_weight(2500, 500, 1500, 0.01) == 0.01);
    CHECK(loss_weight(750, 500, 1500, 1.0) == 0.25);
    CHECK_THROWS_AS(loss_weight(0, 10, 10, 1.0), ParameterError);
    CHECK_THROWS_AS(loss_weight(0, 11, 10, 1.0), ParameterError);
  }

  TEST_CASE("loss weight is piecewise linear and monotone") {
    double previous = 0;
    for (int64_t step = 0; step < 40; ++step) {
      const double w = loss_weight(step, 10, 30, 2.0);
      CHECK(w >= previous);
      if (step > 10 && step < 30) {
        CHECK(w == doctest::Approx(2.0 * static_cast<double>(step - 10) / 20.0).epsilon(1e-15));
      }
      previous = w;
    }
  }

  TEST_CASE("collate pads to a multiple of four and masks padding") {
    const auto& data = small_paired();
    std::vector<const Example*> rows{&data.items[0], &data.items[1]};
    const auto batch = collate(rows, {}, 300, {0, 0}, 0);
    const int64_t longest = std::max(data.items[0].mel.size(0), data.items[1].mel.size(0));
    CHECK(batch.mel.size(1) % 4 == 0);
    CHECK(batch.mel.size(1) >= longest);
    CHECK(batch.mask[0].sum().item<int64_t>() == data.items[0].mel.size(0));
    CHECK(batch.mask[1].sum().item<int64_t>() == data.items[1].mel.size(0));
    CHECK(batch.ids.masked_select(batch.mask.logical_not()).eq(0).all().item<bool>());
    CHECK_FALSE(batch.has_random());
    CHECK_THROWS_AS(collate({}, {}, 300, {}, 0), BatchError);
  }

  TEST_CASE("masked losses ignore padded frames") {
    auto pred = torch::zeros({1, 4, 2});
    auto target = torch::ones({1, 4, 2});
    target[0][3] = torch::full({2}, 100.0f);
    auto mask = torch::tensor({{true, true, true, false}});
    CHECK(masked_mse(pred, target, mask).item<float>() == doctest::Approx(1.0));
    auto logits = torch::zeros({1, 4, 3});
    auto ids = torch::tensor({{0, 1, 2, 0}}, torch::kInt64);
    CHECK(masked_cross_entropy(logits, ids, mask).item<float>() == doctest::Approx(std::log(3.0)));
  }

  TEST_CASE("total is recomputable from the record and ramps follow loss_weight") {
    const Config config = quick_config();
    Trainer trainer(config, 5);
    for (int i = 0; i < 8; ++i) {
      const auto batch = trainer.next_batch(small_paired(), &small_unpaired());
      const auto rec = trainer.train_step(batch);
      const auto& s = config.schedule;
      CHECK(rec.step == i);
      CHECK(rec.beat_kl == loss_weight(i, s.kl_start, s.kl_end, s.kl_upper));
      CHECK(rec.beat_consistency ==
            loss_weight(i, s.consistency_start, s.consistency_end, s.consistency_upper));
      const double expected = s.weight_mse * rec.mse + s.weight_vq * rec.vq +
                              s.weight_classify * rec.classify +
                              s.weight_contrastive * rec.contrastive + rec.beat_kl * rec.kl +
                              rec.beat_consistency * rec.consistency;
      CHECK(rec.total == doctest::Approx(expected).epsilon(1e-14));
      CHECK(std::isfinite(rec.consistency));
      CHECK(trainer.step() == i + 1);
      CHECK(trainer.codebook().size() == config.model.codebook_size);
      CHECK(torch::isfinite(trainer.codebook().entries).all().item<bool>());
    }
  }

  TEST_CASE("ramped terms contribute nothing before their start steps") {
    // Without a margin the KL term is non-zero as soon as its weight is.
    Config low = quick_config();
    low.schedule.kl_margin = 0.0;
    Config high = low;
    high.schedule.kl_upper = 50.0;
    high.schedule.consistency_upper = 50.0;
    Trainer a(low, 9);
    Trainer b(high, 9);
    for (int i = 0; i <= low.schedule.kl_start; ++i) {
      a.train_step(a.next_batch(small_paired(), &small_unpaired()));
      b.train_step(b.next_batch(small_paired(), &small_unpaired()));
    }
    CHECK(same_parameters(a, b));
    a.train_step(a.next_batch(small_paired(), &small_unpaired()));
    b.train_step(b.next_batch(small_paired(), &small_unpaired()));
    CHECK_FALSE(same_parameters(a, b));
  }

  TEST_CASE("same seed reproduces the loss trace exactly") {
    const Config config = quick_config();
    Trainer a(config, 17);
    Trainer b(config, 17);
    for (int i = 0; i < 10; ++i) {
      const auto ra = a.train_step(a.next_batch(small_paired(), &small_unpaired()));
      const auto rb = b.train_step(b.next_batch(small_paired(), &small_unpaired()));
      REQUIRE(same_record(ra, rb));
    }
  }

  TEST_CASE("consistency without random speech is a batch error") {
    Config config = quick_config();
    Trainer trainer(config, 1);
    for (int i = 0; i < config.schedule.consistency_start + 1; ++i) {
      trainer.train_step(trainer.next_batch(small_paired(), nullptr));
    }
    CHECK_THROWS_AS(trainer.train_step(trainer.next_batch(small_paired(), nullptr)), BatchError);
  }

  TEST_CASE("non-finite losses raise a divergence error with the step") {
    Trainer trainer(quick_config(), 1);
    trainer.train_step(trainer.next_batch(small_paired(), &small_unpaired()));
    auto batch = trainer.next_batch(small_paired(), &small_unpaired());
    batch.mel[0][0][0] = std::numeric_limits<float>::quiet_NaN();
    try {
      trainer.train_step(batch);
      FAIL("expected a divergence error");
    } catch (const DivergenceError& e) {
      CHECK(e.step() == 1);
    }
  }

  TEST_CASE("loss log writes the documented header and round-trips") {
    const auto dir = vqctap::testing::scratch_dir("loss_log");
    CHECK(loss_csv_header() ==
          "step,loss_total,loss_mse,loss_vq,loss_classify,loss_contrastive,loss_kl,"
          "loss_consistency,beat_kl,beat_consistency");
    LossRecord rec;
    rec.step = 12;
    rec.total = 1.0 / 3.0;
    rec.mse = 0.1;
    rec.kl = 2e-17;
    rec.beat_consistency = 0.75;
    {
      LossLog log(dir / "log.csv");
      log.write(rec);
      rec.step = 13;
      log.write(rec);
    }
    const auto back = read_loss_log(dir / "log.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[1].step == 13);
    CHECK(back[0].total == rec.total);
    CHECK(back[0].kl == rec.kl);
    CHECK(back[0].beat_consistency == 0.75);
  }

  TEST_CASE("paired manifests must agree with the mel length") {
    const auto dir = vqctap::testing::scratch_dir("dataset");
    auto corpus = make_synthetic_corpus(2, 2, 2);
    corpus.utterances[1].durations.counts.back() += 3;
    const auto manifest = write_corpus(corpus, dir);
    CHECK_THROWS_AS(load_dataset(manifest, desk_config().model, true), InputError);
    CHECK(load_dataset(manifest, desk_config().model, false).items.size() == 2);
  }
}
