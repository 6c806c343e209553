#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "scratch.hpp"
#include "vqctap/audio.hpp"
#include "vqctap/corpus.hpp"
#include "vqctap/errors.hpp"
#include "vqctap/phonemes.hpp"

using namespace vqctap;

namespace {

Waveform two_tone(int64_t n) {
  Waveform w;
  w.samples.resize(static_cast<std::size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    w.samples[i] = static_cast<float>(0.5 * std::sin(2 * std::numbers::pi * 440 * t) +
                                      0.25 * std::sin(2 * std::numbers::pi * 3000 * t));
  }
  return w;
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("one second of audio yields 100 frames of 40 bands") {
    const auto mel = mel_spectrogram(two_tone(24000));
    CHECK(mel.values.sizes() == torch::IntArrayRef({100, 40}));
    CHECK(mel_frame_count(24000) == 100);
    CHECK(mel_frame_count(9 * 24000 + 14400) == 960);
  }

  TEST_CASE("log-mel values match a direct DFT oracle") {
    // Dense-DFT numpy recomputation of the same analysis chain.
    const auto mel = mel_spectrogram(two_tone(2400));
    REQUIRE(mel.frames() == 10);
    const auto v = mel.values.accessor<float, 2>();
    CHECK(std::fabs(v[0][3] - -0.15358990287604715) < 1e-3);
    CHECK(std::fabs(v[0][10] - -2.7023281758428093) < 1e-3);
    CHECK(std::fabs(v[0][25] - -2.0857436962404408) < 1e-3);
    CHECK(std::fabs(v[5][3] - -2.7814399203678337) < 1e-3);
    CHECK(std::fabs(v[5][10] - -8.46544893733346) < 1e-2);
    CHECK(std::fabs(v[5][39] - -11.512925464970229) < 1e-6);
    CHECK(std::fabs(v[9][10] - -2.6135838303972805) < 1e-3);
    CHECK(std::fabs(v[9][39] - -5.63790237867356) < 1e-3);
  }

  TEST_CASE("filterbank rows are Slaney-area normalized triangles") {
    const auto bank = mel_filterbank();
    CHECK(bank.sizes() == torch::IntArrayRef({40, 481}));
    CHECK(bank.min().item<float>() >= 0.0f);
    CHECK(std::fabs(bank[0].sum().item<double>() - 0.03961489935829723) < 1e-6);
    CHECK(std::fabs(bank[39].sum().item<double>() - 0.039996364176207805) < 1e-6);
  }

  TEST_CASE("mel extraction is bit-identical across calls") {
    const auto w = two_tone(5000);
    CHECK(torch::equal(mel_spectrogram(w).values, mel_spectrogram(w).values));
  }

  TEST_CASE("mel extraction rejects bad rates and short input") {
    auto w = two_tone(2400);
    w.rate = 16000;
    CHECK_THROWS_AS(mel_spectrogram(w), RateError);
    CHECK_THROWS_AS(mel_spectrogram(two_tone(959)), LengthError);
    CHECK_NOTHROW(mel_spectrogram(two_tone(960)));
  }

  TEST_CASE("silence hits the log floor") {
    Waveform w;
    w.samples.assign(2400, 0.0f);
    const auto mel = mel_spectrogram(w);
    CHECK(mel.values.max().item<float>() == doctest::Approx(std::log(1e-5)));
  }

  TEST_CASE("length_regulate repeats each phoneme by its duration") {
    CHECK(length_regulate({{5, 6}}, {{2, 3}}).ids == std::vector<int64_t>{5, 5, 6, 6, 6});
    CHECK(length_regulate({{5, 6, 7}}, {{1, 0, 2}}).ids == std::vector<int64_t>{5, 7, 7});
    CHECK_THROWS_AS(length_regulate({{5}}, {{0}}), LengthError);
    CHECK_THROWS_AS(length_regulate({{5, 6}}, {{1}}), ShapeError);
    CHECK_THROWS_AS(length_regulate({{5}}, {{-1}}), ParameterError);
  }

  TEST_CASE("length_regulate preserves per-phoneme frame counts") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      PhonemeSeq p;
      DurationSeq d;
      const auto n = 1 + rng() % 12;
      for (std::size_t i = 0; i < n; ++i) {
        p.ids.push_back(static_cast<int64_t>(i));  // distinct ids
        d.counts.push_back(static_cast<int64_t>(rng() % 6));
      }
      d.counts[0] += 1;
      const auto out = length_regulate(p, d);
      std::map<int64_t, int64_t> seen;
      for (auto id : out.ids) ++seen[id];
      int64_t total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(seen[p.ids[i]] == d.counts[i]);
        total += d.counts[i];
      }
      CHECK(static_cast<int64_t>(out.ids.size()) == total);
      for (std::size_t i = 1; i < out.ids.size(); ++i) CHECK(out.ids[i - 1] <= out.ids[i]);
    }
  }

  TEST_CASE("pad_to_multiple pads to the next multiple with a validity mask") {
    const auto x = torch::arange(10 * 3, torch::kFloat32).view({10, 3});
    const auto padded = pad_to_multiple(x, 4);
    CHECK(padded.values.size(0) == 12);
    CHECK(padded.mask.sum().item<int64_t>() == 10);
    CHECK_FALSE(padded.mask[10].item<bool>());
    CHECK(padded.values.slice(0, 10).abs().sum().item<float>() == 0.0f);
    CHECK(torch::equal(padded.values.index({padded.mask}), x));

    CHECK(pad_to_multiple(torch::ones({8, 2}), 4).mask.all().item<bool>());
    const auto one = pad_to_multiple(torch::ones({1, 2}), 4);
    CHECK(one.values.size(0) == 4);
    CHECK(one.mask.sum().item<int64_t>() == 1);
    CHECK_THROWS_AS(pad_to_multiple(torch::ones({0, 2}), 4), LengthError);

    const std::vector<int64_t> ids{3, 4, 5};
    const auto pid = pad_to_multiple(ids, 4, 0);
    CHECK(pid.ids == std::vector<int64_t>{3, 4, 5, 0});
    CHECK(pid.mask == std::vector<uint8_t>{1, 1, 1, 0});
    CHECK_THROWS_AS(pad_to_multiple(std::span<const int64_t>{}, 4, 0), LengthError);
  }

  TEST_CASE("phoneme validation rejects out-of-vocabulary and inner padding") {
    PhonemeVocab vocab;
    CHECK_NOTHROW(validate(PhonemeSeq{{1, 2, 17}}, vocab));
    CHECK_THROWS_AS(validate(PhonemeSeq{{1, 18}}, vocab), InputError);
    CHECK_THROWS_AS(validate(PhonemeSeq{{2, 0, 3}}, vocab), InputError);
  }

  TEST_CASE("synthetic corpus is deterministic and covers every speaker") {
    const auto a = make_synthetic_corpus(7, 8, 2);
    const auto b = make_synthetic_corpus(7, 8, 2);
    REQUIRE(a.utterances.size() == 8);
    std::set<int64_t> speakers;
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(a.utterances[i].wave.samples == b.utterances[i].wave.samples);
      CHECK(a.utterances[i].phonemes.ids == b.utterances[i].phonemes.ids);
      speakers.insert(a.utterances[i].speaker);
    }
    CHECK(speakers.size() == 2);
    CHECK_THROWS_AS(make_synthetic_corpus(7, 1, 2), ParameterError);
    CHECK_THROWS_AS(make_synthetic_corpus(7, 4, 1), ParameterError);
  }

  TEST_CASE("synthetic durations agree with recomputed mel frame counts") {
    for (uint64_t seed : {1u, 7u, 99u}) {
      for (const auto& u : make_synthetic_corpus(seed, 6, 3).utterances) {
        int64_t total = 0;
        for (auto d : u.durations.counts) total += d;
        const double seconds = static_cast<double>(u.wave.samples.size()) / kSampleRate;
        CHECK(seconds >= 1.0);
        CHECK(seconds <= 3.0);
        CHECK(mel_spectrogram(u.wave).frames() == total);
        CHECK(static_cast<int64_t>(u.wave.samples.size()) == total * kHopSize);
      }
    }
  }

  TEST_CASE("wav, mel and manifest files round-trip") {
    const auto dir = vqctap::testing::scratch_dir("features_io");
    const auto corpus = make_synthetic_corpus(5, 2, 2);
    const auto manifest = write_corpus(corpus, dir);
    const auto entries = read_manifest(manifest);
    REQUIRE(entries.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& u = corpus.utterances[i];
      CHECK(entries[i].utt_id == u.id);
      CHECK(entries[i].phonemes.ids == u.phonemes.ids);
      CHECK(entries[i].durations.counts == u.durations.counts);
      const auto wave = read_wav(entries[i].wav_path);
      REQUIRE(wave.samples.size() == u.wave.samples.size());
      for (std::size_t k = 0; k < wave.samples.size(); k += 97) {
        CHECK(std::fabs(wave.samples[k] - u.wave.samples[k]) <= 1.0f / 32767.0f);
      }
    }

    const auto mel = mel_spectrogram(corpus.utterances[0].wave);
    write_mel(dir / "a.mel", mel);
    CHECK(torch::equal(read_mel(dir / "a.mel").values, mel.values));
    std::ifstream raw(dir / "a.mel", std::ios::binary);
    uint32_t header[2];
    raw.read(reinterpret_cast<char*>(header), sizeof header);
    CHECK(header[0] == static_cast<uint32_t>(mel.frames()));
    CHECK(header[1] == 40u);

    {
      std::ofstream bad(dir / "bad.mel", std::ios::binary);
      bad.write("\x02\x00\x00\x00\x28\x00\x00\x00", 8);
    }
    CHECK_THROWS_AS(read_mel(dir / "bad.mel"), FormatError);
    CHECK_THROWS_AS(read_wav(dir / "missing.wav"), FileError);
  }

  TEST_CASE("griffin-lim preview has the mel's duration") {
    const auto mel = mel_spectrogram(two_tone(4800));
    const auto wave = griffin_lim(mel, 4);
    CHECK(static_cast<int64_t>(wave.samples.size()) == mel.frames() * kHopSize);
    for (float s : wave.samples) REQUIRE(std::isfinite(s));
  }
}
