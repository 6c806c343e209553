#include <doctest.h>

#include <cmath>
#include <fstream>
#include <string>

#include "scratch.hpp"
#include "vqctap/errors.hpp"
#include "vqctap/pipelines.hpp"

using namespace vqctap;

namespace {

// A barely trained model: enough to exercise shapes and error paths.
Checkpoint& untrained_checkpoint() {
  static Checkpoint ckpt = [] {
    Config config = desk_config();
    config.optim.batch_size = 2;
    const auto data = dataset_from_corpus(make_synthetic_corpus(13, 2, 2), true);
    Trainer trainer(config, 1);
    trainer.train_step(trainer.next_batch(data, nullptr));
    Checkpoint c = trainer.to_checkpoint();
    Connector connector(config, 1);
    auto encoded = encode_for_connector(data, trainer.model());
    auto [s0, p] = connector.next_batch(encoded);
    connector.train_step(s0, p);
    connector.store(c);
    return c;
  }();
  return ckpt;
}

Waveform tone(int64_t samples, double hz) {
  Waveform w;
  for (int64_t i = 0; i < samples; ++i) {
    w.samples.push_back(static_cast<float>(0.3 * std::sin(2 * 3.14159265358979 * hz * i / kSampleRate)));
  }
  return w;
}

std::vector<std::string> lines_of(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_SUITE("pipelines") {
  TEST_CASE("tts output length follows the regulated phoneme length") {
    auto model = load_inference(untrained_checkpoint());
    TtsRequest request;
    request.phonemes.ids = {2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    request.prompt = tone(24000, 220);
    request.seed = 3;
    const auto mel = tts_synthesize(request, model);
    CHECK(mel.values.sizes() == torch::IntArrayRef({100, 40}));

    request.durations = DurationSeq{{3, 4, 1, 1, 1, 1, 1, 1, 1, 1}};
    CHECK(tts_synthesize(request, model).frames() == 16);
    request.use_connector = false;
    CHECK(tts_synthesize(request, model).frames() == 16);
  }

  TEST_CASE("tts is deterministic for a fixed seed") {
    auto model = load_inference(untrained_checkpoint());
    TtsRequest request;
    request.phonemes.ids = {4, 5, 6};
    request.prompt = tone(12000, 180);
    request.seed = 11;
    const auto a = tts_synthesize(request, model);
    const auto b = tts_synthesize(request, model);
    CHECK(torch::equal(a.values, b.values));
    CHECK(torch::isfinite(a.values).all().item<bool>());
  }

  TEST_CASE("tts input and state errors") {
    auto model = load_inference(untrained_checkpoint());
    TtsRequest request;
    request.prompt = tone(12000, 180);
    CHECK_THROWS_AS(tts_synthesize(request, model), InputError);
    request.phonemes.ids = {4, 99};
    CHECK_THROWS_AS(tts_synthesize(request, model), InputError);

    Checkpoint bare = untrained_checkpoint();
    bare.manifest.erase("connector.steps_trained");
    auto no_connector = load_inference(bare);
    CHECK_FALSE(no_connector.connector);
    request.phonemes.ids = {4, 5};
    CHECK_THROWS_AS(tts_synthesize(request, no_connector), StateError);
    request.use_connector = false;
    CHECK_NOTHROW(tts_synthesize(request, no_connector));
  }

  TEST_CASE("vc output matches the padded source length") {
    auto model = load_inference(untrained_checkpoint());
    const auto source = tone(24000 + 240 * 3, 200);
    const auto out = vc_convert(VcRequest{source, tone(30000, 300)}, model);
    CHECK(out.frames() == 104);
    CHECK(out.values.size(1) == 40);
    CHECK_THROWS_AS(vc_convert(VcRequest{tone(500, 200), tone(30000, 300)}, model), InputError);
  }

  TEST_CASE("asr is deterministic and rejects tiny inputs") {
    auto model = load_inference(untrained_checkpoint());
    const auto wave = tone(24000, 260);
    CHECK(asr_transcribe(wave, model).ids == asr_transcribe(wave, model).ids);
    for (auto id : asr_transcribe(wave, model).ids) {
      CHECK(id != 0);
      CHECK(id != 1);
    }
    CHECK_THROWS_AS(asr_transcribe(tone(100, 200), model), InputError);
  }

  TEST_CASE("pipelines leave the model parameters untouched") {
    auto model = load_inference(untrained_checkpoint());
    std::vector<torch::Tensor> before;
    for (const auto& p : model.model.net->parameters()) before.push_back(p.clone());
    const auto entries_before = model.model.codebook.entries.clone();
    TtsRequest request;
    request.phonemes.ids = {4, 5, 6};
    request.prompt = tone(12000, 180);
    tts_synthesize(request, model);
    vc_convert(VcRequest{tone(12000, 200), tone(12000, 300)}, model);
    asr_transcribe(tone(12000, 200), model);
    const auto after = model.model.net->parameters();
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(torch::equal(before[i], after[i]));
    CHECK(torch::equal(entries_before, model.model.codebook.entries));
  }

  TEST_CASE("embedding export row arithmetic") {
    const auto dir = vqctap::testing::scratch_dir("export");
    auto corpus = make_synthetic_corpus(17, 2, 2);
    // Trim both utterances to exactly one second: 100 frames, 25 compressed.
    for (auto& u : corpus.utterances) {
      u.wave.samples.resize(24000);
      u.phonemes.ids = {1, 5, 1};
      u.durations.counts = {10, 80, 10};
    }
    const auto manifest = write_corpus(corpus, dir);
    auto model = load_inference(untrained_checkpoint());
    export_embeddings(read_manifest(manifest), model, dir / "emb.csv");
    const auto lines = lines_of(dir / "emb.csv");
    REQUIRE(lines.size() == 1 + 50 + 50 + 2);
    CHECK(lines[0].rfind("utt_id,frame_idx,kind,dim_0,", 0) == 0);
    CHECK(lines[0].find(",dim_63") != std::string::npos);
    int s = 0, p = 0, g = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto first = lines[i].find(',');
      const auto second = lines[i].find(',', first + 1);
      const auto kind = lines[i].substr(second + 1, 1);
      s += kind == "S";
      p += kind == "P";
      if (kind == "G") {
        ++g;
        CHECK(lines[i].substr(first + 1, second - first - 1) == "0");
      }
    }
    CHECK(s == 50);
    CHECK(p == 50);
    CHECK(g == 2);

    export_embeddings({}, model, dir / "empty.csv");
    CHECK(lines_of(dir / "empty.csv").size() == 1);
    CHECK_THROWS_AS(export_embeddings({}, model, dir / "no/such/dir/x.csv"), FileError);
  }
}
