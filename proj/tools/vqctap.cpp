#include <ATen/Parallel.h>

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vqctap/audio.hpp"
#include "vqctap/checkpoint.hpp"
#include "vqctap/config.hpp"
#include "vqctap/connector.hpp"
#include "vqctap/corpus.hpp"
#include "vqctap/errors.hpp"
#include "vqctap/pipelines.hpp"
#include "vqctap/scheduler.hpp"

namespace fs = std::filesystem;
using namespace vqctap;

namespace {

std::vector<int64_t> parse_id_list(const std::string& text, const char* what) {
  std::vector<int64_t> out;
  std::istringstream in(text);
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoll(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw InputError(std::string("malformed ") + what + " '" + token + "'");
    }
  }
  return out;
}

int run_make_corpus(uint64_t seed, int64_t utts, int64_t speakers, const fs::path& out) {
  fs::create_directories(out);
  const auto corpus = make_synthetic_corpus(seed, utts, speakers);
  std::cout << write_corpus(corpus, out).string() << '\n';
  return 0;
}

int run_train(const std::string& config_path, const fs::path& data, const fs::path& unpaired,
              int64_t steps, uint64_t seed, const fs::path& out) {
  const Config config = config_path.empty() ? desk_config() : load_config(config_path);
  const auto paired_set = load_dataset(data, config.model, true);
  std::optional<Dataset> unpaired_set;
  if (!unpaired.empty()) unpaired_set = load_dataset(unpaired, config.model, false);

  fs::create_directories(out);
  Trainer trainer(config, seed);
  LossLog log(out / "train_log.csv");
  const auto started = std::chrono::steady_clock::now();
  for (int64_t i = 0; i < steps; ++i) {
    auto batch = trainer.next_batch(paired_set, unpaired_set ? &*unpaired_set : nullptr);
    const auto record = trainer.train_step(batch);
    log.write(record);
    if (record.step % 100 == 0 || i + 1 == steps) {
      std::cerr << "step " << record.step << " total " << record.total << " mse " << record.mse
                << " classify " << record.classify << " contrastive " << record.contrastive
                << '\n';
    }
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  save_checkpoint(out / "checkpoint.bin", trainer.to_checkpoint());
  std::cerr << "trained " << steps << " steps in " << seconds << " s\n";
  return 0;
}

int run_train_connector(const fs::path& base, const std::string& config_path, const fs::path& data,
                        int64_t steps, uint64_t seed, const fs::path& out) {
  auto checkpoint = load_checkpoint(base);
  const Config config = config_path.empty() ? checkpoint_config(checkpoint) : load_config(config_path);
  auto model = load_model(checkpoint, config);
  const auto encoded = encode_for_connector(load_dataset(data, config.model, true), model.net);

  fs::create_directories(out);
  Connector connector(config, seed);
  std::ofstream log(out / "connector_log.csv");
  if (!log) throw FileError("cannot write " + (out / "connector_log.csv").string());
  log << "step,loss\n";
  for (int64_t i = 0; i < steps; ++i) {
    auto [s0, p] = connector.next_batch(encoded);
    const double loss = connector.train_step(s0, p);
    log << i << ',' << loss << '\n';
    if (i % 500 == 0 || i + 1 == steps) std::cerr << "step " << i << " loss " << loss << '\n';
  }
  checkpoint.manifest["config"] = to_text(config);
  connector.store(checkpoint);
  save_checkpoint(out / "checkpoint.bin", checkpoint);
  return 0;
}

int run_tts(const fs::path& ckpt, const std::string& phonemes, const std::string& durations,
            const fs::path& prompt, const fs::path& out, uint64_t seed, bool no_connector) {
  auto model = load_inference(ckpt);
  TtsRequest request;
  request.phonemes.ids = parse_id_list(phonemes, "phoneme id");
  if (!durations.empty()) request.durations = DurationSeq{parse_id_list(durations, "duration")};
  request.prompt = read_wav(prompt);
  request.seed = seed;
  request.use_connector = !no_connector;
  write_mel(out, tts_synthesize(request, model));
  return 0;
}

int run_vc(const fs::path& ckpt, const fs::path& source, const fs::path& prompt, const fs::path& out) {
  auto model = load_inference(ckpt);
  write_mel(out, vc_convert(VcRequest{read_wav(source), read_wav(prompt)}, model));
  return 0;
}

int run_asr(const fs::path& ckpt, const fs::path& wav) {
  auto model = load_inference(ckpt);
  const auto result = asr_transcribe(read_wav(wav), model);
  for (std::size_t i = 0; i < result.ids.size(); ++i) std::cout << (i ? " " : "") << result.ids[i];
  std::cout << '\n';
  return 0;
}

int run_export(const fs::path& ckpt, const fs::path& data, const fs::path& out) {
  auto model = load_inference(ckpt);
  export_embeddings(read_manifest(data), model, out);
  return 0;
}

int run_mel2wav(const fs::path& mel, const fs::path& out, int iterations) {
  write_wav(out, griffin_lim(read_mel(mel), iterations));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  at::set_num_threads(1);
  CLI::App app{"VQ-CTAP speech/text representation learning"};
  app.require_subcommand(1);

  uint64_t seed = 7;
  int64_t utts = 8;
  int64_t speakers = 2;
  std::string out;
  auto* corpus_cmd = app.add_subcommand("make-corpus", "Write a synthetic paired corpus");
  corpus_cmd->add_option("--seed", seed);
  corpus_cmd->add_option("--utts", utts);
  corpus_cmd->add_option("--speakers", speakers);
  corpus_cmd->add_option("--out", out)->required();

  std::string config_path;
  std::string data;
  std::string unpaired;
  int64_t steps = 3000;
  auto* train_cmd = app.add_subcommand("train", "Pre-train the transcoder");
  train_cmd->add_option("--config", config_path);
  train_cmd->add_option("--data", data)->required();
  train_cmd->add_option("--unpaired", unpaired);
  train_cmd->add_option("--steps", steps);
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--out", out)->required();

  std::string base;
  auto* connector_cmd = app.add_subcommand("train-connector", "Train the semantic connector");
  connector_cmd->add_option("--checkpoint", base)->required();
  connector_cmd->add_option("--config", config_path);
  connector_cmd->add_option("--data", data)->required();
  connector_cmd->add_option("--steps", steps);
  connector_cmd->add_option("--seed", seed);
  connector_cmd->add_option("--out", out)->required();

  std::string ckpt;
  std::string phonemes;
  std::string durations;
  std::string prompt;
  bool no_connector = false;
  auto* tts_cmd = app.add_subcommand("tts", "Synthesize a mel spectrogram from phonemes");
  tts_cmd->add_option("--ckpt", ckpt)->required();
  tts_cmd->add_option("--phonemes", phonemes)->required();
  tts_cmd->add_option("--durations", durations);
  tts_cmd->add_option("--prompt", prompt)->required();
  tts_cmd->add_option("--out", out)->required();
  tts_cmd->add_option("--seed", seed);
  tts_cmd->add_flag("--no-connector", no_connector, "Feed phoneme embeddings directly");

  std::string source;
  auto* vc_cmd = app.add_subcommand("vc", "Convert speech to the prompt's voice");
  vc_cmd->add_option("--ckpt", ckpt)->required();
  vc_cmd->add_option("--source", source)->required();
  vc_cmd->add_option("--prompt", prompt)->required();
  vc_cmd->add_option("--out", out)->required();

  std::string wav;
  auto* asr_cmd = app.add_subcommand("asr", "Print the recognized phoneme ids");
  asr_cmd->add_option("--ckpt", ckpt)->required();
  asr_cmd->add_option("--wav", wav)->required();

  auto* export_cmd = app.add_subcommand("export-embeddings", "Write S, P and G embeddings as CSV");
  export_cmd->add_option("--ckpt", ckpt)->required();
  export_cmd->add_option("--data", data)->required();
  export_cmd->add_option("--out", out)->required();

  std::string mel;
  int iterations = 32;
  auto* mel2wav_cmd = app.add_subcommand("mel2wav", "Griffin-Lim preview of a mel file");
  mel2wav_cmd->add_option("--mel", mel)->required();
  mel2wav_cmd->add_option("--out", out)->required();
  mel2wav_cmd->add_option("--iterations", iterations);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*corpus_cmd) return run_make_corpus(seed, utts, speakers, out);
    if (*train_cmd) return run_train(config_path, data, unpaired, steps, seed, out);
    if (*connector_cmd) return run_train_connector(base, config_path, data, steps, seed, out);
    if (*tts_cmd) return run_tts(ckpt, phonemes, durations, prompt, out, seed, no_connector);
    if (*vc_cmd) return run_vc(ckpt, source, prompt, out);
    if (*asr_cmd) return run_asr(ckpt, wav);
    if (*export_cmd) return run_export(ckpt, data, out);
    if (*mel2wav_cmd) return run_mel2wav(mel, out, iterations);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
