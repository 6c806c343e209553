#include "vqctap/pipelines.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <string>

#include "vqctap/errors.hpp"
#include "vqctap/quantizer.hpp"

namespace vqctap {

namespace {

struct Frames {
  torch::Tensor values;  // [1, T, ...]
  torch::Tensor mask;    // [1, T]
};

Frames batch_of_one(const torch::Tensor& frames) {
  auto padded = pad_to_multiple(frames, kCompression);
  return Frames{padded.values.unsqueeze(0), padded.mask.unsqueeze(0)};
}

MelSpec mel_of(const Waveform& wave, const char* what) {
  try {
    return mel_spectrogram(wave);
  } catch (const LengthError& e) {
    throw InputError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

InferenceModel load_inference(const Checkpoint& checkpoint) {
  InferenceModel m;
  m.model = load_model(checkpoint);
  if (checkpoint.manifest.count("connector.steps_trained") != 0) {
    m.connector = Connector::restore(checkpoint, m.model.config);
  }
  return m;
}

InferenceModel load_inference(const std::filesystem::path& path) {
  return load_inference(load_checkpoint(path));
}

torch::Tensor paralinguistic_mean(const MelSpec& clip, InferenceModel& m) {
  torch::NoGradGuard no_grad;
  if (clip.frames() < 1) throw InputError("prompt clip has no frames");
  const int64_t len = std::min(clip.frames(), m.model.config.model.prompt_window_frames);
  auto values = clip.values.narrow(0, 0, len).unsqueeze(0);
  auto mask = torch::ones({1, len}, torch::kBool);
  m.model.net->eval();
  return m.model.net->prompt_encode(values, mask).mu;
}

MelSpec tts_synthesize(const TtsRequest& request, InferenceModel& m) {
  torch::NoGradGuard no_grad;
  const auto& cfg = m.model.config;
  const auto vocab = PhonemeVocab::from(cfg.model);
  if (request.phonemes.ids.empty()) throw InputError("tts: empty phoneme sequence");
  validate(request.phonemes, vocab);
  if (request.use_connector && !m.connector) {
    throw StateError("tts: checkpoint has no connector (train one or disable it)");
  }
  const auto durations =
      request.durations ? *request.durations
                        : uniform_durations(request.phonemes.ids.size(), cfg.inference.uniform_duration);
  const auto frames = length_regulate(request.phonemes, durations);
  const auto padded = pad_to_multiple(frames.ids, kCompression, cfg.model.pad_id);
  auto ids = torch::tensor(padded.ids, torch::kInt64).unsqueeze(0);
  auto mask = torch::tensor(std::vector<int64_t>(padded.mask.begin(), padded.mask.end()),
                            torch::kInt64)
                  .to(torch::kBool)
                  .unsqueeze(0);

  auto& net = m.model.net;
  net->eval();
  auto p = net->phoneme_encode(ids, mask);
  LatentSeq s = request.use_connector ? m.connector->sample(p, request.seed) : p;
  auto q = quantize(s, m.model.codebook);
  auto g = paralinguistic_mean(mel_of(request.prompt, "tts prompt"), m);
  auto mel = net->speech_decode(q.values, g, q.mask);
  return MelSpec{mel.squeeze(0).contiguous()};
}

MelSpec vc_convert(const VcRequest& request, InferenceModel& m) {
  torch::NoGradGuard no_grad;
  auto& net = m.model.net;
  net->eval();
  auto source = batch_of_one(mel_of(request.source, "vc source").values);
  auto g = paralinguistic_mean(mel_of(request.target_prompt, "vc prompt"), m);
  auto s = net->speech_encode(source.values, source.mask);
  auto q = quantize(s, m.model.codebook);
  auto mel = net->speech_decode(q.values, g, q.mask);
  return MelSpec{mel.squeeze(0).contiguous()};
}

PhonemeSeq asr_transcribe(const Waveform& wave, InferenceModel& m) {
  torch::NoGradGuard no_grad;
  auto& net = m.model.net;
  net->eval();
  const auto mel = mel_of(wave, "asr input");
  auto input = batch_of_one(mel.values);
  auto s = net->speech_encode(input.values, input.mask);
  auto q = quantize(s, m.model.codebook);
  auto logits = net->phoneme_decode(q.values, q.mask);
  auto best = logits.squeeze(0).narrow(0, 0, mel.frames()).argmax(-1).contiguous();

  const auto vocab = PhonemeVocab::from(m.model.config.model);
  PhonemeSeq out;
  int64_t previous = -1;
  const int64_t* ids = best.data_ptr<int64_t>();
  for (int64_t i = 0; i < best.numel(); ++i) {
    if (ids[i] != previous && vocab.is_content(ids[i])) out.ids.push_back(ids[i]);
    previous = ids[i];
  }
  return out;
}

void export_embeddings(const std::vector<ManifestEntry>& entries, InferenceModel& m,
                       const std::filesystem::path& out_path) {
  torch::NoGradGuard no_grad;
  const auto& cfg = m.model.config.model;
  if (cfg.prompt_dim != cfg.latent_dim) {
    throw ParameterError("export_embeddings: G and S/P widths differ");
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw FileError("cannot write " + out_path.string());
  out << "utt_id,frame_idx,kind";
  for (int64_t i = 0; i < cfg.latent_dim; ++i) out << ",dim_" << i;
  out << '\n';
  out << std::setprecision(std::numeric_limits<float>::max_digits10);

  auto write_row = [&](const std::string& id, int64_t frame, const char* kind,
                       const torch::Tensor& row) {
    auto v = row.to(torch::kFloat32).contiguous();
    out << id << ',' << frame << ',' << kind;
    const float* p = v.data_ptr<float>();
    for (int64_t i = 0; i < v.numel(); ++i) out << ',' << p[i];
    out << '\n';
  };

  auto& net = m.model.net;
  net->eval();
  const auto vocab = PhonemeVocab::from(cfg);
  for (const auto& entry : entries) {
    const auto mel = mel_of(read_wav(entry.wav_path), "export");
    auto input = batch_of_one(mel.values);
    auto s = net->speech_encode(input.values, input.mask);
    const int64_t valid = s.mask.sum().item<int64_t>();
    for (int64_t t = 0; t < valid; ++t) write_row(entry.utt_id, t, "S", s.values[0][t]);

    if (!entry.phonemes.ids.empty()) {
      validate(entry.phonemes, vocab);
      auto frames = length_regulate(entry.phonemes, entry.durations);
      frames.ids.resize(static_cast<std::size_t>(mel.frames()), cfg.silence_id);
      const auto padded = pad_to_multiple(frames.ids, kCompression, cfg.pad_id);
      auto ids = torch::tensor(padded.ids, torch::kInt64).unsqueeze(0);
      auto p = net->phoneme_encode(ids, input.mask);
      for (int64_t t = 0; t < valid; ++t) write_row(entry.utt_id, t, "P", p.values[0][t]);
    }
    write_row(entry.utt_id, 0, "G", paralinguistic_mean(mel, m)[0]);
  }
  if (!out) throw FileError("write failed: " + out_path.string());
}

}  // namespace vqctap
