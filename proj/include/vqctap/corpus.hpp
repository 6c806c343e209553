#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vqctap/audio.hpp"
#include "vqctap/phonemes.hpp"

namespace vqctap {

struct Utterance {
  std::string id;
  Waveform wave;
  PhonemeSeq phonemes;
  DurationSeq durations;
  int64_t speaker = 0;
};

struct SyntheticCorpus {
  uint64_t seed = 0;
  std::vector<Utterance> utterances;
};

/// Deterministic toy corpus for desk-scale training. Every utterance is 1-3 s
/// long, framed by silence, and each content phoneme is a harmonic tone whose
/// spectral envelope (two formants) is fixed per phoneme while the speaker
/// sets the fundamental, a formant shift, spectral tilt and a third
/// "timbre" formant. Waveform length is exactly sum(durations) * 240 samples.
/// All randomness comes from `seed`; utterances alternate speakers
/// round-robin. Throws ParameterError unless n_utts >= n_speakers >= 2.
SyntheticCorpus make_synthetic_corpus(uint64_t seed, int64_t n_utts, int64_t n_speakers,
                                      const PhonemeVocab& vocab = {});

// One line of a corpus manifest:
// utt_id<TAB>wav_path<TAB>phoneme ids<TAB>durations<TAB>speaker_id
// Phoneme and duration fields may be empty for speech-only data.
struct ManifestEntry {
  std::string utt_id;
  std::filesystem::path wav_path;
  PhonemeSeq phonemes;
  DurationSeq durations;
  std::string speaker;
};

/// Relative wav paths are resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Writes `<dir>/<utt_id>.wav` for every utterance plus `<dir>/manifest.tsv`.
/// Returns the manifest path.
std::filesystem::path write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

}  // namespace vqctap
