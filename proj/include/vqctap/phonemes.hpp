#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <vector>

#include "vqctap/config.hpp"

namespace vqctap {

struct PhonemeVocab {
  int64_t size = 18;
  int64_t pad_id = 0;
  int64_t silence_id = 1;

  static PhonemeVocab from(const ModelConfig& model) {
    return PhonemeVocab{model.vocab_size, model.pad_id, model.silence_id};
  }
  bool is_content(int64_t id) const { return id != pad_id && id != silence_id; }
};

struct PhonemeSeq {
  std::vector<int64_t> ids;
};

// Per-phoneme duration in mel frames.
struct DurationSeq {
  std::vector<int64_t> counts;
};

// One phoneme id per mel frame.
struct FrameAlignedPhonemes {
  std::vector<int64_t> ids;
};

/// Throws InputError if an id is outside [0, vocab.size) or a padding id
/// appears inside the sequence.
void validate(const PhonemeSeq& phonemes, const PhonemeVocab& vocab);

/// Repeats phoneme i durations[i] times. Throws ShapeError on a length
/// mismatch, ParameterError on a negative count and LengthError when the
/// durations sum to zero.
FrameAlignedPhonemes length_regulate(const PhonemeSeq& phonemes, const DurationSeq& durations);

DurationSeq uniform_durations(std::size_t count, int64_t frames_each);

struct PaddedFrames {
  torch::Tensor values;  // [padded_len, ...], zero padded
  torch::Tensor mask;    // [padded_len] bool, true on original frames
};

struct PaddedIds {
  std::vector<int64_t> ids;
  std::vector<uint8_t> mask;
};

/// Pads along the first dimension to the smallest multiple of `multiple`.
PaddedFrames pad_to_multiple(const torch::Tensor& frames, int64_t multiple);
PaddedIds pad_to_multiple(std::span<const int64_t> ids, int64_t multiple, int64_t pad_id);

}  // namespace vqctap
