#include "vqctap/phonemes.hpp"

#include <numeric>
#include <string>

#include "vqctap/errors.hpp"

namespace vqctap {

namespace {

int64_t padded_length(int64_t length, int64_t multiple) {
  if (multiple < 1) throw ParameterError("pad_to_multiple: multiple must be >= 1");
  if (length < 1) throw LengthError("pad_to_multiple: empty input");
  return (length + multiple - 1) / multiple * multiple;
}

}  // namespace

void validate(const PhonemeSeq& phonemes, const PhonemeVocab& vocab) {
  for (std::size_t i = 0; i < phonemes.ids.size(); ++i) {
    const int64_t id = phonemes.ids[i];
    if (id < 0 || id >= vocab.size) {
      throw InputError("phoneme id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab.size));
    }
    if (id == vocab.pad_id) {
      throw InputError("padding id inside phoneme sequence at position " + std::to_string(i));
    }
  }
}

FrameAlignedPhonemes length_regulate(const PhonemeSeq& phonemes, const DurationSeq& durations) {
  if (phonemes.ids.size() != durations.counts.size()) {
    throw ShapeError("length_regulate: " + std::to_string(phonemes.ids.size()) +
                     " phonemes but " + std::to_string(durations.counts.size()) + " durations");
  }
  int64_t total = 0;
  for (int64_t d : durations.counts) {
    if (d < 0) throw ParameterError("length_regulate: negative duration");
    total += d;
  }
  if (total == 0) throw LengthError("length_regulate: durations sum to zero");

  FrameAlignedPhonemes out;
  out.ids.reserve(static_cast<std::size_t>(total));
  for (std::size_t i = 0; i < phonemes.ids.size(); ++i) {
    out.ids.insert(out.ids.end(), static_cast<std::size_t>(durations.counts[i]), phonemes.ids[i]);
  }
  return out;
}

DurationSeq uniform_durations(std::size_t count, int64_t frames_each) {
  if (frames_each < 1) throw ParameterError("uniform_durations: frames_each must be >= 1");
  return DurationSeq{std::vector<int64_t>(count, frames_each)};
}

PaddedFrames pad_to_multiple(const torch::Tensor& frames, int64_t multiple) {
  if (!frames.defined() || frames.dim() == 0) {
    throw LengthError("pad_to_multiple: empty input");
  }
  const int64_t length = frames.size(0);
  const int64_t target = padded_length(length, multiple);

  auto sizes = frames.sizes().vec();
  sizes[0] = target;
  auto values = torch::zeros(sizes, frames.options());
  values.narrow(0, 0, length).copy_(frames);
  auto mask = torch::zeros({target}, torch::kBool);
  mask.narrow(0, 0, length).fill_(true);
  return PaddedFrames{values, mask};
}

PaddedIds pad_to_multiple(std::span<const int64_t> ids, int64_t multiple, int64_t pad_id) {
  const auto length = static_cast<int64_t>(ids.size());
  const int64_t target = padded_length(length, multiple);
  PaddedIds out;
  out.ids.assign(ids.begin(), ids.end());
  out.ids.resize(static_cast<std::size_t>(target), pad_id);
  out.mask.assign(static_cast<std::size_t>(length), 1);
  out.mask.resize(static_cast<std::size_t>(target), 0);
  return out;
}

}  // namespace vqctap
