#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace vqctap {

inline constexpr int kSampleRate = 24000;
inline constexpr int64_t kHopSize = 240;
inline constexpr int64_t kWindowSize = 960;
inline constexpr int64_t kMelBands = 40;
inline constexpr double kLogFloor = 1e-5;
inline constexpr int64_t kFftBins = kWindowSize / 2 + 1;

struct Waveform {
  std::vector<float> samples;  // amplitude in [-1, 1]
  int rate = kSampleRate;
};

/// Frame-indexed log-mel matrix, `values` is [frames, 40] float32.
struct MelSpec {
  torch::Tensor values;

  int64_t frames() const { return values.defined() ? values.size(0) : 0; }
};

/// Frames produced for `num_samples` samples: the signal is reflect-padded by
/// (window - hop) / 2 on each side, giving floor(num_samples / hop) frames,
/// i.e. exactly 100 frames per second at 24 kHz.
int64_t mel_frame_count(int64_t num_samples);

/// 40-band log-mel spectrogram: 960-sample periodic Hann window, hop 240,
/// magnitude STFT, Slaney mel filterbank over 0-12 kHz, log(max(x, 1e-5)).
/// Throws RateError unless rate is 24 kHz and LengthError below 960 samples.
MelSpec mel_spectrogram(const Waveform& wave);

/// Rough waveform preview: magnitudes from the filterbank pseudo-inverse and
/// phase from `iterations` rounds of Griffin-Lim. Not a vocoder.
Waveform griffin_lim(const MelSpec& mel, int iterations = 32, uint64_t seed = 0);

/// Slaney-normalized triangular filters, [40, 481].
torch::Tensor mel_filterbank();

/// Reads a mono RIFF WAV file (16-bit PCM or 32-bit float).
Waveform read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono; samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const Waveform& wave);

/// Mel binary file: little-endian uint32 frames, uint32 bands, then
/// frames * bands float32 values in row-major order.
void write_mel(const std::filesystem::path& path, const MelSpec& mel);
MelSpec read_mel(const std::filesystem::path& path);

}  // namespace vqctap
