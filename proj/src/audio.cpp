#include "vqctap/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include <ATen/CPUGeneratorImpl.h>

#include "bytes.hpp"
#include "vqctap/errors.hpp"
#include "vqctap/kernels.hpp"

namespace vqctap {

namespace {

constexpr double kMelMinHz = 0.0;
constexpr double kMelMaxHz = kSampleRate / 2.0;

// Slaney mel scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

// Each filter is nonzero only on a short run of FFT bins.
struct MelBand {
  int64_t first_bin = 0;
  std::vector<float> weights;
};

std::vector<MelBand> build_bands() {
  std::array<double, kMelBands + 2> edges{};
  const double lo = hz_to_mel(kMelMinHz);
  const double hi = hz_to_mel(kMelMaxHz);
  for (int64_t i = 0; i < kMelBands + 2; ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (kMelBands + 1));
  }
  const double bin_hz = static_cast<double>(kSampleRate) / kWindowSize;

  std::vector<MelBand> bands(kMelBands);
  for (int64_t b = 0; b < kMelBands; ++b) {
    const double left = edges[b];
    const double center = edges[b + 1];
    const double right = edges[b + 2];
    const double enorm = 2.0 / (right - left);
    std::vector<float> row(kFftBins, 0.0f);
    int64_t first = -1;
    int64_t last = -1;
    for (int64_t k = 0; k < kFftBins; ++k) {
      const double f = k * bin_hz;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      const double w = std::max(0.0, std::min(up, down)) * enorm;
      if (w > 0.0) {
        row[k] = static_cast<float>(w);
        if (first < 0) first = k;
        last = k;
      }
    }
    if (first < 0) first = last = 0;
    bands[b].first_bin = first;
    bands[b].weights.assign(row.begin() + first, row.begin() + last + 1);
  }
  return bands;
}

const std::vector<MelBand>& mel_bands() {
  static const std::vector<MelBand> bands = build_bands();
  return bands;
}

using detail::get_le;
using detail::put_le;

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

int64_t mel_frame_count(int64_t num_samples) {
  const int64_t pad = (kWindowSize - kHopSize) / 2;
  const int64_t padded = num_samples + 2 * pad;
  if (padded < kWindowSize) return 0;
  return (padded - kWindowSize) / kHopSize + 1;
}

torch::Tensor mel_filterbank() {
  auto bank = torch::zeros({kMelBands, kFftBins}, torch::kFloat32);
  auto acc = bank.accessor<float, 2>();
  const auto& bands = mel_bands();
  for (int64_t b = 0; b < kMelBands; ++b) {
    for (std::size_t i = 0; i < bands[b].weights.size(); ++i) {
      acc[b][bands[b].first_bin + static_cast<int64_t>(i)] = bands[b].weights[i];
    }
  }
  return bank;
}

MelSpec mel_spectrogram(const Waveform& wave) {
  if (wave.rate != kSampleRate) {
    throw RateError("mel_spectrogram: expected 24000 Hz, got " + std::to_string(wave.rate));
  }
  const auto n = static_cast<int64_t>(wave.samples.size());
  if (n < kWindowSize) {
    throw LengthError("mel_spectrogram: need at least 960 samples, got " + std::to_string(n));
  }

  torch::NoGradGuard no_grad;
  const int64_t pad = (kWindowSize - kHopSize) / 2;
  auto signal = torch::from_blob(const_cast<float*>(wave.samples.data()), {1, 1, n},
                                 torch::kFloat32)
                    .clone();
  signal = torch::nn::functional::pad(
               signal, torch::nn::functional::PadFuncOptions({pad, pad}).mode(torch::kReflect))
               .view({-1});
  const auto window = torch::hann_window(kWindowSize, /*periodic=*/true, torch::kFloat32);
  const auto spec = torch::stft(signal, kWindowSize, kHopSize, kWindowSize, window,
                                /*normalized=*/false, /*onesided=*/true,
                                /*return_complex=*/true);
  // [bins, frames] -> [frames, bins]
  const auto magnitude = spec.abs().transpose(0, 1).contiguous();
  const int64_t frames = magnitude.size(0);

  auto out = torch::empty({frames, kMelBands}, torch::kFloat32);
  const float* mag = magnitude.data_ptr<float>();
  float* dst = out.data_ptr<float>();
  const auto& bands = mel_bands();
  const auto& k = kernels::active();
  for (int64_t t = 0; t < frames; ++t) {
    const float* row = mag + t * kFftBins;
    for (int64_t b = 0; b < kMelBands; ++b) {
      const MelBand& band = bands[b];
      const float energy =
          k.dot_f32(row + band.first_bin, band.weights.data(), band.weights.size());
      dst[t * kMelBands + b] =
          static_cast<float>(std::log(std::max(static_cast<double>(energy), kLogFloor)));
    }
  }
  return MelSpec{out};
}

Waveform read_wav(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  auto fail = [&](const std::string& why) -> FormatError {
    return FormatError(path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }

  uint16_t format = 0;
  uint16_t channels = 0;
  uint32_t rate = 0;
  uint16_t bits = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const auto size = get_le<uint32_t>(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // tolerate a truncated final data chunk
      if (std::memcmp(chunk, "data", 4) == 0) {
        data = bytes.data() + body;
        data_size = bytes.size() - body;
      }
      break;
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw fail("short fmt chunk");
      format = get_le<uint16_t>(bytes.data() + body);
      channels = get_le<uint16_t>(bytes.data() + body + 2);
      rate = get_le<uint32_t>(bytes.data() + body + 4);
      bits = get_le<uint16_t>(bytes.data() + body + 14);
      if (format == 0xFFFE && size >= 26) {
        format = get_le<uint16_t>(bytes.data() + body + 24);  // extensible sub-format
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (channels == 0) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (channels != 1) throw fail("expected mono, got " + std::to_string(channels) + " channels");

  Waveform wave;
  wave.rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    wave.samples.resize(data_size / 2);
    for (std::size_t i = 0; i < wave.samples.size(); ++i) {
      wave.samples[i] = static_cast<float>(get_le<int16_t>(data + 2 * i)) / 32768.0f;
    }
  } else if (format == 3 && bits == 32) {
    wave.samples.resize(data_size / 4);
    for (std::size_t i = 0; i < wave.samples.size(); ++i) {
      wave.samples[i] = get_le<float>(data + 4 * i);
    }
  } else {
    throw fail("unsupported encoding (format " + std::to_string(format) + ", " +
               std::to_string(bits) + " bits)");
  }
  return wave;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  const auto data_bytes = static_cast<uint32_t>(wave.samples.size() * 2);
  out.write("RIFF", 4);
  put_le<uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_le<uint32_t>(out, 16);
  put_le<uint16_t>(out, 1);
  put_le<uint16_t>(out, 1);
  put_le<uint32_t>(out, static_cast<uint32_t>(wave.rate));
  put_le<uint32_t>(out, static_cast<uint32_t>(wave.rate) * 2);
  put_le<uint16_t>(out, 2);
  put_le<uint16_t>(out, 16);
  out.write("data", 4);
  put_le<uint32_t>(out, data_bytes);
  for (float s : wave.samples) {
    const float clipped = std::clamp(s, -1.0f, 1.0f);
    put_le<int16_t>(out, static_cast<int16_t>(std::lrint(clipped * 32767.0f)));
  }
  if (!out) throw FileError("write failed: " + path.string());
}

void write_mel(const std::filesystem::path& path, const MelSpec& mel) {
  if (!mel.values.defined() || mel.values.dim() != 2) {
    throw ShapeError("write_mel: expected a [frames, bands] matrix");
  }
  const auto values = mel.values.to(torch::kFloat32).contiguous();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  put_le<uint32_t>(out, static_cast<uint32_t>(values.size(0)));
  put_le<uint32_t>(out, static_cast<uint32_t>(values.size(1)));
  const float* p = values.data_ptr<float>();
  for (int64_t i = 0; i < values.numel(); ++i) put_le<float>(out, p[i]);
  if (!out) throw FileError("write failed: " + path.string());
}

MelSpec read_mel(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 8) throw FormatError(path.string() + ": truncated mel header");
  const auto frames = get_le<uint32_t>(bytes.data());
  const auto bands = get_le<uint32_t>(bytes.data() + 4);
  const std::size_t count = static_cast<std::size_t>(frames) * bands;
  if (bytes.size() != 8 + 4 * count) throw FormatError(path.string() + ": size mismatch");
  auto values = torch::empty({static_cast<int64_t>(frames), static_cast<int64_t>(bands)},
                             torch::kFloat32);
  float* dst = values.data_ptr<float>();
  for (std::size_t i = 0; i < count; ++i) dst[i] = get_le<float>(bytes.data() + 8 + 4 * i);
  return MelSpec{values};
}

Waveform griffin_lim(const MelSpec& mel, int iterations, uint64_t seed) {
  if (mel.frames() < 1) throw LengthError("griffin_lim: empty mel");
  if (iterations < 1) throw ParameterError("griffin_lim: iterations must be >= 1");
  torch::NoGradGuard no_grad;
  const int64_t frames = mel.frames();
  const int64_t length = frames * kHopSize;
  auto inverse = torch::linalg_pinv(mel_filterbank().to(torch::kFloat64));
  auto magnitude = torch::matmul(inverse, torch::exp(mel.values.to(torch::kFloat64)).t())
                       .clamp_min(0.0)
                       .to(torch::kFloat32);
  // Centered STFT framing yields one extra frame; repeat the last column.
  magnitude = torch::cat({magnitude, magnitude.narrow(1, frames - 1, 1)}, 1);
  const auto window = torch::hann_window(kWindowSize, /*periodic=*/true, torch::kFloat32);

  auto generator = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto phase = torch::rand(magnitude.sizes(), generator) * (2.0 * M_PI);
  auto spec = torch::polar(magnitude, phase);
  torch::Tensor signal;
  for (int i = 0; i < iterations; ++i) {
    signal = torch::istft(spec, kWindowSize, kHopSize, kWindowSize, window, /*center=*/true,
                          /*normalized=*/false, /*onesided=*/true, length);
    auto rebuilt = torch::stft(signal, kWindowSize, kHopSize, kWindowSize, window, /*center=*/true,
                               "reflect", /*normalized=*/false, /*onesided=*/true,
                               /*return_complex=*/true);
    spec = torch::polar(magnitude, torch::angle(rebuilt));
  }
  signal = torch::istft(spec, kWindowSize, kHopSize, kWindowSize, window, true, false, true, length);
  const double peak = signal.abs().max().item<double>();
  if (peak > 0.99) signal = signal * (0.99 / peak);

  Waveform wave;
  signal = signal.contiguous();
  wave.samples.assign(signal.data_ptr<float>(), signal.data_ptr<float>() + signal.numel());
  return wave;
}

}  // namespace vqctap
