#include "vqctap/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "vqctap/errors.hpp"

namespace vqctap {

namespace {

struct SpeakerVoice {
  double f0;
  double formant_shift;
  double tilt;
  double timbre_formant;
  double gain;
};

struct Formants {
  double f1;
  double f2;
};

Formants content_formants(int64_t content_index) {
  static constexpr double kF1[] = {300.0, 500.0, 750.0, 1050.0};
  static constexpr double kF2[] = {1100.0, 1600.0, 2300.0, 3200.0};
  return Formants{kF1[content_index % 4], kF2[(content_index / 4) % 4] + 120.0 * (content_index / 16)};
}

std::vector<int64_t> content_ids(const PhonemeVocab& vocab) {
  std::vector<int64_t> ids;
  for (int64_t id = 0; id < vocab.size; ++id) {
    if (vocab.is_content(id)) ids.push_back(id);
  }
  return ids;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int64_t uniform_int(std::mt19937_64& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

std::vector<SpeakerVoice> make_voices(std::mt19937_64& rng, int64_t n_speakers) {
  // Stratified draws keep every pair of speakers apart in f0 and formant shift.
  std::vector<SpeakerVoice> voices;
  const auto n = static_cast<double>(n_speakers);
  for (int64_t s = 0; s < n_speakers; ++s) {
    SpeakerVoice v{};
    v.f0 = 95.0 + (static_cast<double>(s) + uniform(rng, 0.15, 0.85)) * (150.0 / n);
    v.formant_shift =
        0.9 + (static_cast<double>((s * 3) % n_speakers) + uniform(rng, 0.15, 0.85)) * (0.2 / n);
    v.tilt = uniform(rng, 0.6, 1.4);
    v.timbre_formant = uniform(rng, 2800.0, 3800.0);
    v.gain = uniform(rng, 0.3, 0.6);
    voices.push_back(v);
  }
  return voices;
}

double gaussian_bump(double f, double center, double width) {
  const double z = (f - center) / width;
  return std::exp(-0.5 * z * z);
}

void render_segment(std::vector<float>& out, std::size_t begin, std::size_t length,
                    const Formants& formants, const SpeakerVoice& voice, double f0,
                    const std::vector<double>& phases) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  constexpr std::size_t kFade = 60;  // 2.5 ms
  const int harmonics = static_cast<int>(11000.0 / f0);

  std::vector<double> amp(static_cast<std::size_t>(harmonics) + 1, 0.0);
  for (int h = 1; h <= harmonics; ++h) {
    const double f = h * f0;
    double a = gaussian_bump(f, formants.f1 * voice.formant_shift, 90.0) +
               0.7 * gaussian_bump(f, formants.f2 * voice.formant_shift, 140.0) +
               0.4 * gaussian_bump(f, voice.timbre_formant, 250.0) + 0.02;
    a /= std::pow(1.0 + f / 2000.0, voice.tilt);
    amp[static_cast<std::size_t>(h)] = a;
  }

  for (std::size_t i = 0; i < length; ++i) {
    const double t = static_cast<double>(begin + i) / kSampleRate;
    double s = 0.0;
    for (int h = 1; h <= harmonics; ++h) {
      s += amp[static_cast<std::size_t>(h)] * std::sin(kTwoPi * h * f0 * t + phases[static_cast<std::size_t>(h)]);
    }
    double fade = 1.0;
    if (i < kFade) fade = static_cast<double>(i) / kFade;
    if (length - i <= kFade) fade = std::min(fade, static_cast<double>(length - i - 1) / kFade);
    out[begin + i] = static_cast<float>(s * fade);
  }
}

std::vector<int64_t> parse_ints(const std::string& field, const std::string& what,
                                const std::string& utt) {
  std::vector<int64_t> values;
  std::istringstream in(field);
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      values.push_back(std::stoll(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw FormatError("manifest: bad " + what + " '" + token + "' in " + utt);
    }
  }
  return values;
}

std::string join(const std::vector<int64_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(values[i]);
  }
  return out;
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(uint64_t seed, int64_t n_utts, int64_t n_speakers,
                                      const PhonemeVocab& vocab) {
  if (n_speakers < 2 || n_utts < n_speakers) {
    throw ParameterError("make_synthetic_corpus: need n_utts >= n_speakers >= 2");
  }
  const auto content = content_ids(vocab);
  if (content.size() < 2) throw ParameterError("make_synthetic_corpus: vocabulary too small");

  std::mt19937_64 rng(seed);
  const auto voices = make_voices(rng, n_speakers);

  SyntheticCorpus corpus;
  corpus.seed = seed;
  for (int64_t u = 0; u < n_utts; ++u) {
    Utterance utt;
    utt.id = "utt" + std::to_string(seed) + "_" + std::to_string(u);
    utt.speaker = u % n_speakers;
    const SpeakerVoice& voice = voices[static_cast<std::size_t>(utt.speaker)];

    const int64_t total = uniform_int(rng, 100, 300);
    const int64_t lead = uniform_int(rng, 8, 16);
    const int64_t tail = uniform_int(rng, 8, 16);
    utt.phonemes.ids.push_back(vocab.silence_id);
    utt.durations.counts.push_back(lead);
    int64_t remaining = total - lead - tail;
    int64_t previous = -1;
    while (remaining > 0) {
      int64_t d = uniform_int(rng, 6, 14);
      if (remaining - d < 6) d = remaining;
      int64_t pick;
      do {
        pick = content[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int64_t>(content.size()) - 1))];
      } while (pick == previous);
      previous = pick;
      utt.phonemes.ids.push_back(pick);
      utt.durations.counts.push_back(d);
      remaining -= d;
    }
    utt.phonemes.ids.push_back(vocab.silence_id);
    utt.durations.counts.push_back(tail);

    // per-utterance prosodic jitter and random harmonic phases
    const double f0 = voice.f0 * uniform(rng, 0.97, 1.03);
    std::vector<double> phases(static_cast<std::size_t>(11000.0 / f0) + 1);
    for (double& p : phases) p = uniform(rng, 0.0, 2.0 * std::numbers::pi);

    utt.wave.rate = kSampleRate;
    utt.wave.samples.assign(static_cast<std::size_t>(total * kHopSize), 0.0f);
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < utt.phonemes.ids.size(); ++i) {
      const auto length = static_cast<std::size_t>(utt.durations.counts[i] * kHopSize);
      const int64_t id = utt.phonemes.ids[i];
      if (vocab.is_content(id)) {
        const auto index = std::find(content.begin(), content.end(), id) - content.begin();
        render_segment(utt.wave.samples, cursor, length, content_formants(index), voice, f0,
                       phases);
      }
      cursor += length;
    }

    float peak = 0.0f;
    for (float s : utt.wave.samples) peak = std::max(peak, std::abs(s));
    if (peak > 0.0f) {
      const auto scale = static_cast<float>(voice.gain / peak);
      for (float& s : utt.wave.samples) s *= scale;
    }
    corpus.utterances.push_back(std::move(utt));
  }
  return corpus;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5) {
      throw FormatError("manifest " + path.string() + " line " + std::to_string(line_no) +
                        ": expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    }
    ManifestEntry e;
    e.utt_id = fields[0];
    e.wav_path = fields[1];
    if (e.wav_path.is_relative()) e.wav_path = base / e.wav_path;
    e.phonemes.ids = parse_ints(fields[2], "phoneme id", e.utt_id);
    e.durations.counts = parse_ints(fields[3], "duration", e.utt_id);
    if (e.phonemes.ids.size() != e.durations.counts.size()) {
      throw FormatError("manifest: phoneme/duration count mismatch in " + e.utt_id);
    }
    e.speaker = fields[4];
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write manifest " + path.string());
  for (const auto& e : entries) {
    out << e.utt_id << '\t' << e.wav_path.string() << '\t' << join(e.phonemes.ids) << '\t'
        << join(e.durations.counts) << '\t' << e.speaker << '\n';
  }
  if (!out) throw FileError("write failed: " + path.string());
}

std::filesystem::path write_corpus(const SyntheticCorpus& corpus,
                                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const auto& utt : corpus.utterances) {
    const std::string file = utt.id + ".wav";
    write_wav(dir / file, utt.wave);
    entries.push_back(ManifestEntry{utt.id, file, utt.phonemes, utt.durations,
                                    std::to_string(utt.speaker)});
  }
  const auto manifest = dir / "manifest.tsv";
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace vqctap
