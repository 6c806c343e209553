#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "vqctap/audio.hpp"
#include "vqctap/checkpoint.hpp"
#include "vqctap/connector.hpp"
#include "vqctap/corpus.hpp"
#include "vqctap/phonemes.hpp"
#include "vqctap/scheduler.hpp"

namespace vqctap {

/// Frozen modules for downstream use. The connector is absent when the
/// checkpoint was never passed through connector training.
struct InferenceModel {
  TrainedModel model;
  std::unique_ptr<Connector> connector;
};

InferenceModel load_inference(const Checkpoint& checkpoint);
InferenceModel load_inference(const std::filesystem::path& path);

struct TtsRequest {
  PhonemeSeq phonemes;
  std::optional<DurationSeq> durations;  // uniform durations when absent
  Waveform prompt;
  uint64_t seed = 0;
  bool use_connector = true;  // false feeds P straight into the codebook
};

struct VcRequest {
  Waveform source;
  Waveform target_prompt;
};

/// phoneme_encode -> connector_sample -> quantize -> speech_decode with the
/// prompt's mean paralinguistic vector. Output has 4 x (compressed length)
/// frames. Throws InputError on empty or invalid phonemes and StateError when
/// the connector is required but missing.
MelSpec tts_synthesize(const TtsRequest& request, InferenceModel& model);

/// Source content re-decoded with the target prompt's paralinguistic vector.
/// Output length is the source mel length padded to a multiple of 4.
MelSpec vc_convert(const VcRequest& request, InferenceModel& model);

/// Per-frame argmax of the phoneme decoder, consecutive repeats collapsed,
/// silence and padding removed. Throws InputError on waveforms shorter than
/// one analysis window.
PhonemeSeq asr_transcribe(const Waveform& wave, InferenceModel& model);

/// Mean paralinguistic vector of a mel clip ([T, 40]), first
/// prompt_window_frames frames.
torch::Tensor paralinguistic_mean(const MelSpec& clip, InferenceModel& model);

/// CSV `utt_id,frame_idx,kind,dim_0..dim_{d-1}` with kind S (pre-quantization
/// speech embedding), P (phoneme embedding, only when the entry has
/// phonemes) per valid compressed frame and one G row per utterance with
/// frame_idx 0. Throws FileError when the output cannot be written.
void export_embeddings(const std::vector<ManifestEntry>& entries, InferenceModel& model,
                       const std::filesystem::path& out_path);

}  // namespace vqctap
