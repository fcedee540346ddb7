#pragma once

#include "avsc/avdata.hpp"
#include "avsc/image.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace avsc {

/// Speaker coloring applied to both modalities of the synthetic generator.
struct SpeakerStyle {
  std::string id;
  double f0_hz = 120.0;
  double formant1_hz = 500.0;
  double formant2_hz = 1500.0;
  double formant3_hz = 2500.0;
  double face_scale = 1.0;
  double face_dx = 0.0;
  double face_dy = 0.0;
  double mouth_width = 0.12;
  double mouth_height = 0.06;
  std::uint64_t appearance_seed = 1;
  double skin_r = 0.85, skin_g = 0.70, skin_b = 0.60;
};

SpeakerStyle default_source_speaker();
SpeakerStyle default_target_speaker();

struct SynthConfig {
  int sample_rate = 16000;
  double min_duration_s = 2.0;
  double max_duration_s = 6.0;
  /// Depth with which the shared articulation drives audio and face.
  double articulation_gain = 1.0;
  /// Source-only perturbations of the articulators, drawn independently for
  /// the audio and the video stream.
  double source_audio_nuisance = 0.6;
  double source_visual_nuisance = 0.6;
  /// Keypoint jitter (normalized image units) on both speakers.
  double keypoint_noise = 0.002;
  /// Target duration relative to source varies within +/- this fraction.
  double tempo_spread = 0.1;
  SpeakerStyle source = default_source_speaker();
  SpeakerStyle target = default_target_speaker();

  void validate() const;
};

struct ParallelCorpus {
  std::vector<UtteranceFeatures> source;
  std::vector<UtteranceFeatures> target;
  std::vector<AudioClip> source_clips;
  std::vector<AudioClip> target_clips;
};

/// Generates `n_utterances` parallel source/target utterances. Utterance i
/// draws its randomness from (seed, i) only, so corpora are reproducible and
/// utterances can be generated independently.
ParallelCorpus synth_parallel_corpus(std::uint64_t seed, int n_utterances, const SynthConfig& cfg);
/// Utterances first .. first+count-1 of the corpus synth_parallel_corpus would produce.
ParallelCorpus synth_parallel_range(std::uint64_t seed, int first, int count, const SynthConfig& cfg);

/// Audio samples needed so that extract_mel at 25/5 ms yields exactly
/// 8 x facial_frames frames.
long tied_clip_samples(int facial_frames, int sample_rate);

/// Renders 70 keypoints (x, y in [0, 1]) as a simple face image.
RgbImage render_face(const Eigen::Ref<const Eigen::RowVectorXf>& keypoints, const SpeakerStyle& style,
                     int size);

}  // namespace avsc
