#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace avsc {

/// Feature streams are stored frames x dims in single precision.
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kMelBands = 80;
inline constexpr int kEmbeddingDim = 4096;
inline constexpr int kKeypointCount = 70;
inline constexpr int kKeypointDim = 2 * kKeypointCount;
inline constexpr int kFacialDim = kEmbeddingDim + kKeypointDim;
inline constexpr int kMelPerFacial = 8;
inline constexpr double kFacialFps = 25.0;
inline constexpr double kTrainWindowMs = 25.0;
inline constexpr double kTrainHopMs = 5.0;
inline constexpr double kEvalWindowMs = 40.0;
inline constexpr double kEvalHopMs = 40.0;
inline constexpr int kWindowMelFrames = 400;
inline constexpr int kWindowFacialFrames = kWindowMelFrames / kMelPerFacial;
// Keypoints 48..67 (inclusive) are the lip contour.
inline constexpr int kLipFirstPoint = 48;
inline constexpr int kLipPointCount = 20;
inline constexpr int kLipDim = 2 * kLipPointCount;

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 16000;

  /// Throws if the rate is not positive or any sample is non-finite or outside [-1, 1].
  void validate() const;
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct MelSpectrogram {
  FeatureMatrix frames;  // T_a x 80
  double window_ms = kTrainWindowMs;
  double hop_ms = kTrainHopMs;

  int length() const { return static_cast<int>(frames.rows()); }
};

/// Appearance embedding and keypoints, held fused: columns [0, 4096) are the
/// embedding and [4096, 4236) the 70 (x, y) keypoints.
struct FacialFeatureSequence {
  FeatureMatrix fused;  // T_v x 4236
  double fps = kFacialFps;

  int length() const { return static_cast<int>(fused.rows()); }
  auto embedding() const { return fused.leftCols(kEmbeddingDim); }
  auto keypoints() const { return fused.rightCols(kKeypointDim); }
  /// The 20 lip points as T_v x 40 (x, y interleaved).
  FeatureMatrix lips() const;
};

struct UtteranceFeatures {
  MelSpectrogram mel;
  FacialFeatureSequence facial;
  std::string speaker_id;
  std::string utterance_id;
  std::string emotion = "synthetic";
};

struct TrainingWindow {
  FeatureMatrix mel;     // 400 x 80
  FeatureMatrix facial;  // 50 x 4236
};

/// Log-magnitude mel spectrogram (80 bands, 0 Hz to Nyquist, Hann window,
/// magnitudes floored at 1e-5). Frame count is floor((len - window) / hop) + 1.
MelSpectrogram extract_mel(const AudioClip& clip, double window_ms, double hop_ms);

/// Number of frames extract_mel produces for `samples` input samples.
int mel_frame_count(long samples, int window_samples, int hop_samples);

FacialFeatureSequence fuse_facial(const FeatureMatrix& embedding, const FeatureMatrix& keypoints);

/// End-trims the longer stream so that mel frames == 8 x facial frames.
UtteranceFeatures tie_to_video_rate(const UtteranceFeatures& u);

/// Non-overlapping 2 s windows (400 mel / 50 facial frames); a trailing
/// partial window is dropped.
std::vector<TrainingWindow> make_training_windows(const UtteranceFeatures& u);

/// Throws unless mel frames == 8 x facial frames and widths are 80 / 4236.
void check_rate_tied(const UtteranceFeatures& u);

}  // namespace avsc
