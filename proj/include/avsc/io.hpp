#pragma once

#include "avsc/avdata.hpp"
#include "avsc/image.hpp"

#include <filesystem>
#include <string>

namespace avsc::io {

/// Metadata carried in the JSON sidecar next to each feature array.
struct FeatureMeta {
  std::string speaker_id;
  std::string utterance_id;
  double fps = kFacialFps;
  double hop_ms = kTrainHopMs;
  double window_ms = kTrainWindowMs;
};

/// 2-D little-endian float32 arrays in NumPy .npy (v1.0) layout.
void save_array(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix load_array(const std::filesystem::path& path);

/// Sidecar path for an array file: same stem, ".json" extension.
std::filesystem::path sidecar_path(const std::filesystem::path& array_path);

void save_facial_features(const std::filesystem::path& path, const FacialFeatureSequence& seq,
                          const FeatureMeta& meta);
FacialFeatureSequence load_facial_features(const std::filesystem::path& path,
                                           FeatureMeta* meta = nullptr);
void save_mel(const std::filesystem::path& path, const MelSpectrogram& mel, const FeatureMeta& meta);
MelSpectrogram load_mel(const std::filesystem::path& path, FeatureMeta* meta = nullptr);

/// 16-bit PCM mono WAV. Samples map to integers as round(x * 32768), clamped.
void save_wav(const std::filesystem::path& path, const AudioClip& clip);
AudioClip load_audio(const std::filesystem::path& path);

/// 8-bit RGB PNG.
void save_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage load_png(const std::filesystem::path& path);

/// SHA-256 of a file's bytes, lowercase hex.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace avsc::io
