#include "avsc/avdata.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

namespace avsc {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters on the mel scale, (n_fft/2 + 1) x 80.
Eigen::MatrixXd mel_filterbank(int sample_rate, int n_fft) {
  const int bins = n_fft / 2 + 1;
  const double nyquist = sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> edges(kMelBands + 2);
  for (int i = 0; i < kMelBands + 2; ++i) edges[i] = mel_to_hz(mel_max * i / (kMelBands + 1));
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(bins, kMelBands);
  for (int k = 0; k < bins; ++k) {
    const double f = static_cast<double>(k) * sample_rate / n_fft;
    for (int m = 0; m < kMelBands; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      double w = 0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb(k, m) = w;
    }
  }
  return fb;
}

int to_samples(double ms, int sample_rate) {
  return static_cast<int>(std::lround(ms * sample_rate / 1000.0));
}

}  // namespace

void AudioClip::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("audio clip: sample_rate must be positive");
  for (float s : samples) {
    if (!std::isfinite(s) || s < -1.0f || s > 1.0f) {
      throw std::invalid_argument("audio clip: samples must be finite and within [-1, 1]");
    }
  }
}

FeatureMatrix FacialFeatureSequence::lips() const {
  return fused.middleCols(kEmbeddingDim + 2 * kLipFirstPoint, kLipDim);
}

int mel_frame_count(long samples, int window_samples, int hop_samples) {
  if (samples < window_samples) return 0;
  return static_cast<int>((samples - window_samples) / hop_samples) + 1;
}

MelSpectrogram extract_mel(const AudioClip& clip, double window_ms, double hop_ms) {
  if (!(hop_ms > 0) || window_ms < hop_ms) {
    throw std::invalid_argument("extract_mel: need window_ms >= hop_ms > 0");
  }
  if (clip.samples.empty()) throw std::invalid_argument("extract_mel: empty clip");
  if (clip.sample_rate <= 0) throw std::invalid_argument("extract_mel: bad sample rate");
  const int window = to_samples(window_ms, clip.sample_rate);
  const int hop = to_samples(hop_ms, clip.sample_rate);
  const int frames = mel_frame_count(static_cast<long>(clip.samples.size()), window, hop);
  if (frames <= 0) throw std::invalid_argument("clip too short");

  int n_fft = 1024;
  while (n_fft < window) n_fft *= 2;
  const Eigen::MatrixXd fb = mel_filterbank(clip.sample_rate, n_fft);
  std::vector<double> hann(window);
  for (int i = 0; i < window; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / window);
  }

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(n_fft, 0.0);
  std::vector<std::complex<double>> spec;
  Eigen::RowVectorXd mag(n_fft / 2 + 1);

  MelSpectrogram out;
  out.window_ms = window_ms;
  out.hop_ms = hop_ms;
  out.frames.resize(frames, kMelBands);
  for (int t = 0; t < frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * hop;
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int i = 0; i < window; ++i) buf[i] = clip.samples[start + i] * hann[i];
    fft.fwd(spec, buf);
    for (int k = 0; k <= n_fft / 2; ++k) mag[k] = std::abs(spec[k]);
    const Eigen::RowVectorXd bands = mag * fb;
    for (int m = 0; m < kMelBands; ++m) {
      out.frames(t, m) = static_cast<float>(std::log(std::max(bands[m], 1e-5)));
    }
  }
  return out;
}

FacialFeatureSequence fuse_facial(const FeatureMatrix& embedding, const FeatureMatrix& keypoints) {
  if (embedding.cols() != kEmbeddingDim) {
    throw std::invalid_argument("fuse_facial: embedding width must be 4096, got " +
                                std::to_string(embedding.cols()));
  }
  if (keypoints.cols() != kKeypointDim) {
    throw std::invalid_argument("fuse_facial: keypoint width must be 140, got " +
                                std::to_string(keypoints.cols()));
  }
  if (embedding.rows() != keypoints.rows()) {
    throw std::invalid_argument("fuse_facial: embedding and keypoints differ in frame count");
  }
  if (!embedding.allFinite() || !keypoints.allFinite()) {
    throw std::invalid_argument("fuse_facial: non-finite entries");
  }
  FacialFeatureSequence seq;
  seq.fused.resize(embedding.rows(), kFacialDim);
  seq.fused.leftCols(kEmbeddingDim) = embedding;
  seq.fused.rightCols(kKeypointDim) = keypoints;
  return seq;
}

void check_rate_tied(const UtteranceFeatures& u) {
  if (u.mel.frames.cols() != kMelBands) throw std::invalid_argument("mel width must be 80");
  if (u.facial.fused.cols() != kFacialDim) throw std::invalid_argument("facial width must be 4236");
  if (u.mel.length() != kMelPerFacial * u.facial.length()) {
    throw std::invalid_argument("utterance " + u.utterance_id + " is not rate-tied: " +
                                std::to_string(u.mel.length()) + " mel frames vs " +
                                std::to_string(u.facial.length()) + " facial frames");
  }
}

UtteranceFeatures tie_to_video_rate(const UtteranceFeatures& u) {
  if (std::abs(u.mel.hop_ms * kMelPerFacial - 1000.0 / u.facial.fps) > 1e-9) {
    throw std::invalid_argument("tie_to_video_rate: expects 5 ms mel hop and 25 fps video");
  }
  const int tv = std::min(u.facial.length(), u.mel.length() / kMelPerFacial);
  if (tv <= 0) {
    throw std::invalid_argument("tie_to_video_rate: utterance " + u.utterance_id +
                                " too short to form one tied frame");
  }
  UtteranceFeatures out = u;
  out.mel.frames = u.mel.frames.topRows(static_cast<Eigen::Index>(tv) * kMelPerFacial);
  out.facial.fused = u.facial.fused.topRows(tv);
  return out;
}

std::vector<TrainingWindow> make_training_windows(const UtteranceFeatures& u) {
  check_rate_tied(u);
  std::vector<TrainingWindow> windows;
  const int n = u.facial.length() / kWindowFacialFrames;
  windows.reserve(n);
  for (int i = 0; i < n; ++i) {
    TrainingWindow w;
    w.mel = u.mel.frames.middleRows(static_cast<Eigen::Index>(i) * kWindowMelFrames, kWindowMelFrames);
    w.facial = u.facial.fused.middleRows(static_cast<Eigen::Index>(i) * kWindowFacialFrames,
                                         kWindowFacialFrames);
    windows.push_back(std::move(w));
  }
  return windows;
}

}  // namespace avsc
