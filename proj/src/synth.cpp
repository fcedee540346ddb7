#include "avsc/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>

namespace avsc {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kComponents = 4;
constexpr int kArticulators = 3;  // jaw opening, lip rounding, lip spread
constexpr int kEmbedFeatures = 7;
constexpr std::uint64_t kSharedProjectionSeed = 0x5eed'0f'e4b3ddULL;

/// Smooth random signal: a sum of sinusoids with random frequency and phase.
struct SmoothSignal {
  std::array<double, kComponents> amp{}, freq{}, phase{};

  static SmoothSignal draw(std::mt19937_64& rng, double f_lo, double f_hi) {
    std::uniform_real_distribution<double> a(0.5, 1.0), f(f_lo, f_hi), p(0.0, kTwoPi);
    SmoothSignal s;
    double norm = 0;
    for (int i = 0; i < kComponents; ++i) {
      s.amp[i] = a(rng);
      s.freq[i] = f(rng);
      s.phase[i] = p(rng);
      norm += s.amp[i] * s.amp[i];
    }
    // unit variance overall
    const double scale = std::sqrt(2.0 / norm);
    for (double& v : s.amp) v *= scale;
    return s;
  }

  double operator()(double t) const {
    double v = 0;
    for (int i = 0; i < kComponents; ++i) v += amp[i] * std::sin(kTwoPi * freq[i] * t + phase[i]);
    return v;
  }
};

using Articulation = std::array<double, kArticulators>;

/// Shared articulation of one sentence plus the two source-only nuisances.
struct Sentence {
  std::array<SmoothSignal, kArticulators> latent;
  std::array<SmoothSignal, kArticulators> audio_nuisance;
  std::array<SmoothSignal, kArticulators> visual_nuisance;
  double gain = 1.0;

  static Articulation squash(const std::array<double, kArticulators>& raw, double gain) {
    // opening in [0, 1]; rounding and spread in [-1, 1]
    return {1.0 / (1.0 + std::exp(-1.6 * gain * raw[0])), std::tanh(0.8 * gain * raw[1]),
            std::tanh(0.8 * gain * raw[2])};
  }

  Articulation at(double tau, const std::array<SmoothSignal, kArticulators>* nuisance, double level) const {
    std::array<double, kArticulators> raw{};
    for (int k = 0; k < kArticulators; ++k) {
      raw[k] = latent[k](tau);
      if (nuisance != nullptr) raw[k] += level * (*nuisance)[k](tau);
    }
    return squash(raw, gain);
  }
};

struct SpeakerModel {
  SpeakerStyle style;
  nn::Matrix projection;  // 4096 x 7
  Eigen::VectorXd offset;
};

SpeakerModel make_speaker(const SpeakerStyle& style) {
  std::mt19937_64 shared(kSharedProjectionSeed);
  std::mt19937_64 own(style.appearance_seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  SpeakerModel m{style, nn::Matrix(kEmbeddingDim, kEmbedFeatures), Eigen::VectorXd(kEmbeddingDim)};
  for (Eigen::Index i = 0; i < m.projection.size(); ++i) m.projection.data()[i] = 0.8 * n01(shared);
  for (Eigen::Index i = 0; i < m.projection.size(); ++i) m.projection.data()[i] += 0.25 * n01(own);
  for (Eigen::Index i = 0; i < m.offset.size(); ++i) m.offset[i] = 0.3 * n01(own);
  return m;
}

/// Template face with the articulation applied; 70 (x, y) pairs in [0, 1].
Eigen::RowVectorXf face_keypoints(const Articulation& a, const SpeakerStyle& s, std::mt19937_64& rng,
                                  double jitter) {
  const double open = a[0], round = a[1], spread = a[2];
  std::array<double, kKeypointDim> p{};
  auto set = [&](int i, double x, double y) {
    p[2 * i] = x;
    p[2 * i + 1] = y;
  };
  for (int i = 0; i <= 16; ++i) {
    const double u = std::numbers::pi * i / 16.0;
    set(i, 0.5 - 0.3 * std::cos(u), 0.38 + (0.42 + 0.05 * open) * std::sin(u));
  }
  for (int i = 0; i < 5; ++i) {
    const double u = std::numbers::pi * i / 4.0;
    set(17 + i, 0.28 + 0.04 * i, 0.30 - 0.02 * std::sin(u));
    set(22 + i, 0.56 + 0.04 * i, 0.30 - 0.02 * std::sin(u));
  }
  for (int i = 0; i < 4; ++i) set(27 + i, 0.5, 0.36 + 0.045 * i);
  for (int i = 0; i < 5; ++i) set(31 + i, 0.45 + 0.025 * i, 0.55 + 0.01 * std::sin(std::numbers::pi * i / 4.0));
  for (int e = 0; e < 2; ++e) {
    const double cx = e == 0 ? 0.36 : 0.64;
    for (int i = 0; i < 6; ++i) {
      const double u = kTwoPi * i / 6.0;
      set(36 + 6 * e + i, cx + 0.05 * std::cos(u), 0.38 + 0.02 * std::sin(u));
    }
    set(68 + e, cx, 0.38);
  }
  const double cy = 0.68 + 0.03 * open;
  const double rx = s.mouth_width * (1.0 - 0.3 * round + 0.15 * spread);
  const double ry = s.mouth_height * (0.35 + 1.2 * open) * (1.0 + 0.25 * round);
  for (int i = 0; i < 12; ++i) {
    const double u = kTwoPi * i / 12.0;
    const double corner = std::pow(std::cos(u), 2.0);
    set(48 + i, 0.5 - rx * std::cos(u), cy + ry * std::sin(u) - 0.02 * spread * corner);
  }
  for (int i = 0; i < 8; ++i) {
    const double u = kTwoPi * i / 8.0;
    set(60 + i, 0.5 - 0.65 * rx * std::cos(u), cy + 0.75 * ry * open * std::sin(u));
  }

  std::normal_distribution<double> noise(0.0, jitter);
  Eigen::RowVectorXf out(kKeypointDim);
  for (int i = 0; i < kKeypointCount; ++i) {
    const double x = 0.5 + s.face_scale * (p[2 * i] - 0.5) + s.face_dx;
    const double y = 0.5 + s.face_scale * (p[2 * i + 1] - 0.5) + s.face_dy;
    out[2 * i] = static_cast<float>(x + (jitter > 0 ? noise(rng) : 0.0));
    out[2 * i + 1] = static_cast<float>(y + (jitter > 0 ? noise(rng) : 0.0));
  }
  return out;
}

Eigen::RowVectorXf face_embedding(const Articulation& a, const SpeakerModel& sp) {
  Eigen::VectorXd phi(kEmbedFeatures);
  phi << a[0], a[1], a[2], a[0] * a[1], a[0] * a[2], a[1] * a[2], a[0] * a[0];
  const Eigen::VectorXd z = sp.projection * phi + sp.offset;
  return z.array().tanh().cast<float>().transpose();
}

double spectral_envelope(double f, const Articulation& a, const SpeakerStyle& s) {
  const double f1 = s.formant1_hz + 450.0 * a[0];
  const double f2 = s.formant2_hz - 500.0 * a[1] + 300.0 * a[2];
  const double f3 = s.formant3_hz + 250.0 * a[2];
  auto peak = [f](double c, double bw) { return std::exp(-0.5 * std::pow((f - c) / bw, 2.0)); };
  return peak(f1, 130.0) + 0.6 * peak(f2, 180.0) + 0.3 * peak(f3, 250.0) + 0.02;
}

/// Harmonic source-filter synthesis driven by the articulation trajectory.
AudioClip synthesize_audio(const std::function<Articulation(double)>& articulation, long n_samples,
                           const SpeakerStyle& s, int sample_rate, std::mt19937_64& rng) {
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.resize(static_cast<std::size_t>(n_samples));
  const double nyquist = sample_rate / 2.0;
  const int harmonics = std::max(1, static_cast<int>((nyquist - 200.0) / (s.f0_hz * 1.1)));
  std::vector<double> phase(harmonics, 0.0);
  std::vector<double> env(harmonics, 0.0);
  std::normal_distribution<double> breath(0.0, 1e-3);
  // Articulation is refreshed every 1 ms and held in between.
  const int refresh = std::max(1, sample_rate / 1000);
  Articulation a{};
  double f0 = s.f0_hz, amp = 0;
  for (long n = 0; n < n_samples; ++n) {
    if (n % refresh == 0) {
      a = articulation(static_cast<double>(n) / sample_rate);
      f0 = s.f0_hz * (1.0 + 0.06 * a[2]);
      amp = 0.02 + 0.5 * a[0];
      for (int k = 0; k < harmonics; ++k) env[k] = spectral_envelope((k + 1) * f0, a, s) / std::sqrt(k + 1.0);
    }
    double v = 0;
    for (int k = 0; k < harmonics; ++k) {
      phase[k] += kTwoPi * (k + 1) * f0 / sample_rate;
      if (phase[k] > kTwoPi) phase[k] -= kTwoPi;
      if ((k + 1) * f0 < nyquist) v += env[k] * std::sin(phase[k]);
    }
    clip.samples[static_cast<std::size_t>(n)] = static_cast<float>(0.35 * amp * v + breath(rng));
  }
  float peak = 0;
  for (float v : clip.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.95f) {
    for (float& v : clip.samples) v *= 0.95f / peak;
  }
  return clip;
}

struct Rendered {
  UtteranceFeatures features;
  AudioClip clip;
};

Rendered render_speaker(const Sentence& sentence, const std::function<double(double)>& canonical_time,
                        int facial_frames, const SpeakerModel& sp, const SynthConfig& cfg, bool is_source,
                        const std::string& utterance_id, std::mt19937_64& rng) {
  const auto* audio_nuisance = is_source ? &sentence.audio_nuisance : nullptr;
  const auto* visual_nuisance = is_source ? &sentence.visual_nuisance : nullptr;

  Rendered r;
  r.clip = synthesize_audio(
      [&](double t) { return sentence.at(canonical_time(t), audio_nuisance, cfg.source_audio_nuisance); },
      tied_clip_samples(facial_frames, cfg.sample_rate), sp.style, cfg.sample_rate, rng);

  FeatureMatrix embedding(facial_frames, kEmbeddingDim);
  FeatureMatrix keypoints(facial_frames, kKeypointDim);
  for (int f = 0; f < facial_frames; ++f) {
    const double t = (f + 0.5) / kFacialFps;
    const Articulation a = sentence.at(canonical_time(t), visual_nuisance, cfg.source_visual_nuisance);
    embedding.row(f) = face_embedding(a, sp);
    keypoints.row(f) = face_keypoints(a, sp.style, rng, cfg.keypoint_noise);
  }

  UtteranceFeatures& u = r.features;
  u.mel = extract_mel(r.clip, kTrainWindowMs, kTrainHopMs);
  u.facial = fuse_facial(embedding, keypoints);
  u.speaker_id = sp.style.id;
  u.utterance_id = utterance_id;
  u.emotion = "synthetic";
  return r;
}

}  // namespace

SpeakerStyle default_source_speaker() {
  SpeakerStyle s;
  s.id = "SRC";
  s.f0_hz = 115.0;
  s.formant1_hz = 450.0;
  s.formant2_hz = 1400.0;
  s.formant3_hz = 2400.0;
  s.face_scale = 1.0;
  s.mouth_width = 0.12;
  s.mouth_height = 0.05;
  s.appearance_seed = 11;
  s.skin_r = 0.80, s.skin_g = 0.62, s.skin_b = 0.50;
  return s;
}

SpeakerStyle default_target_speaker() {
  SpeakerStyle s;
  s.id = "TGT";
  s.f0_hz = 205.0;
  s.formant1_hz = 600.0;
  s.formant2_hz = 1750.0;
  s.formant3_hz = 2850.0;
  s.face_scale = 0.9;
  s.face_dx = 0.02;
  s.face_dy = -0.01;
  s.mouth_width = 0.10;
  s.mouth_height = 0.06;
  s.appearance_seed = 29;
  s.skin_r = 0.92, s.skin_g = 0.76, s.skin_b = 0.66;
  return s;
}

void SynthConfig::validate() const {
  if (sample_rate <= 0 || sample_rate % 1000 != 0) {
    throw std::invalid_argument("synth config: sample_rate must be a positive multiple of 1000");
  }
  if (!(min_duration_s > 0) || max_duration_s < min_duration_s) {
    throw std::invalid_argument("synth config: need 0 < min_duration_s <= max_duration_s");
  }
  if (articulation_gain < 0 || source_audio_nuisance < 0 || source_visual_nuisance < 0 || keypoint_noise < 0) {
    throw std::invalid_argument("synth config: gains and noise levels must be non-negative");
  }
  if (tempo_spread < 0 || tempo_spread >= 0.5) {
    throw std::invalid_argument("synth config: tempo_spread must be in [0, 0.5)");
  }
}

long tied_clip_samples(int facial_frames, int sample_rate) {
  const long per_facial = std::lround(sample_rate / kFacialFps);
  const long window = std::lround(kTrainWindowMs * sample_rate / 1000.0);
  const long hop = std::lround(kTrainHopMs * sample_rate / 1000.0);
  return facial_frames * per_facial + (window - hop);
}

ParallelCorpus synth_parallel_corpus(std::uint64_t seed, int n_utterances, const SynthConfig& cfg) {
  if (n_utterances < 1) throw std::invalid_argument("synth_parallel_corpus: n_utterances must be >= 1");
  return synth_parallel_range(seed, 0, n_utterances, cfg);
}

ParallelCorpus synth_parallel_range(std::uint64_t seed, int first, int count, const SynthConfig& cfg) {
  if (first < 0 || count < 0) throw std::invalid_argument("synth_parallel_range: negative range");
  cfg.validate();
  const SpeakerModel source = make_speaker(cfg.source);
  const SpeakerModel target = make_speaker(cfg.target);

  ParallelCorpus corpus;
  for (int i = first; i < first + count; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), 0xa11dU};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Sentence sentence;
    sentence.gain = cfg.articulation_gain;
    for (int k = 0; k < kArticulators; ++k) {
      const double f_lo = k == 0 ? 1.5 : 0.5, f_hi = k == 0 ? 4.0 : 2.0;
      sentence.latent[k] = SmoothSignal::draw(rng, f_lo, f_hi);
      sentence.audio_nuisance[k] = SmoothSignal::draw(rng, f_lo, f_hi);
      sentence.visual_nuisance[k] = SmoothSignal::draw(rng, f_lo, f_hi);
    }
    const double duration = cfg.min_duration_s + (cfg.max_duration_s - cfg.min_duration_s) * unit(rng);
    const int src_frames = std::max(1, static_cast<int>(std::lround(duration * kFacialFps)));
    const double tempo = 1.0 + cfg.tempo_spread * (2.0 * unit(rng) - 1.0);
    const int tgt_frames = std::max(1, static_cast<int>(std::lround(src_frames * tempo)));
    const double warp = 0.05 * (2.0 * unit(rng) - 1.0);

    const double src_len = src_frames / kFacialFps;
    const double tgt_len = tgt_frames / kFacialFps;
    const auto src_time = [](double t) { return t; };
    const auto tgt_time = [=](double t) {
      const double x = t / tgt_len;
      return src_len * (x + warp * std::sin(kTwoPi * x) / kTwoPi);
    };

    char id[16];
    std::snprintf(id, sizeof(id), "utt%04d", i);
    Rendered s = render_speaker(sentence, src_time, src_frames, source, cfg, true, id, rng);
    Rendered t = render_speaker(sentence, tgt_time, tgt_frames, target, cfg, false, id, rng);
    corpus.source.push_back(std::move(s.features));
    corpus.target.push_back(std::move(t.features));
    corpus.source_clips.push_back(std::move(s.clip));
    corpus.target_clips.push_back(std::move(t.clip));
  }
  return corpus;
}

RgbImage render_face(const Eigen::Ref<const Eigen::RowVectorXf>& keypoints, const SpeakerStyle& style, int size) {
  if (keypoints.size() != kKeypointDim) throw std::invalid_argument("render_face: need 140 keypoint values");
  RgbImage img;
  img.height = size;
  img.width = size;
  img.pixels.resize(static_cast<Eigen::Index>(size) * size, 3);

  // face ellipse from the jaw line and brows
  double cx = 0, top = 1, bottom = 0, left = 1, right = 0;
  for (int i = 0; i <= 26; ++i) {
    cx += keypoints[2 * i];
    top = std::min<double>(top, keypoints[2 * i + 1]);
    bottom = std::max<double>(bottom, keypoints[2 * i + 1]);
    left = std::min<double>(left, keypoints[2 * i]);
    right = std::max<double>(right, keypoints[2 * i]);
  }
  cx /= 27;
  const double cy = 0.5 * (top + bottom), ry = 0.5 * (bottom - top) + 0.05, rx = 0.5 * (right - left);
  const double sigma = 0.012;

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = (x + 0.5) / size, py = (y + 0.5) / size;
      double r = 0.20, g = 0.24, b = 0.30;
      const double e = std::pow((px - cx) / rx, 2.0) + std::pow((py - cy) / ry, 2.0);
      const double skin = 1.0 / (1.0 + std::exp((e - 1.0) * 25.0));
      r += skin * (style.skin_r - r);
      g += skin * (style.skin_g - g);
      b += skin * (style.skin_b - b);
      double lips = 0, dark = 0;
      for (int i = 17; i < kKeypointCount; ++i) {
        const double dx = px - keypoints[2 * i], dy = py - keypoints[2 * i + 1];
        const double w = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        if (i >= kLipFirstPoint && i < kLipFirstPoint + kLipPointCount) lips = std::max(lips, w);
        else dark = std::max(dark, w);
      }
      r += lips * (0.70 - r);
      g += lips * (0.18 - g);
      b += lips * (0.22 - b);
      r *= 1.0 - 0.7 * dark;
      g *= 1.0 - 0.7 * dark;
      b *= 1.0 - 0.7 * dark;
      const int p = y * size + x;
      img.pixels(p, 0) = std::clamp(r, 0.0, 1.0);
      img.pixels(p, 1) = std::clamp(g, 0.0, 1.0);
      img.pixels(p, 2) = std::clamp(b, 0.0, 1.0);
    }
  }
  return img;
}

}  // namespace avsc
