#pragma once

#include "avsc/avdata.hpp"
#include "avsc/nn/checkpoint.hpp"
#include "avsc/nn/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace avsc {

struct ConditionSpec {
  int mel_dim = kMelBands;
  /// 0 gives the audio-only variant.
  int facial_dim = kFacialDim;
  /// Waveform samples per mel hop.
  int frames_per_mel = 80;
};

struct VocoderConfig {
  int n_dilated_layers = 40;
  std::vector<int> dilation_cycle{1, 2, 4, 8, 16, 32, 64, 128, 256, 512};
  int kernel_size = 2;
  int residual_channels = 64;
  int skip_channels = 128;
  int cond_channels = 64;
  int quantization_levels = 256;
  int sample_rate = 16000;
  ConditionSpec cond;

  int dilation(int layer) const { return dilation_cycle[layer % dilation_cycle.size()]; }
  /// Number of past steps whose codes reach one output: 1 + sum (k-1)*d.
  int receptive_field() const;
  void validate() const;

  static VocoderConfig desk();
};

nlohmann::json to_json(const VocoderConfig& cfg);
VocoderConfig vocoder_config_from_json(const nlohmann::json& j);

struct QuantizedWaveform {
  std::vector<int> codes;
  int sample_rate = 16000;
};

inline constexpr int kMuLawMid = 128;

/// 8-bit mu-law (mu = 255). Amplitudes outside [-1, 1] are clipped and counted
/// in `clipped` when given.
QuantizedWaveform mu_law_encode(const AudioClip& clip, long* clipped = nullptr);
int mu_law_encode(double x);
AudioClip mu_law_decode(const QuantizedWaveform& q);
double mu_law_decode(int code);

using VocoderParams = nn::Weights;

VocoderParams init_vocoder_params(const VocoderConfig& cfg, std::uint64_t seed);

/// Per-sample conditioning: facial rows repeated x8, joined to mel, projected
/// to cond_channels by the learned condition layer, then each mel frame
/// repeated frames_per_mel times. Output rows = T_a * frames_per_mel.
nn::Matrix build_condition(const VocoderParams& params, const VocoderConfig& cfg, const nn::Matrix& mel,
                           const nn::Matrix& facial);

/// T x 256 logits; row t sees codes[0..t-1] and cond rows [0..t].
nn::Matrix teacher_forced_logits(const VocoderParams& params, const VocoderConfig& cfg, const std::vector<int>& codes,
                                 const nn::Matrix& cond);

/// Mean next-code cross-entropy (nats per sample).
double cross_entropy(const nn::Matrix& logits, const std::vector<int>& codes);

struct VocoderGradients {
  double loss = 0;
  nn::ParamMap grads;
};

/// Loss and gradients for one clip, through the condition layer.
VocoderGradients vocoder_gradients(const VocoderParams& params, const VocoderConfig& cfg,
                                   const std::vector<int>& codes, const nn::Matrix& mel, const nn::Matrix& facial);

struct VocoderExample {
  std::vector<int> codes;
  nn::Matrix mel;     // T_a x mel_dim; codes.size() == T_a * frames_per_mel
  nn::Matrix facial;  // T_a/8 x facial_dim (ignored when facial_dim == 0)
};

VocoderExample make_vocoder_example(const VocoderConfig& cfg, const AudioClip& clip, const UtteranceFeatures& u);

struct VocoderHyper {
  double lr = 1e-3;
  /// One random segment of every clip per epoch.
  int epochs = 199;
  /// Training segment length in mel frames; 0 uses whole clips.
  int segment_frames = 40;
  std::uint64_t seed = 0;
};

struct VocoderTrainResult {
  VocoderParams params;
  std::vector<double> trace;  // loss per step
};

VocoderTrainResult train_vocoder(const std::vector<VocoderExample>& corpus, const VocoderConfig& cfg,
                                 const VocoderHyper& hyper, const VocoderParams* warm_start = nullptr);

struct GenerateOptions {
  bool greedy = false;
  double temperature = 1.0;
};

/// Autoregressive sampling, one code per conditioning row.
AudioClip generate(const VocoderParams& params, const VocoderConfig& cfg, const nn::Matrix& cond, std::uint64_t seed,
                   const GenerateOptions& opts = {});
QuantizedWaveform generate_codes(const VocoderParams& params, const VocoderConfig& cfg, const nn::Matrix& cond,
                                 std::uint64_t seed, const GenerateOptions& opts = {});

nn::Checkpoint to_checkpoint(const VocoderParams& params, const VocoderConfig& cfg);

}  // namespace avsc
