#pragma once

#include "avsc/align.hpp"
#include "avsc/avdata.hpp"
#include "avsc/nn/checkpoint.hpp"
#include "avsc/nn/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace avsc {

enum class TransformMode { kJoint, kAudioOnly, kVisualOnly };

std::string to_string(TransformMode m);
TransformMode transform_mode_from_string(const std::string& s);

/// Output channels per layer of each sub-network.
struct ChannelPlan {
  std::vector<int> audio_down{128, 256, 512};
  std::vector<int> facial_in{512, 512};
  std::vector<int> fusion{1024, 1024};
  std::vector<int> audio_up{256, 128, 64};
  std::vector<int> facial_out{512};
};

struct TransformNetConfig {
  int kernel_size = 5;
  /// Strides of the audio encoder; the decoder mirrors them.
  std::vector<int> audio_down_strides{2, 2, 2};
  ChannelPlan channels;
  TransformMode mode = TransformMode::kJoint;
  double acoustic_loss_weight = 10.0;
  int mel_dim = kMelBands;
  int facial_dim = kFacialDim;

  /// Time-downsampling factor of the audio encoder.
  int audio_factor() const;
  void validate() const;

  /// Reduced channel plan for single-workstation runs.
  static TransformNetConfig desk();
};

nlohmann::json to_json(const TransformNetConfig& cfg);
TransformNetConfig transform_config_from_json(const nlohmann::json& j);

/// Convolution weights/biases and normalization parameters, keyed
/// "<sub-network>.<layer>" (e.g. "audio_down.0.w", "fusion.1.bn.gamma").
using TransformNetParams = nn::Weights;

TransformNetParams init_transform_params(const TransformNetConfig& cfg, std::uint64_t seed);

struct TransformOutput {
  nn::Matrix mel;     // T_a x mel_dim
  nn::Matrix facial;  // T_v x facial_dim
};

/// Inference-mode forward pass. In joint mode requires T_a == 8 * T_v.
TransformOutput forward(const TransformNetParams& params, const TransformNetConfig& cfg, const nn::Matrix& mel,
                        const nn::Matrix& facial);

struct LossTerms {
  double total = 0;
  double acoustic = 0;  // mean |mel error|, unweighted
  double facial = 0;    // mean |facial error|
};

/// w_a * mean|pred_mel - tgt_mel| + mean|pred_facial - tgt_facial|.
LossTerms transform_loss(const nn::Matrix& pred_mel, const nn::Matrix& pred_facial, const nn::Matrix& tgt_mel,
                         const nn::Matrix& tgt_facial, double acoustic_weight = 10.0);

struct TransformBatch {
  nn::Batch src_mel, src_facial, tgt_mel, tgt_facial;
};

/// Loss over a batch and its gradient with respect to every parameter.
/// Training mode uses batch statistics; running statistics are updated only
/// when `buffers` is non-null.
struct TransformGradients {
  LossTerms loss;
  nn::ParamMap grads;
};
TransformGradients transform_gradients(const TransformNetParams& params, const TransformNetConfig& cfg,
                                       const TransformBatch& batch, nn::Mode mode, nn::ParamMap* buffers);

struct TransformHyper {
  double lr = 1e-4;
  int batch = 64;
  int epochs = 600;
  std::uint64_t seed = 0;
};

struct EpochLoss {
  int epoch = 0;
  double total = 0, acoustic = 0, facial = 0;
};

struct TransformTrainResult {
  TransformNetParams params;
  std::vector<EpochLoss> trace;
};

/// Adam on shuffled mini-batches of 400/50-frame windows cut from the pairs.
TransformTrainResult train_transform(const std::vector<UtterancePair>& corpus, const TransformNetConfig& cfg,
                                     const TransformHyper& hyper, const TransformNetParams* warm_start = nullptr);

/// Full-length conversion. Streams the mode does not model pass through.
UtteranceFeatures convert(const TransformNetParams& params, const TransformNetConfig& cfg, const UtteranceFeatures& u);

/// Audio-only and visual-only variants with every stride set to one.
std::pair<TransformNetConfig, TransformNetConfig> make_baselines(const TransformNetConfig& cfg);

void write_loss_trace_csv(const std::filesystem::path& path, const std::vector<EpochLoss>& trace);

nn::Checkpoint to_checkpoint(const TransformNetParams& params, const TransformNetConfig& cfg);

}  // namespace avsc
