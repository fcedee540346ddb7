#pragma once

#include "avsc/avdata.hpp"
#include "avsc/image.hpp"
#include "avsc/nn/checkpoint.hpp"
#include "avsc/nn/optim.hpp"
#include "avsc/nn/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace avsc {

struct ImageGanConfig {
  int mel_frames = kMelPerFacial;
  int mel_dim = kMelBands;
  int facial_dim = kFacialDim;
  /// Width of the first fully connected layer.
  int fc_hidden = 4096;
  /// The second fully connected layer emits reshape_side^2 values, read as a
  /// reshape_side x reshape_side x 1 map.
  int reshape_side = 64;
  std::vector<int> gen_channels{64, 64, 128, 128, 64, 64, 3};
  /// 'D' for a stride-2 transposed convolution, 'C' for a stride-1 convolution.
  std::string gen_layout = "DCDCCCC";
  int deconv_kernel = 5;
  int conv_kernel = 3;
  std::vector<int> disc_channels{8, 16, 32, 32};
  int disc_kernel = 3;
  double l1_weight = 10.0;
  double lr_g = 1e-3;
  double lr_d = 1e-5;

  int input_dim() const { return mel_frames * mel_dim + facial_dim; }
  int image_side() const;
  /// Side length of the last discriminator feature map.
  int disc_side() const;
  void validate() const;

  /// Small images and channels for single-workstation runs.
  static ImageGanConfig desk();
};

nlohmann::json to_json(const ImageGanConfig& cfg);
ImageGanConfig imagegen_config_from_json(const nlohmann::json& j);

struct ImageGanParams {
  nn::Weights generator;
  nn::Weights discriminator;

  bool operator==(const ImageGanParams&) const = default;
};

ImageGanParams init_imagegen_params(const ImageGanConfig& cfg, std::uint64_t seed);

/// Inference-mode generator: (8 x 80 mel block, 4236 facial row) -> image.
RgbImage generator_forward(const nn::Weights& g, const ImageGanConfig& cfg, const nn::Matrix& mel_block,
                           const nn::RowVector& facial);
double discriminator_forward(const nn::Weights& d, const ImageGanConfig& cfg, const RgbImage& img);

/// 1/2 mean (D(real) - 1)^2 + 1/2 mean D(fake)^2.
double lsgan_d_loss(const std::vector<double>& real_scores, const std::vector<double>& fake_scores);
/// 1/2 mean (D(fake) - 1)^2.
double lsgan_g_adversarial(const std::vector<double>& fake_scores);
/// Mean absolute pixel error over the batch.
double mean_abs_error(const std::vector<RgbImage>& a, const std::vector<RgbImage>& b);
/// Adversarial term plus l1_weight * mean |fake - real|.
double lsgan_g_loss(const std::vector<double>& fake_scores, const std::vector<RgbImage>& fakes,
                    const std::vector<RgbImage>& reals, double l1_weight);

struct GanExample {
  nn::Matrix mel_block;  // 8 x 80
  nn::RowVector facial;  // 4236
  RgbImage target;
};

struct GanLosses {
  double d_loss = 0;
  double g_loss = 0;  // adversarial + l1_weight * l1
  double g_adversarial = 0;
  double l1 = 0;
};

/// Gradients of d_loss over discriminator parameters with generated images
/// treated as constants (training-mode generator, no statistic updates).
nn::ParamMap discriminator_gradients(const ImageGanParams& p, const ImageGanConfig& cfg,
                                     const std::vector<GanExample>& batch, GanLosses* losses = nullptr);
/// Gradients of g_loss over generator parameters, discriminator fixed.
nn::ParamMap generator_gradients(const ImageGanParams& p, const ImageGanConfig& cfg,
                                 const std::vector<GanExample>& batch, GanLosses* losses = nullptr);

struct GanState {
  ImageGanParams params;
  nn::Adam opt_g;
  nn::Adam opt_d;

  GanState(ImageGanParams p, const ImageGanConfig& cfg);
};

/// Discriminator update (lr_d) on detached fakes, then generator update (lr_g)
/// against the updated discriminator. d_loss is measured before the
/// discriminator update, the generator terms after it.
GanLosses lsgan_step(GanState& state, const ImageGanConfig& cfg, const std::vector<GanExample>& batch);

struct ImageGanHyper {
  int batch = 64;
  int epochs = 30;
  std::uint64_t seed = 0;
};

struct ImageGanTrainResult {
  ImageGanParams params;
  std::vector<GanLosses> trace;  // per-epoch means
};

ImageGanTrainResult train_imagegen(const std::vector<GanExample>& corpus, const ImageGanConfig& cfg,
                                   const ImageGanHyper& hyper, const ImageGanParams* warm_start = nullptr);

/// One example per facial frame: mel frames 8k..8k+7, facial row k and image k.
std::vector<GanExample> make_gan_examples(const UtteranceFeatures& u, const std::vector<RgbImage>& frames);

/// Images for every facial frame of an utterance.
std::vector<RgbImage> render_frames(const nn::Weights& g, const ImageGanConfig& cfg, const UtteranceFeatures& u);

void write_gan_trace_csv(const std::filesystem::path& path, const std::vector<GanLosses>& trace);

nn::Checkpoint to_checkpoint(const ImageGanParams& params, const ImageGanConfig& cfg);

}  // namespace avsc
