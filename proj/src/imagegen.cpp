#include "avsc/imagegen.hpp"

#include "avsc/nn/layers.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace avsc {

using nn::Batch;
using nn::Matrix;
using nn::RowVector;

namespace {

class Generator {
 public:
  explicit Generator(const ImageGanConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const int fc_out = cfg.reshape_side * cfg.reshape_side;
    fc1_ = nn::Linear("fc.0", cfg.input_dim(), cfg.fc_hidden);
    bn1_ = nn::BatchNorm("fc.0.bn", cfg.fc_hidden);
    fc2_ = nn::Linear("fc.1", cfg.fc_hidden, fc_out);
    bn2_ = nn::BatchNorm("fc.1.bn", fc_out);
    int side = cfg.reshape_side, in = 1;
    const std::size_t n = cfg.gen_channels.size();
    for (std::size_t i = 0; i < n; ++i) {
      Stage s;
      const std::string name = "conv." + std::to_string(i);
      const int out = cfg.gen_channels[i];
      s.transposed = cfg.gen_layout[i] == 'D';
      if (s.transposed) {
        s.deconv = nn::ConvTranspose(name, in, out, nn::same_2d(2 * side, 2 * side, cfg.deconv_kernel, 2));
        side *= 2;
      } else {
        s.conv = nn::Conv(name, in, out, nn::same_2d(side, side, cfg.conv_kernel, 1));
      }
      s.last = i + 1 == n;
      if (!s.last) s.bn = nn::BatchNorm(name + ".bn", out);
      stages_.push_back(std::move(s));
      in = out;
    }
    out_act_ = nn::Activation(nn::ActivationKind::kSigmoid);
  }

  void init(nn::Weights& w, nn::Rng& rng) const {
    fc1_.init(w.params, rng);
    bn1_.init(w.params, w.buffers);
    fc2_.init(w.params, rng);
    bn2_.init(w.params, w.buffers);
    for (const Stage& s : stages_) {
      if (s.transposed) s.deconv.init(w.params, rng);
      else s.conv.init(w.params, rng);
      if (!s.last) s.bn.init(w.params, w.buffers);
    }
  }

  /// Inputs are 1 x input_dim rows; outputs are (side*side) x 3 maps in [0, 1].
  Batch forward(const nn::Weights& w, const Batch& in, nn::Mode mode, nn::ParamMap* update) {
    Batch h = r1_.forward(bn1_.forward(w.params, w.buffers, fc1_.forward(w.params, in), mode, update));
    h = r2_.forward(bn2_.forward(w.params, w.buffers, fc2_.forward(w.params, h), mode, update));
    for (Matrix& m : h) m = Eigen::Map<Matrix>(m.data(), m.size(), 1).eval();
    for (Stage& s : stages_) {
      h = s.transposed ? s.deconv.forward(w.params, h) : s.conv.forward(w.params, h);
      if (!s.last) h = s.relu.forward(s.bn.forward(w.params, w.buffers, h, mode, update));
    }
    return out_act_.forward(h);
  }

  void backward(const nn::Weights& w, nn::ParamMap& grads, const Batch& dimg) {
    Batch d = out_act_.backward(dimg);
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
      Stage& s = *it;
      if (!s.last) d = s.bn.backward(w.params, grads, s.relu.backward(d));
      d = s.transposed ? s.deconv.backward(w.params, grads, d) : s.conv.backward(w.params, grads, d);
    }
    for (Matrix& m : d) m = Eigen::Map<Matrix>(m.data(), 1, m.size()).eval();
    d = fc2_.backward(w.params, grads, bn2_.backward(w.params, grads, r2_.backward(d)));
    fc1_.backward(w.params, grads, bn1_.backward(w.params, grads, r1_.backward(d)));
  }

 private:
  struct Stage {
    bool transposed = false;
    bool last = false;
    nn::Conv conv;
    nn::ConvTranspose deconv;
    nn::BatchNorm bn;
    nn::Activation relu;
  };
  ImageGanConfig cfg_;
  nn::Linear fc1_, fc2_;
  nn::BatchNorm bn1_, bn2_;
  nn::Activation r1_, r2_, out_act_;
  std::vector<Stage> stages_;
};

class Discriminator {
 public:
  explicit Discriminator(const ImageGanConfig& cfg) {
    int side = cfg.image_side(), in = 3;
    for (std::size_t i = 0; i < cfg.disc_channels.size(); ++i) {
      Stage s;
      const int out = cfg.disc_channels[i];
      s.conv = nn::Conv("conv." + std::to_string(i), in, out, nn::same_2d(side, side, cfg.disc_kernel, 2));
      side = s.conv.geometry().out_h;
      s.pool = nn::MaxPool2(side, side, out);
      side /= 2;
      stages_.push_back(std::move(s));
      in = out;
    }
    flat_ = side * side * in;
    head_ = nn::Linear("head", flat_, 1);
  }

  void init(nn::Weights& w, nn::Rng& rng) const {
    for (const Stage& s : stages_) s.conv.init(w.params, rng);
    head_.init(w.params, rng);
  }

  std::vector<double> forward(const nn::Weights& w, const Batch& images) {
    Batch h = images;
    for (Stage& s : stages_) h = s.pool.forward(s.relu.forward(s.conv.forward(w.params, h)));
    map_rows_ = h.empty() ? 0 : h[0].rows();
    for (Matrix& m : h) m = Eigen::Map<Matrix>(m.data(), 1, m.size()).eval();
    Batch y = head_.forward(w.params, h);
    std::vector<double> scores;
    for (const Matrix& m : y) scores.push_back(m(0, 0));
    return scores;
  }

  /// Accumulates parameter gradients and returns d score / d image.
  Batch backward(const nn::Weights& w, nn::ParamMap& grads, const std::vector<double>& dscore) {
    Batch d;
    for (double v : dscore) d.push_back(Matrix::Constant(1, 1, v));
    d = head_.backward(w.params, grads, d);
    for (Matrix& m : d) m = Eigen::Map<Matrix>(m.data(), map_rows_, m.size() / map_rows_).eval();
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
      d = it->conv.backward(w.params, grads, it->relu.backward(it->pool.backward(d)));
    }
    return d;
  }

 private:
  struct Stage {
    nn::Conv conv;
    nn::Activation relu;
    nn::MaxPool2 pool;
  };
  std::vector<Stage> stages_;
  nn::Linear head_;
  int flat_ = 0;
  Eigen::Index map_rows_ = 0;
};

Matrix input_row(const ImageGanConfig& cfg, const Matrix& mel_block, const RowVector& facial) {
  if (cfg.mel_frames > 0 && (mel_block.rows() != cfg.mel_frames || mel_block.cols() != cfg.mel_dim)) {
    throw std::invalid_argument("imagegen: mel block must be " + std::to_string(cfg.mel_frames) + "x" +
                                std::to_string(cfg.mel_dim) + ", got " + std::to_string(mel_block.rows()) + "x" +
                                std::to_string(mel_block.cols()));
  }
  if (facial.size() != cfg.facial_dim) {
    throw std::invalid_argument("imagegen: facial row must have " + std::to_string(cfg.facial_dim) + " values, got " +
                                std::to_string(facial.size()));
  }
  Matrix row(1, cfg.input_dim());
  const int m = cfg.mel_frames * cfg.mel_dim;
  if (m > 0) row.leftCols(m) = Eigen::Map<const Matrix>(mel_block.data(), 1, m);
  row.rightCols(cfg.facial_dim) = facial;
  return row;
}

Batch inputs_of(const ImageGanConfig& cfg, const std::vector<GanExample>& batch) {
  if (batch.empty()) throw std::invalid_argument("imagegen: empty batch");
  Batch in;
  for (const GanExample& ex : batch) in.push_back(input_row(cfg, ex.mel_block, ex.facial));
  return in;
}

Batch targets_of(const ImageGanConfig& cfg, const std::vector<GanExample>& batch) {
  const int side = cfg.image_side();
  Batch out;
  for (const GanExample& ex : batch) {
    if (ex.target.height != side || ex.target.width != side || ex.target.pixels.rows() != side * side ||
        ex.target.pixels.cols() != 3) {
      throw std::invalid_argument("imagegen: target image must be " + std::to_string(side) + "x" +
                                  std::to_string(side) + "x3");
    }
    out.push_back(ex.target.pixels);
  }
  return out;
}

RgbImage to_image(const ImageGanConfig& cfg, Matrix pixels) {
  RgbImage img;
  img.height = img.width = cfg.image_side();
  img.pixels = std::move(pixels);
  return img;
}

/// Adversarial plus weighted L1 gradient with respect to generated images.
Batch generator_image_grads(const nn::Weights& d, const ImageGanConfig& cfg, const Batch& fakes, const Batch& reals,
                            GanLosses& losses) {
  Discriminator disc(cfg);
  const std::vector<double> f = disc.forward(d, fakes);
  const double n = static_cast<double>(fakes.size());
  losses.g_adversarial = lsgan_g_adversarial(f);
  std::vector<double> df;
  for (double v : f) df.push_back((v - 1.0) / n);
  nn::ParamMap scratch = d.params.zeros_like();
  Batch dimg = disc.backward(d, scratch, df);
  losses.l1 = 0;
  for (std::size_t i = 0; i < fakes.size(); ++i) {
    Matrix g;
    losses.l1 += nn::l1_loss(fakes[i], reals[i], cfg.l1_weight / n, &g) / n;
    dimg[i] += g;
  }
  losses.g_loss = losses.g_adversarial + cfg.l1_weight * losses.l1;
  return dimg;
}

double discriminator_step_grads(const nn::Weights& d, const ImageGanConfig& cfg, const Batch& fakes,
                                const Batch& reals, nn::ParamMap& grads) {
  const double n = static_cast<double>(fakes.size());
  Discriminator on_real(cfg), on_fake(cfg);
  const std::vector<double> r = on_real.forward(d, reals);
  const std::vector<double> f = on_fake.forward(d, fakes);
  std::vector<double> dr, df;
  for (double v : r) dr.push_back((v - 1.0) / n);
  for (double v : f) df.push_back(v / n);
  on_real.backward(d, grads, dr);
  on_fake.backward(d, grads, df);
  return lsgan_d_loss(r, f);
}

}  // namespace

int ImageGanConfig::image_side() const {
  const auto ups = std::count(gen_layout.begin(), gen_layout.end(), 'D');
  return reshape_side << ups;
}

int ImageGanConfig::disc_side() const {
  int side = image_side();
  for (std::size_t i = 0; i < disc_channels.size(); ++i) side = ((side + 1) / 2) / 2;
  return side;
}

void ImageGanConfig::validate() const {
  if (mel_frames < 0 || mel_dim <= 0 || facial_dim <= 0 || fc_hidden <= 0 || reshape_side <= 0) {
    throw std::invalid_argument("imagegen: dimensions must be positive");
  }
  if (gen_channels.size() != gen_layout.size() || gen_channels.empty()) {
    throw std::invalid_argument("imagegen: gen_layout must name one layer kind per generator channel entry");
  }
  if (std::any_of(gen_layout.begin(), gen_layout.end(), [](char c) { return c != 'C' && c != 'D'; })) {
    throw std::invalid_argument("imagegen: gen_layout may only contain 'C' and 'D'");
  }
  if (gen_channels.back() != 3) throw std::invalid_argument("imagegen: generator must end with 3 channels");
  if (disc_channels.empty() || disc_side() < 1) {
    throw std::invalid_argument("imagegen: discriminator reduces the image below one pixel");
  }
  if (deconv_kernel <= 0 || conv_kernel <= 0 || disc_kernel <= 0) {
    throw std::invalid_argument("imagegen: kernel sizes must be positive");
  }
}

ImageGanConfig ImageGanConfig::desk() {
  ImageGanConfig cfg;
  cfg.fc_hidden = 128;
  cfg.reshape_side = 8;
  cfg.gen_channels = {16, 16, 16, 16, 8, 8, 3};
  cfg.disc_channels = {8, 16};
  return cfg;
}

nlohmann::json to_json(const ImageGanConfig& cfg) {
  return {{"mel_frames", cfg.mel_frames},       {"mel_dim", cfg.mel_dim},
          {"facial_dim", cfg.facial_dim},       {"fc_hidden", cfg.fc_hidden},
          {"reshape_side", cfg.reshape_side},   {"gen_channels", cfg.gen_channels},
          {"gen_layout", cfg.gen_layout},       {"deconv_kernel", cfg.deconv_kernel},
          {"conv_kernel", cfg.conv_kernel},     {"disc_channels", cfg.disc_channels},
          {"disc_kernel", cfg.disc_kernel},     {"l1_weight", cfg.l1_weight},
          {"lr_g", cfg.lr_g},                   {"lr_d", cfg.lr_d}};
}

ImageGanConfig imagegen_config_from_json(const nlohmann::json& j) {
  ImageGanConfig cfg;
  cfg.mel_frames = j.value("mel_frames", cfg.mel_frames);
  cfg.mel_dim = j.value("mel_dim", cfg.mel_dim);
  cfg.facial_dim = j.value("facial_dim", cfg.facial_dim);
  cfg.fc_hidden = j.value("fc_hidden", cfg.fc_hidden);
  cfg.reshape_side = j.value("reshape_side", cfg.reshape_side);
  cfg.gen_channels = j.value("gen_channels", cfg.gen_channels);
  cfg.gen_layout = j.value("gen_layout", cfg.gen_layout);
  cfg.deconv_kernel = j.value("deconv_kernel", cfg.deconv_kernel);
  cfg.conv_kernel = j.value("conv_kernel", cfg.conv_kernel);
  cfg.disc_channels = j.value("disc_channels", cfg.disc_channels);
  cfg.disc_kernel = j.value("disc_kernel", cfg.disc_kernel);
  cfg.l1_weight = j.value("l1_weight", cfg.l1_weight);
  cfg.lr_g = j.value("lr_g", cfg.lr_g);
  cfg.lr_d = j.value("lr_d", cfg.lr_d);
  cfg.validate();
  return cfg;
}

ImageGanParams init_imagegen_params(const ImageGanConfig& cfg, std::uint64_t seed) {
  nn::Rng rng(seed);
  ImageGanParams p;
  Generator(cfg).init(p.generator, rng);
  Discriminator(cfg).init(p.discriminator, rng);
  return p;
}

RgbImage generator_forward(const nn::Weights& g, const ImageGanConfig& cfg, const Matrix& mel_block,
                           const RowVector& facial) {
  Generator gen(cfg);
  Batch out = gen.forward(g, nn::single(input_row(cfg, mel_block, facial)), nn::Mode::kInference, nullptr);
  return to_image(cfg, std::move(out[0]));
}

double discriminator_forward(const nn::Weights& d, const ImageGanConfig& cfg, const RgbImage& img) {
  const int side = cfg.image_side();
  if (img.height != side || img.width != side || img.pixels.rows() != side * side || img.pixels.cols() != 3) {
    throw std::invalid_argument("imagegen: discriminator expects " + std::to_string(side) + "x" +
                                std::to_string(side) + "x3 images");
  }
  Discriminator disc(cfg);
  return disc.forward(d, nn::single(img.pixels))[0];
}

double lsgan_d_loss(const std::vector<double>& real_scores, const std::vector<double>& fake_scores) {
  if (real_scores.empty() || fake_scores.empty()) throw std::invalid_argument("lsgan_d_loss: empty scores");
  double r = 0, f = 0;
  for (double v : real_scores) r += (v - 1.0) * (v - 1.0);
  for (double v : fake_scores) f += v * v;
  return 0.5 * r / static_cast<double>(real_scores.size()) + 0.5 * f / static_cast<double>(fake_scores.size());
}

double lsgan_g_adversarial(const std::vector<double>& fake_scores) {
  if (fake_scores.empty()) throw std::invalid_argument("lsgan_g_adversarial: empty scores");
  double f = 0;
  for (double v : fake_scores) f += (v - 1.0) * (v - 1.0);
  return 0.5 * f / static_cast<double>(fake_scores.size());
}

double mean_abs_error(const std::vector<RgbImage>& a, const std::vector<RgbImage>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("mean_abs_error: batch size mismatch");
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) total += nn::l1_loss(a[i].pixels, b[i].pixels, 1.0, nullptr);
  return total / static_cast<double>(a.size());
}

double lsgan_g_loss(const std::vector<double>& fake_scores, const std::vector<RgbImage>& fakes,
                    const std::vector<RgbImage>& reals, double l1_weight) {
  return lsgan_g_adversarial(fake_scores) + l1_weight * mean_abs_error(fakes, reals);
}

nn::ParamMap discriminator_gradients(const ImageGanParams& p, const ImageGanConfig& cfg,
                                     const std::vector<GanExample>& batch, GanLosses* losses) {
  Generator gen(cfg);
  const Batch fakes = gen.forward(p.generator, inputs_of(cfg, batch), nn::Mode::kTrain, nullptr);
  nn::ParamMap grads = p.discriminator.params.zeros_like();
  const double d_loss = discriminator_step_grads(p.discriminator, cfg, fakes, targets_of(cfg, batch), grads);
  if (losses) losses->d_loss = d_loss;
  return grads;
}

nn::ParamMap generator_gradients(const ImageGanParams& p, const ImageGanConfig& cfg,
                                 const std::vector<GanExample>& batch, GanLosses* losses) {
  Generator gen(cfg);
  const Batch fakes = gen.forward(p.generator, inputs_of(cfg, batch), nn::Mode::kTrain, nullptr);
  GanLosses l;
  const Batch dimg = generator_image_grads(p.discriminator, cfg, fakes, targets_of(cfg, batch), l);
  nn::ParamMap grads = p.generator.params.zeros_like();
  gen.backward(p.generator, grads, dimg);
  if (losses) {
    losses->g_loss = l.g_loss;
    losses->g_adversarial = l.g_adversarial;
    losses->l1 = l.l1;
  }
  return grads;
}

GanState::GanState(ImageGanParams p, const ImageGanConfig& cfg)
    : params(std::move(p)), opt_g({.lr = cfg.lr_g}), opt_d({.lr = cfg.lr_d}) {}

GanLosses lsgan_step(GanState& state, const ImageGanConfig& cfg, const std::vector<GanExample>& batch) {
  const Batch reals = targets_of(cfg, batch);
  Generator gen(cfg);
  const Batch fakes = gen.forward(state.params.generator, inputs_of(cfg, batch), nn::Mode::kTrain,
                                  &state.params.generator.buffers);
  GanLosses losses;
  nn::ParamMap d_grads = state.params.discriminator.params.zeros_like();
  losses.d_loss = discriminator_step_grads(state.params.discriminator, cfg, fakes, reals, d_grads);
  state.opt_d.step(state.params.discriminator.params, d_grads);

  const Batch dimg = generator_image_grads(state.params.discriminator, cfg, fakes, reals, losses);
  nn::ParamMap g_grads = state.params.generator.params.zeros_like();
  gen.backward(state.params.generator, g_grads, dimg);
  state.opt_g.step(state.params.generator.params, g_grads);
  return losses;
}

ImageGanTrainResult train_imagegen(const std::vector<GanExample>& corpus, const ImageGanConfig& cfg,
                                   const ImageGanHyper& hyper, const ImageGanParams* warm_start) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("imagegen: empty training corpus");
  if (hyper.batch <= 0 || hyper.epochs < 0) throw std::invalid_argument("imagegen: invalid hyperparameters");
  GanState state(warm_start != nullptr ? *warm_start : init_imagegen_params(cfg, hyper.seed), cfg);
  nn::Rng rng(hyper.seed ^ 0x1a6e5ULL);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  ImageGanTrainResult result;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    GanLosses mean;
    int steps = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(hyper.batch)) {
      std::vector<GanExample> batch;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + hyper.batch); ++i) batch.push_back(corpus[order[i]]);
      const GanLosses l = lsgan_step(state, cfg, batch);
      mean.d_loss += l.d_loss;
      mean.g_loss += l.g_loss;
      mean.g_adversarial += l.g_adversarial;
      mean.l1 += l.l1;
      ++steps;
    }
    mean.d_loss /= steps;
    mean.g_loss /= steps;
    mean.g_adversarial /= steps;
    mean.l1 /= steps;
    result.trace.push_back(mean);
  }
  result.params = std::move(state.params);
  return result;
}

std::vector<GanExample> make_gan_examples(const UtteranceFeatures& u, const std::vector<RgbImage>& frames) {
  check_rate_tied(u);
  if (static_cast<int>(frames.size()) != u.facial.length()) {
    throw std::invalid_argument("imagegen: " + std::to_string(frames.size()) + " images for " +
                                std::to_string(u.facial.length()) + " facial frames");
  }
  std::vector<GanExample> out;
  for (int k = 0; k < u.facial.length(); ++k) {
    GanExample ex;
    ex.mel_block = u.mel.frames.middleRows(k * kMelPerFacial, kMelPerFacial).cast<double>();
    ex.facial = u.facial.fused.row(k).cast<double>();
    ex.target = frames[k];
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<RgbImage> render_frames(const nn::Weights& g, const ImageGanConfig& cfg, const UtteranceFeatures& u) {
  const int t_v = u.facial.length();
  if (cfg.mel_frames > 0 && u.mel.length() < t_v * cfg.mel_frames) {
    throw std::invalid_argument("imagegen: utterance has fewer than 8 mel frames per facial frame");
  }
  constexpr int kChunk = 16;
  std::vector<RgbImage> out;
  for (int k0 = 0; k0 < t_v; k0 += kChunk) {
    Batch in;
    for (int k = k0; k < std::min(t_v, k0 + kChunk); ++k) {
      const Matrix block = u.mel.frames.middleRows(k * kMelPerFacial, cfg.mel_frames).cast<double>();
      in.push_back(input_row(cfg, block, u.facial.fused.row(k).cast<double>()));
    }
    Generator gen(cfg);
    for (Matrix& px : gen.forward(g, in, nn::Mode::kInference, nullptr)) out.push_back(to_image(cfg, std::move(px)));
  }
  return out;
}

void write_gan_trace_csv(const std::filesystem::path& path, const std::vector<GanLosses>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "epoch,d_loss,g_loss,g_adversarial,l1\n";
  for (std::size_t e = 0; e < trace.size(); ++e) {
    out << e << ',' << trace[e].d_loss << ',' << trace[e].g_loss << ',' << trace[e].g_adversarial << ','
        << trace[e].l1 << '\n';
  }
}

nn::Checkpoint to_checkpoint(const ImageGanParams& params, const ImageGanConfig& cfg) {
  nn::Checkpoint ckpt;
  ckpt.kind = "imagegen";
  ckpt.config = to_json(cfg);
  ckpt.groups["generator"] = params.generator;
  ckpt.groups["discriminator"] = params.discriminator;
  return ckpt;
}

}  // namespace avsc
