#include "avsc/transformnet.hpp"

#include "avsc/nn/layers.hpp"
#include "avsc/nn/optim.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>

namespace avsc {

using nn::Batch;
using nn::Matrix;

namespace {

/// Convolution (or transposed convolution), ReLU, then batch normalization.
struct HiddenBlock {
  bool transposed = false;
  nn::Conv conv;
  nn::ConvTranspose deconv;
  nn::Activation relu;
  nn::BatchNorm bn;

  void init(nn::Weights& w, nn::Rng& rng) const {
    if (transposed) deconv.init(w.params, rng);
    else conv.init(w.params, rng);
    bn.init(w.params, w.buffers);
  }

  Batch forward(const nn::Weights& w, const Batch& x, nn::Mode mode, nn::ParamMap* update) {
    Batch y = transposed ? deconv.forward(w.params, x) : conv.forward(w.params, x);
    return bn.forward(w.params, w.buffers, relu.forward(y), mode, update);
  }

  Batch backward(const nn::Weights& w, nn::ParamMap& grads, const Batch& dy) {
    Batch d = relu.backward(bn.backward(w.params, grads, dy));
    return transposed ? deconv.backward(w.params, grads, d) : conv.backward(w.params, grads, d);
  }
};

HiddenBlock conv_block(const std::string& name, int in, int out, int length, int kernel, int stride) {
  HiddenBlock b;
  b.conv = nn::Conv(name, in, out, nn::same_1d(length, kernel, stride));
  b.bn = nn::BatchNorm(name + ".bn", out);
  return b;
}

HiddenBlock deconv_block(const std::string& name, int in, int out, int out_length, int kernel, int stride) {
  HiddenBlock b;
  b.transposed = true;
  b.deconv = nn::ConvTranspose(name, in, out, nn::same_1d(out_length, kernel, stride));
  b.bn = nn::BatchNorm(name + ".bn", out);
  return b;
}

void add_into(Batch& dst, const Batch& src) {
  for (std::size_t n = 0; n < dst.size(); ++n) dst[n] += src[n];
}

Batch concat_channels(const Batch& a, const Batch& b) {
  Batch out;
  out.reserve(a.size());
  for (std::size_t n = 0; n < a.size(); ++n) {
    if (a[n].rows() != b[n].rows()) {
      throw std::logic_error("transformnet: audio branch length " + std::to_string(a[n].rows()) +
                             " differs from facial branch length " + std::to_string(b[n].rows()));
    }
    Matrix m(a[n].rows(), a[n].cols() + b[n].cols());
    m << a[n], b[n];
    out.push_back(std::move(m));
  }
  return out;
}

/// The five sub-networks and two linear output layers, built for fixed input
/// lengths (convolution geometry depends on length).
class Network {
 public:
  Network(const TransformNetConfig& cfg, int t_a, int t_v) : cfg_(cfg) {
    cfg.validate();
    const int k = cfg.kernel_size;
    const auto& ch = cfg.channels;
    const bool audio = cfg.mode != TransformMode::kVisualOnly;
    const bool facial = cfg.mode != TransformMode::kAudioOnly;
    int fused = 0;
    if (audio) {
      int len = t_a, in = cfg.mel_dim;
      for (std::size_t i = 0; i < ch.audio_down.size(); ++i) {
        down_.push_back(conv_block("audio_down." + std::to_string(i), in, ch.audio_down[i], len, k,
                                   cfg.audio_down_strides[i]));
        down_len_.push_back((len + cfg.audio_down_strides[i] - 1) / cfg.audio_down_strides[i]);
        len = down_len_.back();
        in = ch.audio_down[i];
      }
      fused += in;
      latent_len_ = len;
    }
    if (facial) {
      int in = cfg.facial_dim;
      for (std::size_t i = 0; i < ch.facial_in.size(); ++i) {
        in_.push_back(conv_block("facial_in." + std::to_string(i), in, ch.facial_in[i], t_v, k, 1));
        in = ch.facial_in[i];
      }
      fused += in;
      if (audio && latent_len_ != t_v) {
        throw std::invalid_argument("transformnet: audio branch reaches length " + std::to_string(latent_len_) +
                                    " but facial branch has " + std::to_string(t_v));
      }
      latent_len_ = t_v;
    }
    int in = fused;
    for (std::size_t i = 0; i < ch.fusion.size(); ++i) {
      fusion_.push_back(conv_block("fusion." + std::to_string(i), in, ch.fusion[i], latent_len_, k, 1));
      in = ch.fusion[i];
    }
    const int trunk = in;
    if (audio) {
      int len = latent_len_, c = trunk;
      const int levels = static_cast<int>(ch.audio_up.size());
      for (int i = 0; i < levels; ++i) {
        const int stride = cfg.audio_down_strides[levels - 1 - i];
        len *= stride;
        up_.push_back(deconv_block("audio_up." + std::to_string(i), c, ch.audio_up[i], len, k, stride));
        c = ch.audio_up[i];
        // mirror of the encoder output with the same length and width
        const int mirror = levels - 2 - i;
        up_skip_.push_back(mirror >= 0 && ch.audio_down[mirror] == c && down_len_[mirror] == len ? mirror : -1);
      }
      audio_head_ = nn::Conv("audio_head", c, cfg.mel_dim, nn::same_1d(len, k, 1));
    }
    if (facial) {
      int c = trunk;
      const int n_in = static_cast<int>(ch.facial_in.size());
      for (std::size_t i = 0; i < ch.facial_out.size(); ++i) {
        out_.push_back(conv_block("facial_out." + std::to_string(i), c, ch.facial_out[i], t_v, k, 1));
        c = ch.facial_out[i];
        const int mirror = n_in - 1 - static_cast<int>(i);
        out_skip_.push_back(mirror >= 0 && ch.facial_in[mirror] == c ? mirror : -1);
      }
      facial_head_ = nn::Conv("facial_head", c, cfg.facial_dim, nn::same_1d(t_v, k, 1));
    }
  }

  void init(nn::Weights& w, nn::Rng& rng) {
    for (auto* group : {&down_, &in_, &fusion_, &up_, &out_}) {
      for (const HiddenBlock& b : *group) b.init(w, rng);
    }
    if (has_audio()) audio_head_.init(w.params, rng);
    if (has_facial()) facial_head_.init(w.params, rng);
  }

  bool has_audio() const { return cfg_.mode != TransformMode::kVisualOnly; }
  bool has_facial() const { return cfg_.mode != TransformMode::kAudioOnly; }
  int latent_length() const { return latent_len_; }

  /// Returns (mel, facial) predictions; the unmodeled stream is left empty.
  std::pair<Batch, Batch> forward(const nn::Weights& w, const Batch& mel, const Batch& facial, nn::Mode mode,
                                  nn::ParamMap* update) {
    down_out_.clear();
    in_out_.clear();
    Batch trunk;
    if (has_audio()) {
      Batch x = mel;
      for (HiddenBlock& b : down_) {
        x = b.forward(w, x, mode, update);
        down_out_.push_back(x);
      }
      trunk = x;
    }
    if (has_facial()) {
      Batch f = facial;
      for (HiddenBlock& b : in_) {
        f = b.forward(w, f, mode, update);
        in_out_.push_back(f);
      }
      trunk = has_audio() ? concat_channels(trunk, f) : f;
    }
    audio_width_ = has_audio() ? static_cast<int>(down_out_.back()[0].cols()) : 0;
    for (HiddenBlock& b : fusion_) trunk = b.forward(w, trunk, mode, update);

    Batch mel_out, facial_out;
    if (has_audio()) {
      Batch u = trunk;
      for (std::size_t i = 0; i < up_.size(); ++i) {
        u = up_[i].forward(w, u, mode, update);
        if (up_skip_[i] >= 0) add_into(u, down_out_[up_skip_[i]]);
      }
      mel_out = audio_head_.forward(w.params, u);
    }
    if (has_facial()) {
      Batch g = trunk;
      for (std::size_t i = 0; i < out_.size(); ++i) {
        g = out_[i].forward(w, g, mode, update);
        if (out_skip_[i] >= 0) add_into(g, in_out_[out_skip_[i]]);
      }
      facial_out = facial_head_.forward(w.params, g);
    }
    return {std::move(mel_out), std::move(facial_out)};
  }

  void backward(const nn::Weights& w, nn::ParamMap& grads, const Batch& dmel, const Batch& dfacial) {
    std::vector<std::optional<Batch>> d_down(down_.size()), d_in(in_.size());
    auto accumulate = [](std::optional<Batch>& slot, const Batch& g) {
      if (slot) add_into(*slot, g);
      else slot = g;
    };
    std::optional<Batch> d_trunk;
    if (has_audio()) {
      Batch du = audio_head_.backward(w.params, grads, dmel);
      for (int i = static_cast<int>(up_.size()) - 1; i >= 0; --i) {
        if (up_skip_[i] >= 0) accumulate(d_down[up_skip_[i]], du);
        du = up_[i].backward(w, grads, du);
      }
      accumulate(d_trunk, du);
    }
    if (has_facial()) {
      Batch dg = facial_head_.backward(w.params, grads, dfacial);
      for (int i = static_cast<int>(out_.size()) - 1; i >= 0; --i) {
        if (out_skip_[i] >= 0) accumulate(d_in[out_skip_[i]], dg);
        dg = out_[i].backward(w, grads, dg);
      }
      accumulate(d_trunk, dg);
    }
    Batch dt = *d_trunk;
    for (int i = static_cast<int>(fusion_.size()) - 1; i >= 0; --i) dt = fusion_[i].backward(w, grads, dt);

    if (has_audio() && has_facial()) {
      Batch da, df;
      for (const Matrix& m : dt) {
        da.push_back(m.leftCols(audio_width_));
        df.push_back(m.rightCols(m.cols() - audio_width_));
      }
      accumulate(d_down.back(), da);
      accumulate(d_in.back(), df);
    } else if (has_audio()) {
      accumulate(d_down.back(), dt);
    } else {
      accumulate(d_in.back(), dt);
    }
    for (int i = static_cast<int>(down_.size()) - 1; i >= 0; --i) {
      Batch dx = down_[i].backward(w, grads, *d_down[i]);
      if (i > 0) accumulate(d_down[i - 1], dx);
    }
    for (int i = static_cast<int>(in_.size()) - 1; i >= 0; --i) {
      Batch dx = in_[i].backward(w, grads, *d_in[i]);
      if (i > 0) accumulate(d_in[i - 1], dx);
    }
  }

 private:
  TransformNetConfig cfg_;
  std::vector<HiddenBlock> down_, in_, fusion_, up_, out_;
  std::vector<int> down_len_, up_skip_, out_skip_;
  nn::Conv audio_head_, facial_head_;
  int latent_len_ = 0;
  int audio_width_ = 0;
  std::vector<Batch> down_out_, in_out_;
};

void check_lengths(const TransformNetConfig& cfg, Eigen::Index t_a, Eigen::Index t_v) {
  if (cfg.mode == TransformMode::kJoint) {
    if (t_a % cfg.audio_factor() != 0) {
      throw std::invalid_argument("transformnet: mel length " + std::to_string(t_a) + " not divisible by " +
                                  std::to_string(cfg.audio_factor()));
    }
    if (t_a != cfg.audio_factor() * t_v) {
      throw std::invalid_argument("transformnet: mel length " + std::to_string(t_a) + " != " +
                                  std::to_string(cfg.audio_factor()) + " x facial length " + std::to_string(t_v));
    }
  }
}

Matrix to_double(const FeatureMatrix& m) { return m.cast<double>(); }

Matrix edge_pad(const Matrix& m, Eigen::Index rows) {
  Matrix out(rows, m.cols());
  out.topRows(m.rows()) = m;
  for (Eigen::Index r = m.rows(); r < rows; ++r) out.row(r) = m.row(m.rows() - 1);
  return out;
}

}  // namespace

std::string to_string(TransformMode m) {
  switch (m) {
    case TransformMode::kJoint: return "joint";
    case TransformMode::kAudioOnly: return "audio_only";
    case TransformMode::kVisualOnly: return "visual_only";
  }
  return "unknown";
}

TransformMode transform_mode_from_string(const std::string& s) {
  if (s == "joint") return TransformMode::kJoint;
  if (s == "audio_only") return TransformMode::kAudioOnly;
  if (s == "visual_only") return TransformMode::kVisualOnly;
  throw std::invalid_argument("unknown transform mode '" + s + "'");
}

int TransformNetConfig::audio_factor() const {
  return std::accumulate(audio_down_strides.begin(), audio_down_strides.end(), 1, std::multiplies<>());
}

void TransformNetConfig::validate() const {
  if (kernel_size != 5) throw std::invalid_argument("transformnet: kernel_size must be 5");
  if (audio_down_strides.size() != channels.audio_down.size() ||
      channels.audio_up.size() != channels.audio_down.size()) {
    throw std::invalid_argument("transformnet: audio_down, audio_up and strides must have equal length");
  }
  if (channels.audio_down.empty() || channels.facial_in.empty() || channels.fusion.empty() ||
      channels.facial_out.empty()) {
    throw std::invalid_argument("transformnet: every sub-network needs at least one layer");
  }
  if (mode == TransformMode::kJoint && audio_factor() != kMelPerFacial) {
    throw std::invalid_argument("transformnet: joint mode needs audio strides with product 8");
  }
  if (mode != TransformMode::kJoint &&
      std::any_of(audio_down_strides.begin(), audio_down_strides.end(), [](int s) { return s != 1; })) {
    throw std::invalid_argument("transformnet: single-modality modes use stride 1 throughout");
  }
  if (mel_dim <= 0 || facial_dim <= 0) throw std::invalid_argument("transformnet: feature dims must be positive");
}

TransformNetConfig TransformNetConfig::desk() {
  TransformNetConfig cfg;
  cfg.channels.audio_down = {32, 64, 64};
  cfg.channels.facial_in = {64, 64};
  cfg.channels.fusion = {128, 128};
  cfg.channels.audio_up = {64, 32, 32};
  cfg.channels.facial_out = {64};
  return cfg;
}

nlohmann::json to_json(const TransformNetConfig& cfg) {
  return {{"kernel_size", cfg.kernel_size},
          {"audio_down_strides", cfg.audio_down_strides},
          {"mode", to_string(cfg.mode)},
          {"acoustic_loss_weight", cfg.acoustic_loss_weight},
          {"mel_dim", cfg.mel_dim},
          {"facial_dim", cfg.facial_dim},
          {"channels",
           {{"audio_down", cfg.channels.audio_down},
            {"facial_in", cfg.channels.facial_in},
            {"fusion", cfg.channels.fusion},
            {"audio_up", cfg.channels.audio_up},
            {"facial_out", cfg.channels.facial_out}}}};
}

TransformNetConfig transform_config_from_json(const nlohmann::json& j) {
  TransformNetConfig cfg;
  cfg.kernel_size = j.value("kernel_size", cfg.kernel_size);
  cfg.audio_down_strides = j.value("audio_down_strides", cfg.audio_down_strides);
  cfg.mode = transform_mode_from_string(j.value("mode", to_string(cfg.mode)));
  cfg.acoustic_loss_weight = j.value("acoustic_loss_weight", cfg.acoustic_loss_weight);
  cfg.mel_dim = j.value("mel_dim", cfg.mel_dim);
  cfg.facial_dim = j.value("facial_dim", cfg.facial_dim);
  if (j.contains("channels")) {
    const auto& c = j.at("channels");
    cfg.channels.audio_down = c.value("audio_down", cfg.channels.audio_down);
    cfg.channels.facial_in = c.value("facial_in", cfg.channels.facial_in);
    cfg.channels.fusion = c.value("fusion", cfg.channels.fusion);
    cfg.channels.audio_up = c.value("audio_up", cfg.channels.audio_up);
    cfg.channels.facial_out = c.value("facial_out", cfg.channels.facial_out);
  }
  cfg.validate();
  return cfg;
}

TransformNetParams init_transform_params(const TransformNetConfig& cfg, std::uint64_t seed) {
  const int factor = cfg.mode == TransformMode::kJoint ? cfg.audio_factor() : 1;
  Network net(cfg, 2 * factor, 2);
  nn::Rng rng(seed);
  TransformNetParams w;
  net.init(w, rng);
  return w;
}

TransformOutput forward(const TransformNetParams& params, const TransformNetConfig& cfg, const Matrix& mel,
                        const Matrix& facial) {
  if (mel.cols() != cfg.mel_dim || facial.cols() != cfg.facial_dim) {
    throw std::invalid_argument("transformnet: input widths must be " + std::to_string(cfg.mel_dim) + " and " +
                                std::to_string(cfg.facial_dim));
  }
  check_lengths(cfg, mel.rows(), facial.rows());
  Network net(cfg, static_cast<int>(mel.rows()), static_cast<int>(facial.rows()));
  auto [m, f] = net.forward(params, nn::single(mel), nn::single(facial), nn::Mode::kInference, nullptr);
  TransformOutput out;
  out.mel = m.empty() ? mel : std::move(m[0]);
  out.facial = f.empty() ? facial : std::move(f[0]);
  return out;
}

LossTerms transform_loss(const Matrix& pred_mel, const Matrix& pred_facial, const Matrix& tgt_mel,
                         const Matrix& tgt_facial, double acoustic_weight) {
  LossTerms t;
  t.acoustic = nn::l1_loss(pred_mel, tgt_mel, 1.0, nullptr);
  t.facial = nn::l1_loss(pred_facial, tgt_facial, 1.0, nullptr);
  t.total = acoustic_weight * t.acoustic + t.facial;
  return t;
}

TransformGradients transform_gradients(const TransformNetParams& params, const TransformNetConfig& cfg,
                                       const TransformBatch& batch, nn::Mode mode, nn::ParamMap* buffers) {
  const std::size_t n = batch.src_mel.size();
  if (n == 0 || batch.src_facial.size() != n || batch.tgt_mel.size() != n || batch.tgt_facial.size() != n) {
    throw std::invalid_argument("transformnet: empty or inconsistent batch");
  }
  const auto t_a = batch.src_mel[0].rows();
  const auto t_v = batch.src_facial[0].rows();
  check_lengths(cfg, t_a, t_v);
  Network net(cfg, static_cast<int>(t_a), static_cast<int>(t_v));
  auto [pred_mel, pred_facial] = net.forward(params, batch.src_mel, batch.src_facial, mode, buffers);

  TransformGradients out;
  out.grads = params.params.zeros_like();
  Batch dmel, dfacial;
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix g;
    if (net.has_audio()) {
      out.loss.acoustic += scale * nn::l1_loss(pred_mel[i], batch.tgt_mel[i], cfg.acoustic_loss_weight * scale, &g);
      dmel.push_back(std::move(g));
    }
    if (net.has_facial()) {
      out.loss.facial += scale * nn::l1_loss(pred_facial[i], batch.tgt_facial[i], scale, &g);
      dfacial.push_back(std::move(g));
    }
  }
  out.loss.total = cfg.acoustic_loss_weight * out.loss.acoustic + out.loss.facial;
  net.backward(params, out.grads, dmel, dfacial);
  return out;
}

TransformTrainResult train_transform(const std::vector<UtterancePair>& corpus, const TransformNetConfig& cfg,
                                     const TransformHyper& hyper, const TransformNetParams* warm_start) {
  cfg.validate();
  if (hyper.batch <= 0 || hyper.epochs < 0) throw std::invalid_argument("transformnet: invalid hyperparameters");
  std::vector<TrainingWindow> src, tgt;
  for (const UtterancePair& p : corpus) {
    auto s = make_training_windows(p.source);
    auto t = make_training_windows(p.target);
    const std::size_t k = std::min(s.size(), t.size());
    src.insert(src.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k));
    tgt.insert(tgt.end(), t.begin(), t.begin() + static_cast<std::ptrdiff_t>(k));
  }
  if (src.empty()) throw std::invalid_argument("transformnet: training corpus yields no 2 s windows");

  TransformTrainResult result;
  result.params = warm_start != nullptr ? *warm_start : init_transform_params(cfg, hyper.seed);
  nn::Adam opt({.lr = hyper.lr});
  nn::Rng rng(hyper.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(src.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLoss el;
    el.epoch = epoch;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(hyper.batch)) {
      TransformBatch batch;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + hyper.batch); ++i) {
        batch.src_mel.push_back(to_double(src[order[i]].mel));
        batch.src_facial.push_back(to_double(src[order[i]].facial));
        batch.tgt_mel.push_back(to_double(tgt[order[i]].mel));
        batch.tgt_facial.push_back(to_double(tgt[order[i]].facial));
      }
      TransformGradients g = transform_gradients(result.params, cfg, batch, nn::Mode::kTrain, &result.params.buffers);
      opt.step(result.params.params, g.grads);
      el.total += g.loss.total;
      el.acoustic += g.loss.acoustic;
      el.facial += g.loss.facial;
      ++batches;
    }
    el.total /= batches;
    el.acoustic /= batches;
    el.facial /= batches;
    result.trace.push_back(el);
  }
  return result;
}

UtteranceFeatures convert(const TransformNetParams& params, const TransformNetConfig& cfg, const UtteranceFeatures& u) {
  Matrix mel = to_double(u.mel.frames);
  Matrix facial = to_double(u.facial.fused);
  const Eigen::Index t_a = mel.rows();
  const Eigen::Index t_v = facial.rows();
  if (cfg.mode == TransformMode::kJoint) {
    const int f = cfg.audio_factor();
    const Eigen::Index groups = std::max<Eigen::Index>((t_a + f - 1) / f, t_v);
    if (t_a < groups * f) mel = edge_pad(mel, groups * f);
    if (t_v < groups) facial = edge_pad(facial, groups);
  }
  TransformOutput out = forward(params, cfg, mel, facial);
  UtteranceFeatures converted = u;
  if (cfg.mode != TransformMode::kVisualOnly) converted.mel.frames = out.mel.topRows(t_a).cast<float>();
  if (cfg.mode != TransformMode::kAudioOnly) converted.facial.fused = out.facial.topRows(t_v).cast<float>();
  return converted;
}

std::pair<TransformNetConfig, TransformNetConfig> make_baselines(const TransformNetConfig& cfg) {
  if (cfg.mode != TransformMode::kJoint) throw std::invalid_argument("make_baselines: expects a joint config");
  TransformNetConfig audio = cfg, visual = cfg;
  audio.mode = TransformMode::kAudioOnly;
  visual.mode = TransformMode::kVisualOnly;
  std::fill(audio.audio_down_strides.begin(), audio.audio_down_strides.end(), 1);
  std::fill(visual.audio_down_strides.begin(), visual.audio_down_strides.end(), 1);
  return {audio, visual};
}

void write_loss_trace_csv(const std::filesystem::path& path, const std::vector<EpochLoss>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "epoch,total,acoustic_term,facial_term\n";
  for (const EpochLoss& e : trace) out << e.epoch << ',' << e.total << ',' << e.acoustic << ',' << e.facial << '\n';
}

nn::Checkpoint to_checkpoint(const TransformNetParams& params, const TransformNetConfig& cfg) {
  nn::Checkpoint ckpt;
  ckpt.kind = "transformnet";
  ckpt.config = to_json(cfg);
  ckpt.groups["model"] = params;
  return ckpt;
}

}  // namespace avsc
