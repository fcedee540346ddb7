#include "avsc/vocoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "avsc/nn/optim.hpp"

namespace avsc {

using nn::Matrix;
using nn::RowVector;

namespace {

constexpr double kMu = 255.0;

std::string layer_name(int l, const char* field) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "layer.%02d.%s", l, field);
  return buf;
}

Matrix uniform(int rows, int cols, double bound, nn::Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Rows shifted down by d (row t holds x[t - d]), zero-filled.
Matrix shift_down(const Matrix& x, int d) {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  if (d < x.rows()) out.bottomRows(x.rows() - d) = x.topRows(x.rows() - d);
  return out;
}

/// Adjoint of shift_down.
Matrix shift_up(const Matrix& x, int d) {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  if (d < x.rows()) out.topRows(x.rows() - d) = x.bottomRows(x.rows() - d);
  return out;
}

int cond_input_dim(const VocoderConfig& cfg) { return cfg.cond.mel_dim + cfg.cond.facial_dim; }

/// Frame-level condition inputs [mel_k, facial_{k/8}] for mel frames [first, first + count).
Matrix frame_inputs(const VocoderConfig& cfg, const Matrix& mel, const Matrix& facial, Eigen::Index first,
                    Eigen::Index count) {
  Matrix in(count, cond_input_dim(cfg));
  in.leftCols(cfg.cond.mel_dim) = mel.middleRows(first, count);
  if (cfg.cond.facial_dim > 0) {
    for (Eigen::Index k = 0; k < count; ++k) {
      in.row(k).tail(cfg.cond.facial_dim) = facial.row((first + k) / kMelPerFacial);
    }
  }
  return in;
}

void check_condition_inputs(const VocoderConfig& cfg, const Matrix& mel, const Matrix& facial) {
  if (mel.cols() != cfg.cond.mel_dim) {
    throw std::invalid_argument("vocoder: mel width " + std::to_string(mel.cols()) + ", expected " +
                                std::to_string(cfg.cond.mel_dim));
  }
  if (mel.rows() == 0) throw std::invalid_argument("vocoder: empty mel");
  if (cfg.cond.facial_dim == 0) return;
  if (facial.cols() != cfg.cond.facial_dim) {
    throw std::invalid_argument("vocoder: facial width " + std::to_string(facial.cols()) + ", expected " +
                                std::to_string(cfg.cond.facial_dim));
  }
  if (mel.rows() != kMelPerFacial * facial.rows()) {
    throw std::invalid_argument("vocoder: mel length " + std::to_string(mel.rows()) + " != 8 x facial length " +
                                std::to_string(facial.rows()));
  }
}

Matrix repeat_rows(const Matrix& frames, int times) {
  Matrix out(frames.rows() * times, frames.cols());
  for (Eigen::Index k = 0; k < frames.rows(); ++k) {
    out.middleRows(k * times, times) = frames.row(k).replicate(times, 1);
  }
  return out;
}

struct Trace {
  std::vector<int> inputs;
  std::vector<Matrix> x;  // layer inputs, x[L] is the last residual output
  std::vector<Matrix> tanh_f, sig_g, a;
  Matrix skip, h1, h2, logits;
};

/// Teacher-forced pass where inputs[t] is the code fed at step t.
Matrix forward_core(const VocoderParams& w, const VocoderConfig& cfg, const std::vector<int>& inputs,
                    const Matrix& cond, Trace* trace) {
  const auto& p = w.params;
  const Eigen::Index T = static_cast<Eigen::Index>(inputs.size());
  const int R = cfg.residual_channels;
  Matrix x(T, R);
  const Matrix& win = p.at("input.w");
  for (Eigen::Index t = 0; t < T; ++t) x.row(t) = win.row(inputs[t]) + p.at("input.b");
  Matrix skip = Matrix::Zero(T, cfg.skip_channels);
  if (trace) {
    trace->inputs = inputs;
    trace->x.clear();
    trace->tanh_f.clear();
    trace->sig_g.clear();
    trace->a.clear();
  }
  for (int l = 0; l < cfg.n_dilated_layers; ++l) {
    const int d = cfg.dilation(l);
    Matrix z = shift_down(x, d) * p.at(layer_name(l, "w0")) + x * p.at(layer_name(l, "w1")) +
               cond * p.at(layer_name(l, "cond_w"));
    z.rowwise() += p.at(layer_name(l, "b")).row(0);
    Matrix tf = z.leftCols(R).array().tanh().matrix();
    Matrix sg = z.rightCols(R).unaryExpr([](double v) { return sigm(v); });
    Matrix a = tf.cwiseProduct(sg);
    skip.noalias() += a * p.at(layer_name(l, "skip.w"));
    skip.rowwise() += p.at(layer_name(l, "skip.b")).row(0);
    Matrix next = x + a * p.at(layer_name(l, "res.w"));
    next.rowwise() += p.at(layer_name(l, "res.b")).row(0);
    if (trace) {
      trace->x.push_back(std::move(x));
      trace->tanh_f.push_back(std::move(tf));
      trace->sig_g.push_back(std::move(sg));
      trace->a.push_back(std::move(a));
    }
    x = std::move(next);
  }
  Matrix h1 = skip.cwiseMax(0.0);
  Matrix h2 = h1 * p.at("post.1.w");
  h2.rowwise() += p.at("post.1.b").row(0);
  h2 = h2.cwiseMax(0.0);
  Matrix logits = h2 * p.at("post.2.w");
  logits.rowwise() += p.at("post.2.b").row(0);
  if (trace) {
    trace->x.push_back(std::move(x));
    trace->skip = std::move(skip);
    trace->h1 = std::move(h1);
    trace->h2 = std::move(h2);
    trace->logits = logits;
  }
  return logits;
}

Matrix log_softmax(const Matrix& logits) {
  Matrix out = logits;
  for (Eigen::Index t = 0; t < out.rows(); ++t) {
    const double m = out.row(t).maxCoeff();
    const double lse = m + std::log((out.row(t).array() - m).exp().sum());
    out.row(t).array() -= lse;
  }
  return out;
}

/// Gradients of mean cross-entropy; returns d loss / d cond.
Matrix backward_core(const VocoderParams& w, const VocoderConfig& cfg, const Trace& tr, const std::vector<int>& targets,
                     const Matrix& cond, nn::ParamMap& g) {
  const auto& p = w.params;
  const Eigen::Index T = tr.logits.rows();
  const int R = cfg.residual_channels;
  Matrix dlogits = log_softmax(tr.logits).array().exp().matrix();
  for (Eigen::Index t = 0; t < T; ++t) dlogits(t, targets[t]) -= 1.0;
  dlogits /= static_cast<double>(T);

  g.at("post.2.w").noalias() += tr.h2.transpose() * dlogits;
  g.at("post.2.b") += dlogits.colwise().sum();
  Matrix dh2 = (dlogits * p.at("post.2.w").transpose()).cwiseProduct((tr.h2.array() > 0).cast<double>().matrix());
  g.at("post.1.w").noalias() += tr.h1.transpose() * dh2;
  g.at("post.1.b") += dh2.colwise().sum();
  Matrix dskip =
      (dh2 * p.at("post.1.w").transpose()).cwiseProduct((tr.skip.array() > 0).cast<double>().matrix());
  const RowVector dskip_sum = dskip.colwise().sum();

  Matrix dx = Matrix::Zero(T, R);
  Matrix dcond = Matrix::Zero(cond.rows(), cond.cols());
  for (int l = cfg.n_dilated_layers - 1; l >= 0; --l) {
    const int d = cfg.dilation(l);
    const Matrix& a = tr.a[l];
    const Matrix& xl = tr.x[l];
    g.at(layer_name(l, "skip.w")).noalias() += a.transpose() * dskip;
    g.at(layer_name(l, "skip.b")) += dskip_sum;
    g.at(layer_name(l, "res.w")).noalias() += a.transpose() * dx;
    g.at(layer_name(l, "res.b")) += dx.colwise().sum();
    Matrix da = dskip * p.at(layer_name(l, "skip.w")).transpose() + dx * p.at(layer_name(l, "res.w")).transpose();
    const Matrix& tf = tr.tanh_f[l];
    const Matrix& sg = tr.sig_g[l];
    Matrix dz(T, 2 * R);
    dz.leftCols(R) = da.array() * sg.array() * (1.0 - tf.array().square());
    dz.rightCols(R) = da.array() * tf.array() * sg.array() * (1.0 - sg.array());
    const Matrix xs = shift_down(xl, d);
    g.at(layer_name(l, "w0")).noalias() += xs.transpose() * dz;
    g.at(layer_name(l, "w1")).noalias() += xl.transpose() * dz;
    g.at(layer_name(l, "cond_w")).noalias() += cond.transpose() * dz;
    g.at(layer_name(l, "b")) += dz.colwise().sum();
    dcond.noalias() += dz * p.at(layer_name(l, "cond_w")).transpose();
    dx += dz * p.at(layer_name(l, "w1")).transpose() + shift_up(dz * p.at(layer_name(l, "w0")).transpose(), d);
  }
  Matrix& dwin = g.at("input.w");
  for (Eigen::Index t = 0; t < T; ++t) dwin.row(tr.inputs[t]) += dx.row(t);
  g.at("input.b") += dx.colwise().sum();
  return dcond;
}

std::vector<int> shifted_inputs(const std::vector<int>& codes, int first) {
  std::vector<int> in(codes.size());
  if (!codes.empty()) {
    in[0] = first;
    std::copy(codes.begin(), codes.end() - 1, in.begin() + 1);
  }
  return in;
}

/// Loss and gradients for codes aligned with mel frames [first, first + count).
double segment_gradients(const VocoderParams& w, const VocoderConfig& cfg, const std::vector<int>& codes,
                         int first_input, const Matrix& frames_in, nn::ParamMap& g) {
  const auto& p = w.params;
  Matrix frame_cond = frames_in * p.at("cond.w");
  frame_cond.rowwise() += p.at("cond.b").row(0);
  const Matrix cond = repeat_rows(frame_cond, cfg.cond.frames_per_mel);
  Trace tr;
  forward_core(w, cfg, shifted_inputs(codes, first_input), cond, &tr);
  const double loss = cross_entropy(tr.logits, codes);
  const Matrix dcond = backward_core(w, cfg, tr, codes, cond, g);
  const int h = cfg.cond.frames_per_mel;
  Matrix dframe(frames_in.rows(), dcond.cols());
  for (Eigen::Index k = 0; k < frames_in.rows(); ++k) dframe.row(k) = dcond.middleRows(k * h, h).colwise().sum();
  g.at("cond.w").noalias() += frames_in.transpose() * dframe;
  g.at("cond.b") += dframe.colwise().sum();
  return loss;
}

}  // namespace

int VocoderConfig::receptive_field() const {
  int rf = 1;
  for (int l = 0; l < n_dilated_layers; ++l) rf += (kernel_size - 1) * dilation(l);
  return rf;
}

void VocoderConfig::validate() const {
  if (n_dilated_layers <= 0) throw std::invalid_argument("vocoder: n_dilated_layers must be positive");
  if (dilation_cycle.empty() ||
      std::any_of(dilation_cycle.begin(), dilation_cycle.end(), [](int d) { return d <= 0; })) {
    throw std::invalid_argument("vocoder: dilations must be positive");
  }
  if (kernel_size != 2) throw std::invalid_argument("vocoder: kernel_size must be 2");
  if (residual_channels <= 0 || skip_channels <= 0 || cond_channels <= 0) {
    throw std::invalid_argument("vocoder: channel counts must be positive");
  }
  if (quantization_levels != 256) throw std::invalid_argument("vocoder: quantization_levels must be 256");
  if (sample_rate <= 0 || cond.frames_per_mel <= 0 || cond.mel_dim <= 0 || cond.facial_dim < 0) {
    throw std::invalid_argument("vocoder: invalid condition spec");
  }
}

VocoderConfig VocoderConfig::desk() {
  VocoderConfig cfg;
  cfg.n_dilated_layers = 10;
  cfg.residual_channels = 16;
  cfg.skip_channels = 32;
  cfg.cond_channels = 16;
  return cfg;
}

nlohmann::json to_json(const VocoderConfig& cfg) {
  return {{"n_dilated_layers", cfg.n_dilated_layers},
          {"dilation_cycle", cfg.dilation_cycle},
          {"kernel_size", cfg.kernel_size},
          {"residual_channels", cfg.residual_channels},
          {"skip_channels", cfg.skip_channels},
          {"cond_channels", cfg.cond_channels},
          {"quantization_levels", cfg.quantization_levels},
          {"sample_rate", cfg.sample_rate},
          {"cond_spec",
           {{"mel_dim", cfg.cond.mel_dim},
            {"facial_dim", cfg.cond.facial_dim},
            {"frames_per_mel", cfg.cond.frames_per_mel}}}};
}

VocoderConfig vocoder_config_from_json(const nlohmann::json& j) {
  VocoderConfig cfg;
  cfg.n_dilated_layers = j.value("n_dilated_layers", cfg.n_dilated_layers);
  cfg.dilation_cycle = j.value("dilation_cycle", cfg.dilation_cycle);
  cfg.kernel_size = j.value("kernel_size", cfg.kernel_size);
  cfg.residual_channels = j.value("residual_channels", cfg.residual_channels);
  cfg.skip_channels = j.value("skip_channels", cfg.skip_channels);
  cfg.cond_channels = j.value("cond_channels", cfg.cond_channels);
  cfg.quantization_levels = j.value("quantization_levels", cfg.quantization_levels);
  cfg.sample_rate = j.value("sample_rate", cfg.sample_rate);
  if (j.contains("cond_spec")) {
    const auto& c = j.at("cond_spec");
    cfg.cond.mel_dim = c.value("mel_dim", cfg.cond.mel_dim);
    cfg.cond.facial_dim = c.value("facial_dim", cfg.cond.facial_dim);
    cfg.cond.frames_per_mel = c.value("frames_per_mel", cfg.cond.frames_per_mel);
  }
  cfg.validate();
  return cfg;
}

int mu_law_encode(double x) {
  x = std::clamp(x, -1.0, 1.0);
  const double y = std::copysign(std::log1p(kMu * std::abs(x)) / std::log1p(kMu), x);
  return static_cast<int>(std::lround((y + 1.0) / 2.0 * kMu));
}

double mu_law_decode(int code) {
  if (code < 0 || code > 255) throw std::out_of_range("mu-law code " + std::to_string(code) + " outside [0, 255]");
  const double y = 2.0 * code / kMu - 1.0;
  return std::copysign((std::pow(1.0 + kMu, std::abs(y)) - 1.0) / kMu, y);
}

QuantizedWaveform mu_law_encode(const AudioClip& clip, long* clipped) {
  QuantizedWaveform q;
  q.sample_rate = clip.sample_rate;
  q.codes.reserve(clip.samples.size());
  long n = 0;
  for (float s : clip.samples) {
    if (s < -1.0f || s > 1.0f) ++n;
    q.codes.push_back(mu_law_encode(s));
  }
  if (clipped) *clipped = n;
  return q;
}

AudioClip mu_law_decode(const QuantizedWaveform& q) {
  AudioClip clip;
  clip.sample_rate = q.sample_rate;
  clip.samples.reserve(q.codes.size());
  for (int c : q.codes) clip.samples.push_back(static_cast<float>(mu_law_decode(c)));
  return clip;
}

VocoderParams init_vocoder_params(const VocoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Rng rng(seed);
  VocoderParams w;
  auto& p = w.params;
  const int R = cfg.residual_channels, S = cfg.skip_channels, C = cfg.cond_channels;
  const int D = cond_input_dim(cfg);
  const int Q = cfg.quantization_levels;
  p.add("cond.w", uniform(D, C, 1.0 / std::sqrt(D), rng));
  p.add("cond.b", Matrix::Zero(1, C));
  p.add("input.w", uniform(Q, R, 1.0, rng));
  p.add("input.b", Matrix::Zero(1, R));
  for (int l = 0; l < cfg.n_dilated_layers; ++l) {
    const double gate = 1.0 / std::sqrt(2.0 * R + C);
    p.add(layer_name(l, "w0"), uniform(R, 2 * R, gate, rng));
    p.add(layer_name(l, "w1"), uniform(R, 2 * R, gate, rng));
    p.add(layer_name(l, "cond_w"), uniform(C, 2 * R, gate, rng));
    p.add(layer_name(l, "b"), Matrix::Zero(1, 2 * R));
    p.add(layer_name(l, "res.w"), uniform(R, R, 1.0 / std::sqrt(R), rng));
    p.add(layer_name(l, "res.b"), Matrix::Zero(1, R));
    p.add(layer_name(l, "skip.w"), uniform(R, S, 1.0 / std::sqrt(R), rng));
    p.add(layer_name(l, "skip.b"), Matrix::Zero(1, S));
  }
  p.add("post.1.w", uniform(S, S, 1.0 / std::sqrt(S), rng));
  p.add("post.1.b", Matrix::Zero(1, S));
  p.add("post.2.w", uniform(S, Q, 1.0 / std::sqrt(S), rng));
  p.add("post.2.b", Matrix::Zero(1, Q));
  return w;
}

Matrix build_condition(const VocoderParams& params, const VocoderConfig& cfg, const Matrix& mel,
                       const Matrix& facial) {
  check_condition_inputs(cfg, mel, facial);
  Matrix frame_cond = frame_inputs(cfg, mel, facial, 0, mel.rows()) * params.params.at("cond.w");
  frame_cond.rowwise() += params.params.at("cond.b").row(0);
  return repeat_rows(frame_cond, cfg.cond.frames_per_mel);
}

Matrix teacher_forced_logits(const VocoderParams& params, const VocoderConfig& cfg, const std::vector<int>& codes,
                             const Matrix& cond) {
  if (static_cast<Eigen::Index>(codes.size()) != cond.rows()) {
    throw std::invalid_argument("vocoder: " + std::to_string(codes.size()) + " codes but " +
                                std::to_string(cond.rows()) + " conditioning rows");
  }
  if (cond.cols() != cfg.cond_channels) throw std::invalid_argument("vocoder: conditioning width mismatch");
  return forward_core(params, cfg, shifted_inputs(codes, kMuLawMid), cond, nullptr);
}

double cross_entropy(const Matrix& logits, const std::vector<int>& codes) {
  if (static_cast<Eigen::Index>(codes.size()) != logits.rows() || codes.empty()) {
    throw std::invalid_argument("cross_entropy: length mismatch");
  }
  const Matrix lp = log_softmax(logits);
  double total = 0;
  for (std::size_t t = 0; t < codes.size(); ++t) total -= lp(static_cast<Eigen::Index>(t), codes[t]);
  return total / static_cast<double>(codes.size());
}

VocoderGradients vocoder_gradients(const VocoderParams& params, const VocoderConfig& cfg,
                                   const std::vector<int>& codes, const Matrix& mel, const Matrix& facial) {
  check_condition_inputs(cfg, mel, facial);
  if (static_cast<Eigen::Index>(codes.size()) != mel.rows() * cfg.cond.frames_per_mel) {
    throw std::invalid_argument("vocoder: codes length must be mel frames x frames_per_mel");
  }
  VocoderGradients out;
  out.grads = params.params.zeros_like();
  out.loss =
      segment_gradients(params, cfg, codes, kMuLawMid, frame_inputs(cfg, mel, facial, 0, mel.rows()), out.grads);
  return out;
}

VocoderExample make_vocoder_example(const VocoderConfig& cfg, const AudioClip& clip, const UtteranceFeatures& u) {
  if (clip.sample_rate != cfg.sample_rate) {
    throw std::invalid_argument("vocoder: clip rate " + std::to_string(clip.sample_rate) + " != " +
                                std::to_string(cfg.sample_rate));
  }
  VocoderExample ex;
  ex.mel = u.mel.frames.cast<double>();
  if (cfg.cond.facial_dim > 0) ex.facial = u.facial.fused.cast<double>();
  check_condition_inputs(cfg, ex.mel, ex.facial);
  const std::size_t n = static_cast<std::size_t>(ex.mel.rows()) * cfg.cond.frames_per_mel;
  if (clip.samples.size() < n) {
    throw std::invalid_argument("vocoder: clip has " + std::to_string(clip.samples.size()) + " samples, need " +
                                std::to_string(n));
  }
  ex.codes = mu_law_encode(clip).codes;
  ex.codes.resize(n);
  return ex;
}

VocoderTrainResult train_vocoder(const std::vector<VocoderExample>& corpus, const VocoderConfig& cfg,
                                 const VocoderHyper& hyper, const VocoderParams* warm_start) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("vocoder: empty training corpus");
  if (hyper.epochs < 0 || hyper.segment_frames < 0) throw std::invalid_argument("vocoder: invalid hyperparameters");
  for (const VocoderExample& ex : corpus) {
    check_condition_inputs(cfg, ex.mel, ex.facial);
    if (static_cast<Eigen::Index>(ex.codes.size()) != ex.mel.rows() * cfg.cond.frames_per_mel) {
      throw std::invalid_argument("vocoder: example codes length must be mel frames x frames_per_mel");
    }
  }
  VocoderTrainResult result;
  result.params = warm_start != nullptr ? *warm_start : init_vocoder_params(cfg, hyper.seed);
  nn::Adam opt({.lr = hyper.lr});
  nn::Rng rng(hyper.seed ^ 0x5eed5eedULL);
  nn::ParamMap grads = result.params.params.zeros_like();
  const int h = cfg.cond.frames_per_mel;
  const long steps = static_cast<long>(hyper.epochs) * static_cast<long>(corpus.size());
  for (long step = 0; step < steps; ++step) {
    const VocoderExample& ex = corpus[std::uniform_int_distribution<std::size_t>(0, corpus.size() - 1)(rng)];
    const Eigen::Index frames = ex.mel.rows();
    const Eigen::Index count = hyper.segment_frames == 0 ? frames : std::min<Eigen::Index>(hyper.segment_frames, frames);
    const Eigen::Index first = std::uniform_int_distribution<Eigen::Index>(0, frames - count)(rng);
    const std::vector<int> codes(ex.codes.begin() + first * h, ex.codes.begin() + (first + count) * h);
    const int prev = first == 0 ? kMuLawMid : ex.codes[first * h - 1];
    grads.set_zero();
    const double loss =
        segment_gradients(result.params, cfg, codes, prev, frame_inputs(cfg, ex.mel, ex.facial, first, count), grads);
    opt.step(result.params.params, grads);
    result.trace.push_back(loss);
  }
  return result;
}

QuantizedWaveform generate_codes(const VocoderParams& params, const VocoderConfig& cfg, const Matrix& cond,
                                 std::uint64_t seed, const GenerateOptions& opts) {
  cfg.validate();
  if (cond.cols() != cfg.cond_channels) throw std::invalid_argument("vocoder: conditioning width mismatch");
  const auto& p = params.params;
  const int L = cfg.n_dilated_layers, R = cfg.residual_channels, Q = cfg.quantization_levels;
  struct Layer {
    const Matrix *w0, *w1, *cw, *b, *rw, *rb, *sw, *sb;
    int d;
    Matrix ring;  // d x R history of this layer's input
    RowVector cproj;
  };
  std::vector<Layer> layers(L);
  for (int l = 0; l < L; ++l) {
    Layer& ly = layers[l];
    ly.w0 = &p.at(layer_name(l, "w0"));
    ly.w1 = &p.at(layer_name(l, "w1"));
    ly.cw = &p.at(layer_name(l, "cond_w"));
    ly.b = &p.at(layer_name(l, "b"));
    ly.rw = &p.at(layer_name(l, "res.w"));
    ly.rb = &p.at(layer_name(l, "res.b"));
    ly.sw = &p.at(layer_name(l, "skip.w"));
    ly.sb = &p.at(layer_name(l, "skip.b"));
    ly.d = cfg.dilation(l);
    ly.ring = Matrix::Zero(ly.d, R);
  }
  const Matrix& win = p.at("input.w");
  const Matrix& p1 = p.at("post.1.w");
  const Matrix& p2 = p.at("post.2.w");
  const RowVector p1b = p.at("post.1.b").row(0);
  const RowVector p2b = p.at("post.2.b").row(0);
  const RowVector inb = p.at("input.b").row(0);

  nn::Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  QuantizedWaveform out;
  out.sample_rate = cfg.sample_rate;
  out.codes.reserve(static_cast<std::size_t>(cond.rows()));
  RowVector x(R), z(2 * R), a(R), skip(cfg.skip_channels), h(cfg.skip_channels), logits(Q);
  int prev = kMuLawMid;
  for (Eigen::Index t = 0; t < cond.rows(); ++t) {
    const bool new_cond = t == 0 || cond.row(t) != cond.row(t - 1);
    x = win.row(prev) + inb;
    skip.setZero();
    for (Layer& ly : layers) {
      if (new_cond) ly.cproj = cond.row(t) * *ly.cw + ly.b->row(0);
      const Eigen::Index slot = t % ly.d;
      z.noalias() = ly.ring.row(slot) * *ly.w0;
      z.noalias() += x * *ly.w1;
      z += ly.cproj;
      ly.ring.row(slot) = x;
      for (int c = 0; c < R; ++c) a[c] = std::tanh(z[c]) * sigm(z[R + c]);
      skip.noalias() += a * *ly.sw;
      skip += ly.sb->row(0);
      x.noalias() += a * *ly.rw;
      x += ly.rb->row(0);
    }
    h.noalias() = skip.cwiseMax(0.0) * p1;
    h = (h + p1b).cwiseMax(0.0);
    logits.noalias() = h * p2;
    logits += p2b;
    int code = 0;
    if (opts.greedy) {
      logits.maxCoeff(&code);
    } else {
      const double temp = opts.temperature > 0 ? opts.temperature : 1.0;
      const double m = logits.maxCoeff();
      RowVector prob = ((logits.array() - m) / temp).exp().matrix();
      double u = unif(rng) * prob.sum();
      code = Q - 1;
      for (int q = 0; q < Q; ++q) {
        u -= prob[q];
        if (u < 0) {
          code = q;
          break;
        }
      }
    }
    out.codes.push_back(code);
    prev = code;
  }
  return out;
}

AudioClip generate(const VocoderParams& params, const VocoderConfig& cfg, const Matrix& cond, std::uint64_t seed,
                   const GenerateOptions& opts) {
  return mu_law_decode(generate_codes(params, cfg, cond, seed, opts));
}

nn::Checkpoint to_checkpoint(const VocoderParams& params, const VocoderConfig& cfg) {
  nn::Checkpoint ckpt;
  ckpt.kind = "vocoder";
  ckpt.config = to_json(cfg);
  ckpt.groups["model"] = params;
  return ckpt;
}

}  // namespace avsc
