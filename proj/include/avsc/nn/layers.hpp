#pragma once

#include "avsc/nn/tensor.hpp"

#include <string>

namespace avsc::nn {

/// Sampling geometry of a convolution. 1-D maps use in_h == out_h == 1.
struct ConvGeometry {
  int in_h = 1, in_w = 1;
  int out_h = 1, out_w = 1;
  int kernel_h = 1, kernel_w = 1;
  int stride_h = 1, stride_w = 1;
  int dilation_h = 1, dilation_w = 1;
  int pad_top = 0, pad_left = 0;

  int in_positions() const { return in_h * in_w; }
  int out_positions() const { return out_h * out_w; }
  int taps() const { return kernel_h * kernel_w; }
};

/// "Same" padding: output length ceil(length / stride).
ConvGeometry same_1d(int length, int kernel, int stride = 1);
/// Left-only padding so output t sees inputs t - (kernel-1)*dilation .. t.
ConvGeometry causal_1d(int length, int kernel, int dilation);
ConvGeometry same_2d(int height, int width, int kernel, int stride = 1);

/// Gathers receptive fields of output positions [first, last) into rows of
/// `cols` (tap-major, then channel).
void im2col(const Matrix& x, const ConvGeometry& g, int first, int last, Matrix& cols);
/// Adjoint of im2col: scatters rows of `cols` back and accumulates into dx.
void col2im_add(const Matrix& cols, const ConvGeometry& g, int first, int last, Matrix& dx);

/// Convolution over positions x channels maps, weight (taps*in) x out.
class Conv {
 public:
  Conv() = default;
  Conv(std::string name, int in_channels, int out_channels, ConvGeometry geometry);

  void init(ParamMap& params, Rng& rng) const;
  Batch forward(const ParamMap& params, const Batch& x);
  Batch backward(const ParamMap& params, ParamMap& grads, const Batch& dy);

  const ConvGeometry& geometry() const { return geom_; }
  int out_channels() const { return out_ch_; }
  std::string weight() const { return name_ + ".w"; }
  std::string bias() const { return name_ + ".b"; }

 private:
  std::string name_;
  int in_ch_ = 0, out_ch_ = 0;
  ConvGeometry geom_;
  Batch input_;
};

/// Transposed convolution, defined as the adjoint of the convolution that
/// `adjoint` describes (which maps this layer's output back onto its input).
/// Weight (taps*out) x in.
class ConvTranspose {
 public:
  ConvTranspose() = default;
  ConvTranspose(std::string name, int in_channels, int out_channels, ConvGeometry adjoint);

  void init(ParamMap& params, Rng& rng) const;
  Batch forward(const ParamMap& params, const Batch& x);
  Batch backward(const ParamMap& params, ParamMap& grads, const Batch& dy);

  int out_channels() const { return out_ch_; }
  int out_positions() const { return adj_.in_positions(); }
  std::string weight() const { return name_ + ".w"; }
  std::string bias() const { return name_ + ".b"; }

 private:
  std::string name_;
  int in_ch_ = 0, out_ch_ = 0;
  ConvGeometry adj_;
  Batch input_;
};

/// Fully connected layer applied to every row.
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features);

  void init(ParamMap& params, Rng& rng) const;
  Batch forward(const ParamMap& params, const Batch& x);
  Batch backward(const ParamMap& params, ParamMap& grads, const Batch& dy);

  std::string weight() const { return name_ + ".w"; }
  std::string bias() const { return name_ + ".b"; }

 private:
  std::string name_;
  int in_ = 0, out_ = 0;
  Batch input_;
};

/// Per-channel batch normalization; statistics pooled over batch and positions.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, int channels, double momentum = 0.9, double eps = 1e-5);

  void init(ParamMap& params, ParamMap& buffers) const;
  /// Training mode normalizes with batch statistics and, when `update` is
  /// non-null, folds them into its running averages. Inference mode reads the
  /// running averages from `buffers`.
  Batch forward(const ParamMap& params, const ParamMap& buffers, const Batch& x, Mode mode,
                ParamMap* update = nullptr);
  Batch backward(const ParamMap& params, ParamMap& grads, const Batch& dy);

  std::string gamma() const { return name_ + ".gamma"; }
  std::string beta() const { return name_ + ".beta"; }
  std::string running_mean() const { return name_ + ".running_mean"; }
  std::string running_var() const { return name_ + ".running_var"; }

 private:
  std::string name_;
  int channels_ = 0;
  double momentum_ = 0.9, eps_ = 1e-5;
  Mode mode_ = Mode::kInference;
  Batch xhat_;
  RowVector inv_std_;
};

enum class ActivationKind { kRelu, kSigmoid, kTanh };

class Activation {
 public:
  explicit Activation(ActivationKind kind = ActivationKind::kRelu) : kind_(kind) {}
  Batch forward(const Batch& x);
  Batch backward(const Batch& dy) const;

 private:
  ActivationKind kind_;
  Batch cache_;
};

/// 2x2 max pooling with stride 2 over an h x w map (odd edges dropped).
class MaxPool2 {
 public:
  MaxPool2() = default;
  MaxPool2(int height, int width, int channels);

  Batch forward(const Batch& x);
  Batch backward(const Batch& dy) const;

  int out_h() const { return h_ / 2; }
  int out_w() const { return w_ / 2; }

 private:
  int h_ = 0, w_ = 0, c_ = 0;
  std::vector<std::vector<int>> argmax_;
  std::vector<int> in_rows_;
};

double sigmoid(double x);

}  // namespace avsc::nn
