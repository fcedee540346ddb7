#include "avsc/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace avsc::nn {

namespace {

// Rows per im2col block; bounds scratch memory for large 2-D maps.
int block_rows(const ConvGeometry& g, int channels) {
  const long width = static_cast<long>(g.taps()) * channels;
  return static_cast<int>(std::max<long>(1, (1L << 22) / std::max<long>(1, width)));
}

void uniform_fill(Matrix& m, Rng& rng, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

void check_rows(const Matrix& x, int positions, int channels, const char* what) {
  if (x.rows() != positions || x.cols() != channels) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(positions) +
                                "x" + std::to_string(channels) + " input, got " +
                                std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
  }
}

}  // namespace

ConvGeometry same_1d(int length, int kernel, int stride) {
  ConvGeometry g;
  g.in_w = length;
  g.kernel_w = kernel;
  g.stride_w = stride;
  g.out_w = (length + stride - 1) / stride;
  const int pad_total = std::max((g.out_w - 1) * stride + kernel - length, 0);
  g.pad_left = pad_total / 2;
  return g;
}

ConvGeometry causal_1d(int length, int kernel, int dilation) {
  ConvGeometry g;
  g.in_w = length;
  g.out_w = length;
  g.kernel_w = kernel;
  g.dilation_w = dilation;
  g.pad_left = (kernel - 1) * dilation;
  return g;
}

ConvGeometry same_2d(int height, int width, int kernel, int stride) {
  const ConvGeometry row = same_1d(width, kernel, stride);
  const ConvGeometry col = same_1d(height, kernel, stride);
  ConvGeometry g = row;
  g.in_h = height;
  g.out_h = col.out_w;
  g.kernel_h = kernel;
  g.stride_h = stride;
  g.pad_top = col.pad_left;
  return g;
}

void im2col(const Matrix& x, const ConvGeometry& g, int first, int last, Matrix& cols) {
  const int channels = static_cast<int>(x.cols());
  cols.setZero(last - first, static_cast<Eigen::Index>(g.taps()) * channels);
  for (int p = first; p < last; ++p) {
    const int oy = p / g.out_w;
    const int ox = p % g.out_w;
    for (int ky = 0; ky < g.kernel_h; ++ky) {
      const int iy = oy * g.stride_h - g.pad_top + ky * g.dilation_h;
      if (iy < 0 || iy >= g.in_h) continue;
      for (int kx = 0; kx < g.kernel_w; ++kx) {
        const int ix = ox * g.stride_w - g.pad_left + kx * g.dilation_w;
        if (ix < 0 || ix >= g.in_w) continue;
        const int tap = ky * g.kernel_w + kx;
        cols.row(p - first).segment(static_cast<Eigen::Index>(tap) * channels, channels) =
            x.row(iy * g.in_w + ix);
      }
    }
  }
}

void col2im_add(const Matrix& cols, const ConvGeometry& g, int first, int last, Matrix& dx) {
  const int channels = static_cast<int>(dx.cols());
  for (int p = first; p < last; ++p) {
    const int oy = p / g.out_w;
    const int ox = p % g.out_w;
    for (int ky = 0; ky < g.kernel_h; ++ky) {
      const int iy = oy * g.stride_h - g.pad_top + ky * g.dilation_h;
      if (iy < 0 || iy >= g.in_h) continue;
      for (int kx = 0; kx < g.kernel_w; ++kx) {
        const int ix = ox * g.stride_w - g.pad_left + kx * g.dilation_w;
        if (ix < 0 || ix >= g.in_w) continue;
        const int tap = ky * g.kernel_w + kx;
        dx.row(iy * g.in_w + ix) +=
            cols.row(p - first).segment(static_cast<Eigen::Index>(tap) * channels, channels);
      }
    }
  }
}

// ---------------------------------------------------------------- Conv

Conv::Conv(std::string name, int in_channels, int out_channels, ConvGeometry geometry)
    : name_(std::move(name)), in_ch_(in_channels), out_ch_(out_channels), geom_(geometry) {}

void Conv::init(ParamMap& params, Rng& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(geom_.taps() * in_ch_));
  Matrix w(geom_.taps() * in_ch_, out_ch_);
  uniform_fill(w, rng, bound);
  Matrix b(1, out_ch_);
  uniform_fill(b, rng, bound);
  params.add(weight(), std::move(w));
  params.add(bias(), std::move(b));
}

Batch Conv::forward(const ParamMap& params, const Batch& x) {
  const Matrix& w = params.at(weight());
  const Matrix& b = params.at(bias());
  input_ = x;
  Batch out;
  out.reserve(x.size());
  Matrix cols;
  const int step = block_rows(geom_, in_ch_);
  for (const Matrix& xi : x) {
    check_rows(xi, geom_.in_positions(), in_ch_, "Conv");
    Matrix y(geom_.out_positions(), out_ch_);
    for (int p0 = 0; p0 < geom_.out_positions(); p0 += step) {
      const int p1 = std::min(p0 + step, geom_.out_positions());
      im2col(xi, geom_, p0, p1, cols);
      y.middleRows(p0, p1 - p0).noalias() = cols * w;
    }
    y.rowwise() += b.row(0);
    out.push_back(std::move(y));
  }
  return out;
}

Batch Conv::backward(const ParamMap& params, ParamMap& grads, const Batch& dy) {
  const Matrix& w = params.at(weight());
  Matrix& dw = grads.at(weight());
  Matrix& db = grads.at(bias());
  Batch dx;
  dx.reserve(dy.size());
  Matrix cols, dcols;
  const int step = block_rows(geom_, in_ch_);
  for (std::size_t n = 0; n < dy.size(); ++n) {
    Matrix dxi = Matrix::Zero(geom_.in_positions(), in_ch_);
    for (int p0 = 0; p0 < geom_.out_positions(); p0 += step) {
      const int p1 = std::min(p0 + step, geom_.out_positions());
      const auto dblock = dy[n].middleRows(p0, p1 - p0);
      im2col(input_[n], geom_, p0, p1, cols);
      dw.noalias() += cols.transpose() * dblock;
      dcols.noalias() = dblock * w.transpose();
      col2im_add(dcols, geom_, p0, p1, dxi);
    }
    db.row(0) += dy[n].colwise().sum();
    dx.push_back(std::move(dxi));
  }
  return dx;
}

// ---------------------------------------------------------------- ConvTranspose

ConvTranspose::ConvTranspose(std::string name, int in_channels, int out_channels,
                             ConvGeometry adjoint)
    : name_(std::move(name)), in_ch_(in_channels), out_ch_(out_channels), adj_(adjoint) {}

void ConvTranspose::init(ParamMap& params, Rng& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(adj_.taps() * in_ch_));
  Matrix w(adj_.taps() * out_ch_, in_ch_);
  uniform_fill(w, rng, bound);
  Matrix b(1, out_ch_);
  uniform_fill(b, rng, bound);
  params.add(weight(), std::move(w));
  params.add(bias(), std::move(b));
}

Batch ConvTranspose::forward(const ParamMap& params, const Batch& x) {
  const Matrix& w = params.at(weight());
  const Matrix& b = params.at(bias());
  input_ = x;
  Batch out;
  out.reserve(x.size());
  Matrix dcols;
  const int step = block_rows(adj_, out_ch_);
  for (const Matrix& xi : x) {
    check_rows(xi, adj_.out_positions(), in_ch_, "ConvTranspose");
    Matrix y = Matrix::Zero(adj_.in_positions(), out_ch_);
    for (int p0 = 0; p0 < adj_.out_positions(); p0 += step) {
      const int p1 = std::min(p0 + step, adj_.out_positions());
      dcols.noalias() = xi.middleRows(p0, p1 - p0) * w.transpose();
      col2im_add(dcols, adj_, p0, p1, y);
    }
    y.rowwise() += b.row(0);
    out.push_back(std::move(y));
  }
  return out;
}

Batch ConvTranspose::backward(const ParamMap& params, ParamMap& grads, const Batch& dy) {
  const Matrix& w = params.at(weight());
  Matrix& dw = grads.at(weight());
  Matrix& db = grads.at(bias());
  Batch dx;
  dx.reserve(dy.size());
  Matrix cols;
  const int step = block_rows(adj_, out_ch_);
  for (std::size_t n = 0; n < dy.size(); ++n) {
    Matrix dxi(adj_.out_positions(), in_ch_);
    for (int p0 = 0; p0 < adj_.out_positions(); p0 += step) {
      const int p1 = std::min(p0 + step, adj_.out_positions());
      im2col(dy[n], adj_, p0, p1, cols);
      dxi.middleRows(p0, p1 - p0).noalias() = cols * w;
      dw.noalias() += cols.transpose() * input_[n].middleRows(p0, p1 - p0);
    }
    db.row(0) += dy[n].colwise().sum();
    dx.push_back(std::move(dxi));
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, int in_features, int out_features)
    : name_(std::move(name)), in_(in_features), out_(out_features) {}

void Linear::init(ParamMap& params, Rng& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  Matrix w(in_, out_);
  uniform_fill(w, rng, bound);
  Matrix b(1, out_);
  uniform_fill(b, rng, bound);
  params.add(weight(), std::move(w));
  params.add(bias(), std::move(b));
}

Batch Linear::forward(const ParamMap& params, const Batch& x) {
  const Matrix& w = params.at(weight());
  const Matrix& b = params.at(bias());
  input_ = x;
  Batch out;
  out.reserve(x.size());
  for (const Matrix& xi : x) {
    if (xi.cols() != in_) throw std::invalid_argument("Linear: input width mismatch");
    Matrix y = xi * w;
    y.rowwise() += b.row(0);
    out.push_back(std::move(y));
  }
  return out;
}

Batch Linear::backward(const ParamMap& params, ParamMap& grads, const Batch& dy) {
  const Matrix& w = params.at(weight());
  Matrix& dw = grads.at(weight());
  Matrix& db = grads.at(bias());
  Batch dx;
  dx.reserve(dy.size());
  for (std::size_t n = 0; n < dy.size(); ++n) {
    dw.noalias() += input_[n].transpose() * dy[n];
    db.row(0) += dy[n].colwise().sum();
    dx.push_back(dy[n] * w.transpose());
  }
  return dx;
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, double momentum, double eps)
    : name_(std::move(name)), channels_(channels), momentum_(momentum), eps_(eps) {}

void BatchNorm::init(ParamMap& params, ParamMap& buffers) const {
  params.add(gamma(), Matrix::Ones(1, channels_));
  params.add(beta(), Matrix::Zero(1, channels_));
  buffers.add(running_mean(), Matrix::Zero(1, channels_));
  buffers.add(running_var(), Matrix::Ones(1, channels_));
}

Batch BatchNorm::forward(const ParamMap& params, const ParamMap& buffers, const Batch& x, Mode mode,
                         ParamMap* update) {
  const RowVector g = params.at(gamma()).row(0);
  const RowVector b = params.at(beta()).row(0);
  mode_ = mode;
  RowVector mean, var;
  if (mode == Mode::kTrain) {
    double count = 0;
    mean = RowVector::Zero(channels_);
    for (const Matrix& xi : x) {
      mean += xi.colwise().sum();
      count += static_cast<double>(xi.rows());
    }
    if (count == 0) throw std::invalid_argument("BatchNorm: empty batch");
    mean /= count;
    var = RowVector::Zero(channels_);
    for (const Matrix& xi : x) var += (xi.rowwise() - mean).array().square().colwise().sum().matrix();
    var /= count;
    if (update != nullptr) {
      Matrix& rm = update->at(running_mean());
      Matrix& rv = update->at(running_var());
      const double unbias = count > 1 ? count / (count - 1) : 1.0;
      rm.row(0) = momentum_ * rm.row(0) + (1.0 - momentum_) * mean;
      rv.row(0) = momentum_ * rv.row(0) + (1.0 - momentum_) * unbias * var;
    }
  } else {
    mean = buffers.at(running_mean()).row(0);
    var = buffers.at(running_var()).row(0);
  }
  inv_std_ = (var.array() + eps_).rsqrt().matrix();
  xhat_.clear();
  Batch out;
  out.reserve(x.size());
  for (const Matrix& xi : x) {
    Matrix xh = ((xi.rowwise() - mean).array().rowwise() * inv_std_.array()).matrix();
    Matrix y = (xh.array().rowwise() * g.array()).matrix();
    y.rowwise() += b;
    xhat_.push_back(std::move(xh));
    out.push_back(std::move(y));
  }
  return out;
}

Batch BatchNorm::backward(const ParamMap& params, ParamMap& grads, const Batch& dy) {
  const RowVector g = params.at(gamma()).row(0);
  RowVector dgamma = RowVector::Zero(channels_);
  RowVector dbeta = RowVector::Zero(channels_);
  double count = 0;
  for (std::size_t n = 0; n < dy.size(); ++n) {
    dgamma += (dy[n].array() * xhat_[n].array()).colwise().sum().matrix();
    dbeta += dy[n].colwise().sum();
    count += static_cast<double>(dy[n].rows());
  }
  grads.at(gamma()).row(0) += dgamma;
  grads.at(beta()).row(0) += dbeta;

  Batch dx;
  dx.reserve(dy.size());
  const RowVector scale = (g.array() * inv_std_.array()).matrix();
  for (std::size_t n = 0; n < dy.size(); ++n) {
    if (mode_ == Mode::kTrain) {
      // d/dx of gamma * (x - mean) / std with batch statistics
      Matrix t = dy[n];
      t.rowwise() -= dbeta / count;
      t -= (xhat_[n].array().rowwise() * (dgamma / count).array()).matrix();
      dx.push_back((t.array().rowwise() * scale.array()).matrix());
    } else {
      dx.push_back((dy[n].array().rowwise() * scale.array()).matrix());
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Activation

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Batch Activation::forward(const Batch& x) {
  Batch out;
  out.reserve(x.size());
  for (const Matrix& xi : x) {
    switch (kind_) {
      case ActivationKind::kRelu:
        out.push_back(xi.cwiseMax(0.0));
        break;
      case ActivationKind::kSigmoid:
        out.push_back(xi.unaryExpr([](double v) { return sigmoid(v); }));
        break;
      case ActivationKind::kTanh:
        out.push_back(xi.array().tanh().matrix());
        break;
    }
  }
  cache_ = kind_ == ActivationKind::kRelu ? x : out;
  return out;
}

Batch Activation::backward(const Batch& dy) const {
  Batch dx;
  dx.reserve(dy.size());
  for (std::size_t n = 0; n < dy.size(); ++n) {
    const auto c = cache_[n].array();
    switch (kind_) {
      case ActivationKind::kRelu:
        dx.push_back((c > 0.0).select(dy[n].array(), 0.0).matrix());
        break;
      case ActivationKind::kSigmoid:
        dx.push_back((dy[n].array() * c * (1.0 - c)).matrix());
        break;
      case ActivationKind::kTanh:
        dx.push_back((dy[n].array() * (1.0 - c.square())).matrix());
        break;
    }
  }
  return dx;
}

// ---------------------------------------------------------------- MaxPool2

MaxPool2::MaxPool2(int height, int width, int channels) : h_(height), w_(width), c_(channels) {}

Batch MaxPool2::forward(const Batch& x) {
  const int oh = out_h(), ow = out_w();
  argmax_.assign(x.size(), {});
  in_rows_.assign(x.size(), 0);
  Batch out;
  out.reserve(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    check_rows(x[n], h_ * w_, c_, "MaxPool2");
    in_rows_[n] = static_cast<int>(x[n].rows());
    Matrix y(oh * ow, c_);
    std::vector<int>& arg = argmax_[n];
    arg.assign(static_cast<std::size_t>(oh) * ow * c_, 0);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const int p = oy * ow + ox;
        for (int c = 0; c < c_; ++c) {
          int best = (2 * oy) * w_ + 2 * ox;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int r = (2 * oy + dy) * w_ + 2 * ox + dx;
              if (x[n](r, c) > x[n](best, c)) best = r;
            }
          }
          y(p, c) = x[n](best, c);
          arg[static_cast<std::size_t>(p) * c_ + c] = best;
        }
      }
    }
    out.push_back(std::move(y));
  }
  return out;
}

Batch MaxPool2::backward(const Batch& dy) const {
  Batch dx;
  dx.reserve(dy.size());
  for (std::size_t n = 0; n < dy.size(); ++n) {
    Matrix d = Matrix::Zero(in_rows_[n], c_);
    for (Eigen::Index p = 0; p < dy[n].rows(); ++p) {
      for (int c = 0; c < c_; ++c) {
        d(argmax_[n][static_cast<std::size_t>(p) * c_ + c], c) += dy[n](p, c);
      }
    }
    dx.push_back(std::move(d));
  }
  return dx;
}

// ---------------------------------------------------------------- ParamMap

Matrix& ParamMap::add(const std::string& name, Matrix value) {
  auto [it, inserted] = tensors_.insert_or_assign(name, std::move(value));
  (void)inserted;
  return it->second;
}

Matrix& ParamMap::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown tensor '" + name + "'");
  return it->second;
}

const Matrix& ParamMap::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown tensor '" + name + "'");
  return it->second;
}

ParamMap ParamMap::zeros_like() const {
  ParamMap out;
  for (const auto& [name, m] : tensors_) out.add(name, Matrix::Zero(m.rows(), m.cols()));
  return out;
}

void ParamMap::set_zero() {
  for (auto& [name, m] : tensors_) m.setZero();
}

std::size_t ParamMap::element_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : tensors_) n += static_cast<std::size_t>(m.size());
  return n;
}

bool ParamMap::operator==(const ParamMap& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  auto a = tensors_.begin();
  auto b = other.tensors_.begin();
  for (; a != tensors_.end(); ++a, ++b) {
    if (a->first != b->first) return false;
    if (a->second.rows() != b->second.rows() || a->second.cols() != b->second.cols()) return false;
    if (a->second != b->second) return false;
  }
  return true;
}

}  // namespace avsc::nn
