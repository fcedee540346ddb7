#pragma once

#include "avsc/nn/tensor.hpp"

namespace avsc::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment gradient descent over a ParamMap.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamMap& params, const ParamMap& grads);
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  ParamMap m_, v_;
  long t_ = 0;
};

/// Mean absolute error and its gradient (sign, zero at ties) scaled by `scale / size`.
double l1_loss(const Matrix& pred, const Matrix& target, double scale, Matrix* grad);

}  // namespace avsc::nn
