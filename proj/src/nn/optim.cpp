#include "avsc/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace avsc::nn {

void Adam::step(ParamMap& params, const ParamMap& grads) {
  if (t_ == 0) {
    m_ = params.zeros_like();
    v_ = params.zeros_like();
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    const Matrix& g = grads.at(name);
    Matrix& m = m_.at(name);
    Matrix& v = v_.at(name);
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    if (cfg_.lr == 0.0) continue;
    p.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
  }
}

double l1_loss(const Matrix& pred, const Matrix& target, double scale, Matrix* grad) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("l1_loss: shape mismatch");
  }
  const Matrix diff = pred - target;
  const double n = static_cast<double>(diff.size());
  if (grad != nullptr) {
    *grad = diff.unaryExpr([&](double d) { return d > 0 ? scale / n : (d < 0 ? -scale / n : 0.0); });
  }
  return diff.cwiseAbs().sum() / n;
}

}  // namespace avsc::nn
