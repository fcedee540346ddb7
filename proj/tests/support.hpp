#pragma once

#include "avsc/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace avsc::testing {

inline nn::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, nn::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  nn::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

struct GroupCheck {
  std::string name;
  double rel_error = 0;
  int checked = 0;
};

/// Central differences on up to `per_group` sampled entries of every tensor,
/// compared to `analytic` by norm-wise relative error per tensor.
inline std::vector<GroupCheck> check_gradients(nn::ParamMap& params, const nn::ParamMap& analytic,
                                               const std::function<double()>& loss, int per_group,
                                               std::uint64_t seed, double h = 1e-6) {
  nn::Rng rng(seed);
  std::vector<GroupCheck> out;
  for (auto& [name, tensor] : params) {
    const nn::Matrix& g = analytic.at(name);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(tensor.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    if (static_cast<int>(idx.size()) > per_group) idx.resize(static_cast<std::size_t>(per_group));
    double diff = 0, norm_a = 0, norm_n = 0;
    for (Eigen::Index i : idx) {
      double& v = tensor.data()[i];
      const double orig = v;
      v = orig + h;
      const double up = loss();
      v = orig - h;
      const double down = loss();
      v = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = g.data()[i];
      diff += (a - numeric) * (a - numeric);
      norm_a += a * a;
      norm_n += numeric * numeric;
    }
    GroupCheck c;
    c.name = name;
    c.checked = static_cast<int>(idx.size());
    const double denom = std::sqrt(norm_a) + std::sqrt(norm_n);
    // both sides vanish (e.g. a bias feeding batch normalization)
    c.rel_error = denom > 1e-8 ? std::sqrt(diff) / denom : 0.0;
    out.push_back(c);
  }
  return out;
}

inline double worst(const std::vector<GroupCheck>& checks, std::string* name = nullptr) {
  double w = 0;
  for (const GroupCheck& c : checks) {
    if (c.rel_error >= w) {
      w = c.rel_error;
      if (name) *name = c.name;
    }
  }
  return w;
}

}  // namespace avsc::testing
