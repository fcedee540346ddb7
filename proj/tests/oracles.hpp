#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include "avsc/align.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

namespace avsc::testing {

/// Minimum over every monotone (1,0)/(0,1)/(1,1) path of the cost summed from
/// (0, 0) forward, by explicit enumeration.
inline double enumerate_min_path_cost(const std::vector<TiedFrame>& src, const std::vector<TiedFrame>& tgt,
                                      long* path_count = nullptr) {
  const int n = static_cast<int>(src.size()), m = static_cast<int>(tgt.size());
  double best = std::numeric_limits<double>::infinity();
  long count = 0;
  std::function<void(int, int, double)> walk = [&](int i, int j, double acc) {
    acc += frame_distance(src[i], tgt[j]);
    if (i == n - 1 && j == m - 1) {
      ++count;
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, acc);
    if (i + 1 < n) walk(i + 1, j, acc);
    if (j + 1 < m) walk(i, j + 1, acc);
  };
  walk(0, 0, 0.0);
  if (path_count) *path_count = count;
  return best;
}

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double ma = a.mean(), mb = b.mean();
  double sab = 0, saa = 0, sbb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// max |corr(X a, Y b)| over unit directions a, b in the plane, by a grid
/// over both angles followed by repeated local grid refinement.
inline double projection_search_correlation(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const Eigen::Matrix2d sxx = xc.transpose() * xc, syy = yc.transpose() * yc, sxy = xc.transpose() * yc;
  auto corr = [&](double th, double ph) {
    const Eigen::Vector2d a(std::cos(th), std::sin(th)), b(std::cos(ph), std::sin(ph));
    return std::abs(a.dot(sxy * b)) / std::sqrt(a.dot(sxx * a) * b.dot(syy * b));
  };
  const double pi = std::numbers::pi;
  double best = -1, bt = 0, bp = 0;
  const int steps = 360;
  for (int i = 0; i < steps; ++i) {
    for (int j = 0; j < steps; ++j) {
      const double th = pi * i / steps, ph = pi * j / steps;
      const double c = corr(th, ph);
      if (c > best) best = c, bt = th, bp = ph;
    }
  }
  double span = pi / steps;
  for (int round = 0; round < 30; ++round) {
    const double ct = bt, cp = bp;
    for (int i = -10; i <= 10; ++i) {
      for (int j = -10; j <= 10; ++j) {
        const double th = ct + span * i / 10, ph = cp + span * j / 10;
        const double c = corr(th, ph);
        if (c > best) best = c, bt = th, bp = ph;
      }
    }
    span *= 0.5;
  }
  return best;
}

/// One-sided rank-sum p-value P(W >= w_obs) by enumerating every way of
/// drawing |a| of the pooled mid-ranks.
inline double enumerate_rank_sum_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const int n = static_cast<int>(pooled.size()), k = static_cast<int>(a.size());
  std::vector<double> rank(n);
  for (int i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (int j = 0; j < n; ++j) {
      if (pooled[j] < pooled[i]) ++less;
      if (pooled[j] == pooled[i]) ++equal;
    }
    rank[i] = less + (equal + 1) / 2;
  }
  double observed = 0;
  for (int i = 0; i < k; ++i) observed += rank[i];
  long total = 0, tail = 0;
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + k, true);
  do {
    double s = 0;
    for (int i = 0; i < n; ++i) {
      if (pick[i]) s += rank[i];
    }
    ++total;
    if (s >= observed - 1e-9) ++tail;
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return static_cast<double>(tail) / static_cast<double>(total);
}

}  // namespace avsc::testing
