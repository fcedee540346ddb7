#include "avsc/align.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace avsc {

std::vector<TiedFrame> tied_frames(const UtteranceFeatures& u) {
  check_rate_tied(u);
  std::vector<TiedFrame> frames(static_cast<std::size_t>(u.facial.length()));
  for (int i = 0; i < u.facial.length(); ++i) {
    frames[i].acoustic = u.mel.frames.middleRows(static_cast<Eigen::Index>(i) * kMelPerFacial, kMelPerFacial);
    frames[i].facial = u.facial.fused.row(i);
  }
  return frames;
}

double frame_distance(const TiedFrame& a, const TiedFrame& b) {
  const double acoustic = (a.acoustic.cast<double>() - b.acoustic.cast<double>()).norm() /
                          static_cast<double>(a.acoustic.size());
  const double facial = (a.facial.cast<double>() - b.facial.cast<double>()).norm() /
                        static_cast<double>(a.facial.size());
  return acoustic + facial;
}

AlignmentPath dtw_align(const std::vector<TiedFrame>& src, const std::vector<TiedFrame>& tgt) {
  if (src.empty() || tgt.empty()) throw std::invalid_argument("dtw_align: empty sequence");
  const int n = static_cast<int>(src.size());
  const int m = static_cast<int>(tgt.size());
  Eigen::MatrixXd dist(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) dist(i, j) = frame_distance(src[i], tgt[j]);
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Constant(n, m, inf);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == 0 && j == 0) {
        acc(i, j) = dist(i, j);
        continue;
      }
      double best = inf;
      if (i > 0 && j > 0) best = acc(i - 1, j - 1);
      if (i > 0) best = std::min(best, acc(i - 1, j));
      if (j > 0) best = std::min(best, acc(i, j - 1));
      acc(i, j) = best + dist(i, j);
    }
  }

  AlignmentPath path;
  int i = n - 1, j = m - 1;
  path.pairs.emplace_back(i, j);
  while (i > 0 || j > 0) {
    const double diag = (i > 0 && j > 0) ? acc(i - 1, j - 1) : inf;
    const double up = i > 0 ? acc(i - 1, j) : inf;
    const double left = j > 0 ? acc(i, j - 1) : inf;
    if (diag <= up && diag <= left) {
      --i;
      --j;
    } else if (up <= left) {
      --i;
    } else {
      --j;
    }
    path.pairs.emplace_back(i, j);
  }
  std::reverse(path.pairs.begin(), path.pairs.end());
  path.total_cost = path_cost(path.pairs, src, tgt);
  return path;
}

double path_cost(const std::vector<std::pair<int, int>>& pairs, const std::vector<TiedFrame>& src,
                 const std::vector<TiedFrame>& tgt) {
  double cost = 0.0;
  for (const auto& [i, j] : pairs) cost += frame_distance(src.at(i), tgt.at(j));
  return cost;
}

void validate_path(const AlignmentPath& path, int n, int m) {
  if (path.pairs.empty()) throw std::invalid_argument("alignment path is empty");
  if (path.pairs.front() != std::make_pair(0, 0)) throw std::invalid_argument("alignment path must start at (0,0)");
  if (path.pairs.back() != std::make_pair(n - 1, m - 1)) {
    throw std::invalid_argument("alignment path must end at (" + std::to_string(n - 1) + "," +
                                std::to_string(m - 1) + ")");
  }
  for (std::size_t k = 1; k < path.pairs.size(); ++k) {
    const int di = path.pairs[k].first - path.pairs[k - 1].first;
    const int dj = path.pairs[k].second - path.pairs[k - 1].second;
    if (di < 0 || dj < 0 || di > 1 || dj > 1 || (di == 0 && dj == 0)) {
      throw std::invalid_argument("alignment path has an invalid step at position " + std::to_string(k));
    }
  }
}

UtterancePair apply_alignment(const AlignmentPath& path, const UtteranceFeatures& src, const UtteranceFeatures& tgt) {
  check_rate_tied(src);
  check_rate_tied(tgt);
  const int len = static_cast<int>(path.pairs.size());
  UtterancePair out{src, tgt};
  out.source.mel.frames.resize(static_cast<Eigen::Index>(len) * kMelPerFacial, kMelBands);
  out.target.mel.frames.resize(static_cast<Eigen::Index>(len) * kMelPerFacial, kMelBands);
  out.source.facial.fused.resize(len, kFacialDim);
  out.target.facial.fused.resize(len, kFacialDim);
  for (int k = 0; k < len; ++k) {
    const auto [i, j] = path.pairs[k];
    if (i < 0 || i >= src.facial.length() || j < 0 || j >= tgt.facial.length()) {
      throw std::out_of_range("apply_alignment: pair (" + std::to_string(i) + "," + std::to_string(j) +
                              ") out of bounds");
    }
    out.source.mel.frames.middleRows(static_cast<Eigen::Index>(k) * kMelPerFacial, kMelPerFacial) =
        src.mel.frames.middleRows(static_cast<Eigen::Index>(i) * kMelPerFacial, kMelPerFacial);
    out.target.mel.frames.middleRows(static_cast<Eigen::Index>(k) * kMelPerFacial, kMelPerFacial) =
        tgt.mel.frames.middleRows(static_cast<Eigen::Index>(j) * kMelPerFacial, kMelPerFacial);
    out.source.facial.fused.row(k) = src.facial.fused.row(i);
    out.target.facial.fused.row(k) = tgt.facial.fused.row(j);
  }
  return out;
}

nlohmann::json to_json(const AlignmentPath& path) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [i, j] : path.pairs) pairs.push_back({i, j});
  return {{"pairs", pairs}, {"total_cost", path.total_cost}};
}

AlignmentPath alignment_from_json(const nlohmann::json& j) {
  AlignmentPath path;
  for (const auto& p : j.at("pairs")) path.pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  path.total_cost = j.at("total_cost").get<double>();
  return path;
}

}  // namespace avsc
