#pragma once

#include "avsc/avdata.hpp"

#include <json.hpp>

#include <utility>
#include <vector>

namespace avsc {

/// Eight consecutive mel frames bundled with the facial frame they share.
struct TiedFrame {
  FeatureMatrix acoustic;    // 8 x 80
  Eigen::RowVectorXf facial;  // 4236
};

struct AlignmentPath {
  std::vector<std::pair<int, int>> pairs;
  double total_cost = 0.0;
};

/// Source and target streams of equal (tied) length for one parallel sentence.
struct UtterancePair {
  UtteranceFeatures source;
  UtteranceFeatures target;
};

std::vector<TiedFrame> tied_frames(const UtteranceFeatures& u);

/// Dimension-averaged L2 distance of the 640 acoustic values plus that of the
/// 4236 facial values.
double frame_distance(const TiedFrame& a, const TiedFrame& b);

/// Minimum-cost monotone alignment under steps (1,0), (0,1), (1,1). Ties in
/// the backtrace prefer the diagonal, then (1,0), then (0,1).
AlignmentPath dtw_align(const std::vector<TiedFrame>& src, const std::vector<TiedFrame>& tgt);

/// Sum of frame distances along the path, accumulated from (0, 0) forward.
double path_cost(const std::vector<std::pair<int, int>>& pairs, const std::vector<TiedFrame>& src,
                 const std::vector<TiedFrame>& tgt);

/// Throws unless the path runs (0,0) -> (n-1, m-1) with unit monotone steps.
void validate_path(const AlignmentPath& path, int n, int m);

/// Expands the path into equal-length streams by repeating tied frames.
UtterancePair apply_alignment(const AlignmentPath& path, const UtteranceFeatures& src,
                              const UtteranceFeatures& tgt);

nlohmann::json to_json(const AlignmentPath& path);
AlignmentPath alignment_from_json(const nlohmann::json& j);

}  // namespace avsc
