#include <doctest.h>

#include "avsc/align.hpp"
#include "avsc/synth.hpp"
#include "oracles.hpp"

#include <random>

using namespace avsc;

namespace {

std::vector<TiedFrame> random_frames(int n, std::mt19937_64& rng, int levels = 0) {
  std::normal_distribution<float> g;
  std::uniform_int_distribution<int> q(0, levels);
  std::vector<TiedFrame> out(n);
  for (TiedFrame& f : out) {
    f.acoustic.resize(kMelPerFacial, kMelBands);
    f.facial.resize(kFacialDim);
    for (Eigen::Index i = 0; i < f.acoustic.size(); ++i) f.acoustic.data()[i] = levels ? q(rng) : g(rng);
    for (Eigen::Index i = 0; i < f.facial.size(); ++i) f.facial(i) = levels ? q(rng) : g(rng);
  }
  return out;
}

}  // namespace

TEST_CASE("frame distance averages L2 over each block") {
  TiedFrame a, b;
  a.acoustic = FeatureMatrix::Zero(kMelPerFacial, kMelBands);
  b.acoustic = FeatureMatrix::Constant(kMelPerFacial, kMelBands, 2.0f);
  a.facial = Eigen::RowVectorXf::Zero(kFacialDim);
  b.facial = Eigen::RowVectorXf::Zero(kFacialDim);
  b.facial(0) = 3.0f;
  const double expected = std::sqrt(640.0 * 4.0) / 640.0 + 3.0 / kFacialDim;
  CHECK(frame_distance(a, b) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(frame_distance(a, a) == 0.0);
}

TEST_CASE("dtw matches exhaustive path enumeration") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> len(1, 6);
  for (int trial = 0; trial < 40; ++trial) {
    const auto src = random_frames(len(rng), rng, trial % 2 ? 1 : 0);
    const auto tgt = random_frames(len(rng), rng, trial % 2 ? 1 : 0);
    const AlignmentPath path = dtw_align(src, tgt);
    CHECK_NOTHROW(validate_path(path, static_cast<int>(src.size()), static_cast<int>(tgt.size())));
    CHECK(path.total_cost == avsc::testing::enumerate_min_path_cost(src, tgt));
    CHECK(path.total_cost == path_cost(path.pairs, src, tgt));
  }
}

TEST_CASE("identical sequences align on the diagonal") {
  std::mt19937_64 rng(8);
  const auto s = random_frames(5, rng);
  const AlignmentPath path = dtw_align(s, s);
  REQUIRE(path.pairs.size() == 5);
  for (int k = 0; k < 5; ++k) CHECK(path.pairs[k] == std::make_pair(k, k));
  CHECK(path.total_cost == 0.0);
}

TEST_CASE("equal-cost ties prefer the diagonal step") {
  std::mt19937_64 rng(9);
  // all frames identical: every path costs 0
  auto one = random_frames(1, rng);
  std::vector<TiedFrame> src(3, one[0]), tgt(5, one[0]);
  const AlignmentPath path = dtw_align(src, tgt);
  const std::vector<std::pair<int, int>> expected{{0, 0}, {0, 1}, {0, 2}, {1, 3}, {2, 4}};
  CHECK(path.pairs == expected);
}

TEST_CASE("path validation") {
  AlignmentPath p;
  CHECK_THROWS_AS(validate_path(p, 2, 2), std::invalid_argument);
  p.pairs = {{0, 0}, {1, 1}};
  CHECK_NOTHROW(validate_path(p, 2, 2));
  CHECK_THROWS_AS(validate_path(p, 3, 2), std::invalid_argument);
  p.pairs = {{0, 0}, {0, 0}, {1, 1}};
  CHECK_THROWS_AS(validate_path(p, 2, 2), std::invalid_argument);
  p.pairs = {{0, 0}, {2, 2}};
  CHECK_THROWS_AS(validate_path(p, 3, 3), std::invalid_argument);
  p.pairs = {{1, 0}, {1, 1}};
  CHECK_THROWS_AS(validate_path(p, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(dtw_align({}, {}), std::invalid_argument);
}

TEST_CASE("alignment expands to equal tied streams and round-trips through JSON") {
  SynthConfig sc;
  sc.min_duration_s = 2.0;
  sc.max_duration_s = 2.5;
  const ParallelCorpus c = synth_parallel_corpus(11, 1, sc);
  const AlignmentPath path = dtw_align(tied_frames(c.source[0]), tied_frames(c.target[0]));
  validate_path(path, c.source[0].facial.length(), c.target[0].facial.length());
  const UtterancePair pair = apply_alignment(path, c.source[0], c.target[0]);
  const int len = static_cast<int>(path.pairs.size());
  CHECK(pair.source.facial.length() == len);
  CHECK(pair.target.facial.length() == len);
  CHECK(pair.source.mel.length() == 8 * len);
  CHECK(pair.target.mel.length() == 8 * len);
  const auto [i, j] = path.pairs[len / 2];
  CHECK(pair.target.facial.fused.row(len / 2) == c.target[0].facial.fused.row(j));
  CHECK(pair.source.mel.frames.row(8 * (len / 2) + 3) == c.source[0].mel.frames.row(8 * i + 3));

  const AlignmentPath back = alignment_from_json(nlohmann::json::parse(to_json(path).dump()));
  CHECK(back.pairs == path.pairs);
  CHECK(back.total_cost == path.total_cost);
}
