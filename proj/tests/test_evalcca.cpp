#include <doctest.h>

#include "avsc/evalcca.hpp"
#include "avsc/synth.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace avsc;
using avsc::testing::pearson;

namespace {

Eigen::MatrixXd normal_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Eigen::MatrixXd invertible(int p, std::mt19937_64& rng) {
  // well-conditioned random map: identity plus a modest perturbation
  return Eigen::MatrixXd::Identity(p, p) + 0.4 * normal_matrix(p, p, rng);
}

}  // namespace

TEST_CASE("three-frame scalar case equals the absolute Pearson correlation") {
  Eigen::MatrixXd x(3, 1), y(3, 1);
  x << 1.0, 2.0, 4.0;
  y << 3.0, -1.0, 0.5;
  // T must exceed max(p, q) + 1
  const double r = first_canonical_correlation(x, y);
  CHECK(r == doctest::Approx(std::abs(pearson(x.col(0), y.col(0)))).epsilon(1e-10));
}

TEST_CASE("exact linear relations give r = 1") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd x = normal_matrix(60, 5, rng);
    const Eigen::MatrixXd y = x * normal_matrix(5, 4, rng);
    CHECK(std::abs(first_canonical_correlation(x, y) - 1.0) <= 1e-8);
    CHECK(std::abs(first_canonical_correlation(x, x) - 1.0) <= 1e-8);
  }
}

TEST_CASE("agrees with brute-force projection search") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd x = normal_matrix(40, 2, rng);
    Eigen::MatrixXd y = normal_matrix(40, 2, rng) + 0.5 * x * normal_matrix(2, 2, rng);
    const double oracle = avsc::testing::projection_search_correlation(x, y);
    CHECK(std::abs(first_canonical_correlation(x, y) - oracle) <= 1e-3);
  }
}

TEST_CASE("invariant to invertible affine maps and to swapping streams") {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd x = normal_matrix(80, 4, rng);
  const Eigen::MatrixXd y = normal_matrix(80, 3, rng) + 0.3 * x.leftCols(3);
  const double r = first_canonical_correlation(x, y);
  const Eigen::RowVectorXd shift = 5.0 * Eigen::RowVectorXd::Random(4);
  const Eigen::MatrixXd xa = (x * invertible(4, rng) * 7.0).rowwise() + shift;
  const Eigen::MatrixXd ya = y * invertible(3, rng) * 0.01;
  CHECK(std::abs(first_canonical_correlation(xa, ya) - r) <= 1e-6);
  CHECK(std::abs(first_canonical_correlation(y, x) - r) <= 1e-12);
}

TEST_CASE("shuffled rows fall to the small-sample null") {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd x = normal_matrix(200, 2, rng);
  const Eigen::MatrixXd y = x + 0.2 * normal_matrix(200, 2, rng);
  CHECK(first_canonical_correlation(x, y) > 0.9);
  double mean = 0;
  const int trials = 30;
  std::vector<int> order(200);
  for (int i = 0; i < 200; ++i) order[i] = i;
  for (int t = 0; t < trials; ++t) {
    std::shuffle(order.begin(), order.end(), rng);
    Eigen::MatrixXd ys(200, 2);
    for (int i = 0; i < 200; ++i) ys.row(i) = y.row(order[i]);
    mean += first_canonical_correlation(x, ys) / trials;
  }
  // null first canonical correlation for p = q = 2, T = 200 sits near 0.1
  CHECK(mean < 0.2);
}

TEST_CASE("errors") {
  std::mt19937_64 rng(5);
  CHECK_THROWS_WITH_AS(first_canonical_correlation(normal_matrix(4, 3, rng), normal_matrix(4, 2, rng)),
                       "insufficient frames", std::invalid_argument);
  CHECK_THROWS_AS(first_canonical_correlation(Eigen::MatrixXd::Ones(10, 2), normal_matrix(10, 2, rng)),
                  std::invalid_argument);
  AudioClip empty;
  CHECK_THROWS_AS(eval_features(empty, FeatureMatrix::Zero(5, kKeypointDim)), std::invalid_argument);
}

TEST_CASE("evaluation features share a 40 ms clock") {
  SynthConfig sc;
  sc.min_duration_s = sc.max_duration_s = 2.0;
  const ParallelCorpus c = synth_parallel_corpus(3, 1, sc);
  const auto& u = c.target[0];
  const FeatureMatrix kp = u.facial.keypoints().topRows(50);
  AudioClip clip = c.target_clips[0];
  clip.samples.resize(32000);
  const EvalFeatures f = eval_features(clip, kp);
  CHECK(f.mel.rows() == 50);
  CHECK(f.lips.rows() == 50);
  CHECK(f.mel.cols() == 80);
  CHECK(f.lips.cols() == 40);
  CHECK(f.lips(7, 0) == doctest::Approx(kp(7, 96)));
  CHECK(f.lips(7, 39) == doctest::Approx(kp(7, 135)));

  const EvalFeatures shorter = eval_features(clip, kp.topRows(49));
  CHECK(shorter.mel.rows() == 49);
  CHECK(shorter.lips.rows() == 49);

  const double r = utterance_correlation(f, {5, 5});
  CHECK(r >= 0.0);
  CHECK(r <= 1.0);
}

TEST_CASE("rank-sum test") {
  const std::vector<double> hi(10, 0.9), lo(10, 0.1);
  // exact tail: one of C(20, 10) equally likely assignments
  double c20_10 = 1;
  for (int i = 1; i <= 10; ++i) c20_10 = c20_10 * (10 + i) / i;
  CHECK(rank_sum_p_greater(hi, lo) == doctest::Approx(1.0 / c20_10));
  CHECK(rank_sum_p_greater(hi, lo) < 0.01);
  CHECK(rank_sum_p_greater(lo, hi) == doctest::Approx(1.0));

  std::vector<double> same{0.1, 0.4, 0.3, 0.8, 0.5, 0.2, 0.9, 0.7, 0.6, 0.35};
  CHECK(rank_sum_p_greater(same, same) >= 0.5);

  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> level(0, 5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(6), b(7);
    for (double& v : a) v = 0.1 * level(rng) + 0.05;
    for (double& v : b) v = 0.1 * level(rng);
    if (trial % 2) b[0] = a[0];
    CHECK(rank_sum_p_greater(a, b) == doctest::Approx(avsc::testing::enumerate_rank_sum_p(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("condition comparison") {
  std::map<Condition, std::vector<double>> by;
  by[Condition::kProposed] = std::vector<double>(10, 0.9);
  CHECK_THROWS_AS(compare_conditions(by), std::invalid_argument);
  by[Condition::kBaseline] = std::vector<double>(9, 0.1);
  CHECK_THROWS_AS(compare_conditions(by), std::invalid_argument);
  by[Condition::kBaseline].push_back(0.1);
  by[Condition::kTarget] = std::vector<double>(10, 0.95);
  const ConditionComparison cmp = compare_conditions(by);
  REQUIRE(cmp.ordering.size() == 3);
  CHECK(cmp.ordering[0] == Condition::kTarget);
  CHECK(cmp.ordering[1] == Condition::kProposed);
  CHECK(cmp.ordering[2] == Condition::kBaseline);
  REQUIRE(!cmp.pairs.empty());
  CHECK(cmp.pairs[0].first == Condition::kProposed);
  CHECK(cmp.pairs[0].difference == doctest::Approx(0.8));
  CHECK(cmp.pairs[0].p_greater < 0.01);

  std::map<Condition, std::vector<double>> same;
  same[Condition::kProposed] = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.1, 0.25, 0.45};
  same[Condition::kBaseline] = same[Condition::kProposed];
  const ConditionComparison eq = compare_conditions(same);
  CHECK(eq.pairs[0].difference == 0.0);
  CHECK(eq.pairs[0].p_greater >= 0.5);
}

TEST_CASE("report serialization") {
  CcaReport rep;
  for (int i = 0; i < 12; ++i) {
    rep.rows.push_back({"utt" + std::to_string(i), Condition::kProposed, 0.05 * i + 0.01});
    rep.rows.push_back({"utt" + std::to_string(i), Condition::kTarget, 1.0 / (i + 2)});
  }
  const auto dir = std::filesystem::temp_directory_path();
  write_report_csv(dir / "avsc_cca.csv", rep);
  const CcaReport back = read_report_csv(dir / "avsc_cca.csv");
  REQUIRE(back.rows.size() == rep.rows.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    CHECK(back.rows[i].utterance_id == rep.rows[i].utterance_id);
    CHECK(back.rows[i].condition == rep.rows[i].condition);
    CHECK(back.rows[i].r == rep.rows[i].r);
  }
  const auto sum = rep.summary();
  REQUIRE(sum.size() == 2);
  CHECK(sum[0].count == 12);
  CHECK(sum[0].min == doctest::Approx(0.01));
  CHECK(sum[0].max == doctest::Approx(0.56));
  CHECK(sum[0].median == doctest::Approx(0.285));
  write_histogram_csv(dir / "avsc_hist.csv", rep);
  CHECK(std::filesystem::file_size(dir / "avsc_hist.csv") > 0);
  std::filesystem::remove(dir / "avsc_cca.csv");
  std::filesystem::remove(dir / "avsc_hist.csv");
}
