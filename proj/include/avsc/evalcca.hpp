#pragma once

#include "avsc/avdata.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace avsc {

enum class Condition { kProposed, kBaseline, kTarget };

std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);

/// Relative ridge added to covariance diagonals: eps = ratio * mean(diag).
inline constexpr double kDefaultCcaRidge = 1e-10;

/// Largest canonical correlation between the column spaces of X and Y
/// (rows are observations). Columns are centered internally.
double first_canonical_correlation(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                   double ridge_ratio = kDefaultCcaRidge);

/// Scores of the top `k` principal components of the centered columns.
Eigen::MatrixXd principal_scores(const Eigen::MatrixXd& x, int k);

/// Mel spectrum (40 ms window and hop) and the 40 lip-keypoint channels on a
/// shared 25 fps clock, trimmed to a common length.
struct EvalFeatures {
  Eigen::MatrixXd mel;   // T x 80
  Eigen::MatrixXd lips;  // T x 40
};

EvalFeatures eval_features(const AudioClip& waveform, const FeatureMatrix& keypoints);

struct EvalOptions {
  int mel_components = 20;
  int lip_components = 20;
  double ridge_ratio = kDefaultCcaRidge;
};

/// First canonical correlation after projecting each stream onto its top
/// principal components.
double utterance_correlation(const EvalFeatures& f, const EvalOptions& opts = {});

struct CcaRow {
  std::string utterance_id;
  Condition condition = Condition::kProposed;
  double r = 0.0;
};

struct ConditionSummary {
  Condition condition = Condition::kProposed;
  int count = 0;
  double mean = 0, median = 0, q25 = 0, q75 = 0, min = 0, max = 0;
};

struct CcaReport {
  std::vector<CcaRow> rows;

  std::vector<double> values(Condition c) const;
  std::vector<ConditionSummary> summary() const;
};

/// One-sided Wilcoxon rank-sum test of "a tends to exceed b". Uses the exact
/// permutation distribution of mid-rank sums for pooled sizes up to 200 and
/// the tie-corrected normal approximation beyond.
double rank_sum_p_greater(const std::vector<double>& a, const std::vector<double>& b);

struct PairComparison {
  Condition first = Condition::kProposed;
  Condition second = Condition::kBaseline;
  double mean_first = 0, mean_second = 0;
  double difference = 0;  // mean_first - mean_second
  double p_greater = 1;   // one-sided p for first > second
};

struct ConditionComparison {
  std::vector<ConditionSummary> summaries;
  std::vector<Condition> ordering;  // by decreasing mean r
  std::vector<PairComparison> pairs;
};

/// Needs at least two conditions with >= 10 utterances each.
ConditionComparison compare_conditions(const std::map<Condition, std::vector<double>>& by_condition);

void write_report_csv(const std::filesystem::path& path, const CcaReport& report);
CcaReport read_report_csv(const std::filesystem::path& path);
nlohmann::json to_json(const ConditionComparison& cmp);
/// Counts per 0.05-wide bin of r, one column per condition.
void write_histogram_csv(const std::filesystem::path& path, const CcaReport& report);

}  // namespace avsc
