#include "avsc/evalcca.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace avsc {

namespace {

Eigen::MatrixXd centered(const Eigen::MatrixXd& x) { return x.rowwise() - x.colwise().mean(); }

// (C + eps I)^(-1/2) for a symmetric positive semi-definite C.
Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& c, double ridge_ratio) {
  const double eps = ridge_ratio * c.diagonal().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c + eps * Eigen::MatrixXd::Identity(c.rows(), c.cols()));
  const Eigen::VectorXd d = eig.eigenvalues().cwiseMax(eps > 0 ? eps : 1e-300).cwiseSqrt().cwiseInverse();
  return eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (static_cast<double>(v.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::string to_string(Condition c) {
  switch (c) {
    case Condition::kProposed: return "proposed";
    case Condition::kBaseline: return "baseline";
    case Condition::kTarget: return "target";
  }
  return "unknown";
}

Condition condition_from_string(const std::string& s) {
  if (s == "proposed") return Condition::kProposed;
  if (s == "baseline") return Condition::kBaseline;
  if (s == "target") return Condition::kTarget;
  throw std::invalid_argument("unknown condition '" + s + "'");
}

double first_canonical_correlation(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double ridge_ratio) {
  if (x.rows() != y.rows()) throw std::invalid_argument("cca: X and Y differ in number of frames");
  const Eigen::Index t = x.rows();
  if (x.cols() == 0 || y.cols() == 0 || t <= std::max(x.cols(), y.cols()) + 1) {
    throw std::invalid_argument("insufficient frames");
  }
  const Eigen::MatrixXd xc = centered(x);
  const Eigen::MatrixXd yc = centered(y);
  const double denom = static_cast<double>(t - 1);
  const Eigen::MatrixXd cxx = xc.transpose() * xc / denom;
  const Eigen::MatrixXd cyy = yc.transpose() * yc / denom;
  if (!(cxx.trace() > 0) || !(cyy.trace() > 0)) throw std::invalid_argument("cca: zero-variance input");
  const Eigen::MatrixXd cxy = xc.transpose() * yc / denom;
  const Eigen::MatrixXd m = inverse_sqrt(cxx, ridge_ratio) * cxy * inverse_sqrt(cyy, ridge_ratio);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return std::clamp(svd.singularValues()(0), 0.0, 1.0);
}

Eigen::MatrixXd principal_scores(const Eigen::MatrixXd& x, int k) {
  const Eigen::MatrixXd xc = centered(x);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(xc, Eigen::ComputeThinU);
  const int keep = std::min<int>(k, static_cast<int>(svd.singularValues().size()));
  return svd.matrixU().leftCols(keep) * svd.singularValues().head(keep).asDiagonal();
}

EvalFeatures eval_features(const AudioClip& waveform, const FeatureMatrix& keypoints) {
  if (waveform.samples.empty() || keypoints.rows() == 0) throw std::invalid_argument("eval_features: empty input");
  if (keypoints.cols() != kKeypointDim) throw std::invalid_argument("eval_features: keypoints must be T x 140");
  const MelSpectrogram mel = extract_mel(waveform, kEvalWindowMs, kEvalHopMs);
  const Eigen::Index t = std::min<Eigen::Index>(mel.frames.rows(), keypoints.rows());
  EvalFeatures f;
  f.mel = mel.frames.topRows(t).cast<double>();
  f.lips = keypoints.topRows(t).middleCols(2 * kLipFirstPoint, kLipDim).cast<double>();
  return f;
}

double utterance_correlation(const EvalFeatures& f, const EvalOptions& opts) {
  return first_canonical_correlation(principal_scores(f.mel, opts.mel_components),
                                     principal_scores(f.lips, opts.lip_components), opts.ridge_ratio);
}

std::vector<double> CcaReport::values(Condition c) const {
  std::vector<double> v;
  for (const CcaRow& row : rows) {
    if (row.condition == c) v.push_back(row.r);
  }
  return v;
}

std::vector<ConditionSummary> CcaReport::summary() const {
  std::vector<ConditionSummary> out;
  for (Condition c : {Condition::kProposed, Condition::kBaseline, Condition::kTarget}) {
    const std::vector<double> v = values(c);
    if (v.empty()) continue;
    ConditionSummary s;
    s.condition = c;
    s.count = static_cast<int>(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    s.median = quantile(v, 0.5);
    s.q25 = quantile(v, 0.25);
    s.q75 = quantile(v, 0.75);
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    out.push_back(s);
  }
  return out;
}

double rank_sum_p_greater(const std::vector<double>& a, const std::vector<double>& b) {
  const int n1 = static_cast<int>(a.size());
  const int n2 = static_cast<int>(b.size());
  if (n1 == 0 || n2 == 0) throw std::invalid_argument("rank-sum test needs two non-empty samples");
  const int n = n1 + n2;

  std::vector<std::pair<double, int>> pooled;  // value, group (0 = a)
  for (double v : a) pooled.emplace_back(v, 0);
  for (double v : b) pooled.emplace_back(v, 1);
  std::sort(pooled.begin(), pooled.end());
  // doubled mid-ranks are integers
  std::vector<int> rank2(n);
  double tie_term = 0;
  for (int i = 0; i < n;) {
    int j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    for (int k = i; k < j; ++k) rank2[k] = i + j + 1;  // 2 * mean of ranks i+1..j
    const double size = j - i;
    tie_term += size * size * size - size;
    i = j;
  }
  int observed = 0;
  for (int k = 0; k < n; ++k) {
    if (pooled[k].second == 0) observed += rank2[k];
  }

  if (tie_term == static_cast<double>(n) * n * n - n) return 1.0;  // all values equal

  if (n <= 200) {
    // count[k][s]: number of k-subsets with doubled rank sum s
    const int max_sum = std::accumulate(rank2.begin(), rank2.end(), 0);
    std::vector<std::vector<double>> count(n1 + 1, std::vector<double>(max_sum + 1, 0.0));
    count[0][0] = 1.0;
    for (int item = 0; item < n; ++item) {
      for (int k = std::min(item + 1, n1); k >= 1; --k) {
        auto& dst = count[k];
        const auto& src = count[k - 1];
        for (int s = max_sum; s >= rank2[item]; --s) dst[s] += src[s - rank2[item]];
      }
    }
    double total = 0, tail = 0;
    for (int s = 0; s <= max_sum; ++s) {
      total += count[n1][s];
      if (s >= observed) tail += count[n1][s];
    }
    return std::clamp(tail / total, 0.0, 1.0);
  }

  const double w = observed / 2.0;
  const double mean = n1 * (n + 1) / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (static_cast<double>(n) * (n - 1)));
  const double z = (w - mean - 0.5) / std::sqrt(var);
  return std::clamp(0.5 * std::erfc(z / std::sqrt(2.0)), 0.0, 1.0);
}

ConditionComparison compare_conditions(const std::map<Condition, std::vector<double>>& by_condition) {
  if (by_condition.size() < 2) throw std::invalid_argument("compare_conditions: need at least two conditions");
  for (const auto& [c, v] : by_condition) {
    if (v.size() < 10) {
      throw std::invalid_argument("compare_conditions: condition " + to_string(c) + " has " +
                                  std::to_string(v.size()) + " utterances, need >= 10");
    }
  }
  CcaReport pooled;
  for (const auto& [c, v] : by_condition) {
    for (double r : v) pooled.rows.push_back({"", c, r});
  }
  ConditionComparison out;
  out.summaries = pooled.summary();
  auto sorted = out.summaries;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& x, const auto& y) { return x.mean > y.mean; });
  for (const auto& s : sorted) out.ordering.push_back(s.condition);

  const std::pair<Condition, Condition> order[] = {{Condition::kProposed, Condition::kBaseline},
                                                   {Condition::kTarget, Condition::kProposed},
                                                   {Condition::kTarget, Condition::kBaseline}};
  for (const auto& [first, second] : order) {
    const auto fa = by_condition.find(first);
    const auto fb = by_condition.find(second);
    if (fa == by_condition.end() || fb == by_condition.end()) continue;
    PairComparison p;
    p.first = first;
    p.second = second;
    p.mean_first = std::accumulate(fa->second.begin(), fa->second.end(), 0.0) / fa->second.size();
    p.mean_second = std::accumulate(fb->second.begin(), fb->second.end(), 0.0) / fb->second.size();
    p.difference = p.mean_first - p.mean_second;
    p.p_greater = rank_sum_p_greater(fa->second, fb->second);
    out.pairs.push_back(p);
  }
  return out;
}

void write_report_csv(const std::filesystem::path& path, const CcaReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "utterance_id,condition,r\n";
  for (const CcaRow& row : report.rows) out << row.utterance_id << ',' << to_string(row.condition) << ',' << row.r << '\n';
}

CcaReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  CcaReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, cond, r;
    std::getline(ss, id, ',');
    std::getline(ss, cond, ',');
    std::getline(ss, r, ',');
    report.rows.push_back({id, condition_from_string(cond), std::stod(r)});
  }
  return report;
}

nlohmann::json to_json(const ConditionComparison& cmp) {
  nlohmann::json j;
  for (const auto& s : cmp.summaries) {
    j["conditions"][to_string(s.condition)] = {{"count", s.count}, {"mean", s.mean},     {"median", s.median},
                                               {"q25", s.q25},     {"q75", s.q75},       {"min", s.min},
                                               {"max", s.max}};
  }
  for (Condition c : cmp.ordering) j["ordering"].push_back(to_string(c));
  for (const auto& p : cmp.pairs) {
    j["comparisons"].push_back({{"first", to_string(p.first)},
                                {"second", to_string(p.second)},
                                {"mean_first", p.mean_first},
                                {"mean_second", p.mean_second},
                                {"difference", p.difference},
                                {"p_one_sided", p.p_greater}});
  }
  return j;
}

void write_histogram_csv(const std::filesystem::path& path, const CcaReport& report) {
  constexpr int kBins = 20;
  const Condition conds[] = {Condition::kProposed, Condition::kBaseline, Condition::kTarget};
  std::map<Condition, std::vector<int>> counts;
  for (Condition c : conds) counts[c].assign(kBins, 0);
  for (const CcaRow& row : report.rows) {
    const int bin = std::clamp(static_cast<int>(std::floor(row.r / 0.05)), 0, kBins - 1);
    ++counts[row.condition][bin];
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "bin_lo,bin_hi,proposed,baseline,target\n";
  for (int b = 0; b < kBins; ++b) {
    out << b * 0.05 << ',' << (b + 1) * 0.05;
    for (Condition c : conds) out << ',' << counts[c][b];
    out << '\n';
  }
}

}  // namespace avsc
