#pragma once

#include "avsc/evalcca.hpp"
#include "avsc/imagegen.hpp"
#include "avsc/synth.hpp"
#include "avsc/transformnet.hpp"
#include "avsc/vocoder.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace avsc {

enum class Preset { kPaper, kDesk };

std::string to_string(Preset p);
Preset preset_from_string(const std::string& s);

/// Run-directory relative locations of each artifact family.
struct RunPaths {
  std::string corpus = "corpus";
  std::string alignments = "alignments";
  std::string checkpoints = "checkpoints";
  std::string outputs = "outputs";
  std::string reports = "reports";
  std::string logs = "logs";
};

struct ExperimentConfig {
  Preset preset = Preset::kPaper;
  std::uint64_t seed = 1;
  RunPaths paths;

  int train_utterances = 630;
  int test_utterances = 70;
  SynthConfig synth;

  TransformNetConfig transform;
  TransformHyper transform_hyper;

  VocoderConfig vocoder;
  VocoderHyper vocoder_hyper;
  /// Audio-only baseline vocoder; same as vocoder_hyper except epochs.
  VocoderHyper baseline_vocoder_hyper;
  double generation_temperature = 1.0;

  ImageGanConfig imagegen;
  ImageGanHyper imagegen_hyper;

  EvalOptions eval;

  /// Cited hyperparameters at full scale.
  static ExperimentConfig paper();
  /// Reduced corpus, channels and epochs for a single CPU core.
  static ExperimentConfig desk();
  static ExperimentConfig for_preset(Preset p);

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Overlays `j` on the preset named by j["preset"] (or `fallback`). Unknown
/// keys and invalid values throw std::invalid_argument.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, Preset fallback = Preset::kPaper);
ExperimentConfig load_experiment_config(const std::filesystem::path& path, Preset fallback = Preset::kPaper);

nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct StageRecord {
  std::string name;
  std::uint64_t seed = 0;
  std::string config_sha256;
  double seconds = 0;
  /// Run-directory relative path -> SHA-256.
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
};

struct RunManifest {
  std::vector<StageRecord> stages;

  const StageRecord* find(const std::string& name) const;
  /// Replaces an earlier record of the same stage and appends it last.
  void record(StageRecord rec);
  /// Throws unless every referenced artifact exists and matches its hash.
  void verify(const std::filesystem::path& run_dir) const;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
std::filesystem::path manifest_path(const std::filesystem::path& run_dir);
/// Empty manifest when the run directory has none yet.
RunManifest load_manifest(const std::filesystem::path& run_dir);
void save_manifest(const std::filesystem::path& run_dir, const RunManifest& m);

/// Stage names as used by the CLI and the manifest.
namespace stage {
inline constexpr const char* kSynthCorpus = "synth-corpus";
inline constexpr const char* kAlign = "align";
inline constexpr const char* kTrainConv = "train-conv";
inline constexpr const char* kTrainVocoder = "train-vocoder";
inline constexpr const char* kTrainImagegen = "train-imagegen";
inline constexpr const char* kConvert = "convert";
inline constexpr const char* kRunBaseline = "run-baseline";
inline constexpr const char* kEvaluate = "evaluate";
}  // namespace stage

/// Per-stage seed derived from the experiment seed and the stage name.
std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage_name);

/// Progress messages; null silences them.
void set_pipeline_log(std::ostream* os);

StageRecord cmd_synth_corpus(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
StageRecord cmd_align(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
StageRecord cmd_train_conv(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
StageRecord cmd_train_vocoder(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
StageRecord cmd_train_imagegen(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
StageRecord cmd_convert(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
StageRecord cmd_run_baseline(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
StageRecord cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
/// Every stage in order.
void cmd_run_all(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);

/// Utterance ids of a corpus split ("train" or "test") in generation order.
std::vector<std::string> corpus_ids(const ExperimentConfig& cfg, const std::string& split);

struct EvaluationResult {
  CcaReport report;
  std::optional<ConditionComparison> comparison;
};

/// Reads the evaluation artifacts written by cmd_evaluate.
EvaluationResult load_evaluation(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);

/// Per-utterance side-by-side r values and summaries, for inspecting a
/// comparison whose ordering came out unexpectedly.
std::string distribution_diagnostic(const CcaReport& report);

}  // namespace avsc
