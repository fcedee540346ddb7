#include <doctest.h>

#include "avsc/io.hpp"
#include "avsc/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace avsc;
namespace fs = std::filesystem;

namespace {

// Desk preset on a 20-utterance corpus with very short training.
ExperimentConfig smoke_config() {
  ExperimentConfig c = ExperimentConfig::desk();
  c.seed = 7;
  c.train_utterances = 10;
  c.test_utterances = 10;
  c.synth.min_duration_s = 2.0;
  c.synth.max_duration_s = 2.4;
  c.transform_hyper.epochs = 2;
  c.vocoder_hyper.epochs = 2;
  c.baseline_vocoder_hyper.epochs = 1;
  c.imagegen_hyper.epochs = 1;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("avsc_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

struct Quiet {
  Quiet() { set_pipeline_log(nullptr); }
  ~Quiet() { set_pipeline_log(&std::clog); }
};

}  // namespace

TEST_CASE("paper preset carries the cited hyperparameters") {
  const ExperimentConfig c = ExperimentConfig::paper();
  const nlohmann::json j = to_json(c);
  CHECK(j["transformnet"]["train"]["lr"] == 1e-4);
  CHECK(j["transformnet"]["train"]["batch"] == 64);
  CHECK(j["transformnet"]["train"]["epochs"] == 600);
  CHECK(j["transformnet"]["model"]["acoustic_loss_weight"] == 10.0);
  CHECK(j["imagegen"]["train"]["epochs"] == 30);
  CHECK(j["imagegen"]["train"]["batch"] == 64);
  CHECK(j["imagegen"]["model"]["lr_g"] == 1e-3);
  CHECK(j["imagegen"]["model"]["lr_d"] == 1e-5);
  CHECK(j["imagegen"]["model"]["l1_weight"] == 10.0);
  CHECK(j["vocoder"]["train"]["epochs"] == 199);
  CHECK(j["vocoder"]["baseline_train"]["epochs"] == 100);
  CHECK(j["corpus"]["train_utterances"] == 630);
  CHECK(j["corpus"]["test_utterances"] == 70);
  CHECK(c.vocoder.n_dilated_layers == 40);
  CHECK(c.imagegen.image_side() == 256);
  CHECK(c.transform.audio_factor() == 8);
}

TEST_CASE("config files overlay a preset and are validated") {
  const ExperimentConfig desk = ExperimentConfig::desk();
  CHECK(to_json(experiment_config_from_json(to_json(desk))) == to_json(desk));
  CHECK(to_json(experiment_config_from_json(to_json(ExperimentConfig::paper()))) == to_json(ExperimentConfig::paper()));

  const ExperimentConfig c =
      experiment_config_from_json(nlohmann::json{{"preset", "desk"}, {"seed", 5}, {"corpus", {{"test_utterances", 12}}}});
  CHECK(c.preset == Preset::kDesk);
  CHECK(c.seed == 5);
  CHECK(c.test_utterances == 12);
  CHECK(c.train_utterances == desk.train_utterances);

  CHECK_THROWS_WITH_AS(experiment_config_from_json(nlohmann::json{{"bogus", 1}}), "unknown config key 'bogus'",
                       std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json{{"transformnet", {{"train", {{"lrr", 1}}}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json{{"corpus", {{"train_utterances", 0}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json{{"transformnet", {{"train", {{"lr", "fast"}}}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json{{"preset", "huge"}}), std::invalid_argument);
}

TEST_CASE("baseline transforms use unit strides") {
  const auto [audio, visual] = make_baselines(ExperimentConfig::paper().transform);
  int product = 1;
  for (int s : audio.audio_down_strides) product *= s;
  CHECK(product == 1);
  CHECK(audio.audio_factor() == 1);
  CHECK(visual.audio_factor() == 1);
}

TEST_CASE("stages enforce their prerequisites") {
  Quiet quiet;
  const ExperimentConfig cfg = smoke_config();
  const fs::path dir = fresh_dir("missing");
  CHECK_THROWS_WITH_AS(cmd_align(cfg, dir), doctest::Contains("synth-corpus"), std::runtime_error);
  cmd_synth_corpus(cfg, dir);
  CHECK_THROWS_WITH_AS(cmd_convert(cfg, dir), doctest::Contains("train-conv"), std::runtime_error);
  CHECK_THROWS_WITH_AS(cmd_train_conv(cfg, dir), doctest::Contains("align"), std::runtime_error);

  // tampering with an upstream artifact is caught
  cmd_align(cfg, dir);
  {
    std::ofstream(dir / "alignments" / "train_0000.json", std::ios::app) << " ";
  }
  CHECK_THROWS_WITH_AS(cmd_train_conv(cfg, dir), doctest::Contains("hash"), std::runtime_error);
  CHECK_THROWS_AS(load_manifest(dir).verify(dir), std::runtime_error);
  cmd_align(cfg, dir);
  fs::remove(dir / "alignments" / "train_0001.json");
  CHECK_THROWS_WITH_AS(cmd_train_conv(cfg, dir), doctest::Contains("missing"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("end-to-end smoke run is deterministic") {
  Quiet quiet;
  const ExperimentConfig cfg = smoke_config();
  const fs::path a = fresh_dir("a"), b = fresh_dir("b");
  cmd_run_all(cfg, a);

  const RunManifest ma = load_manifest(a);
  CHECK_NOTHROW(ma.verify(a));
  std::vector<std::string> names;
  for (const StageRecord& r : ma.stages) names.push_back(r.name);
  const std::vector<std::string> expected{stage::kSynthCorpus,    stage::kAlign,   stage::kTrainConv,
                                          stage::kTrainVocoder,   stage::kTrainImagegen, stage::kConvert,
                                          stage::kRunBaseline,    stage::kEvaluate};
  CHECK(names == expected);

  const EvaluationResult ev = load_evaluation(cfg, a);
  CHECK(ev.report.rows.size() == 30);
  for (Condition c : {Condition::kProposed, Condition::kBaseline, Condition::kTarget}) {
    CHECK(ev.report.values(c).size() == 10);
  }
  for (const CcaRow& row : ev.report.rows) {
    CHECK(row.r >= 0.0);
    CHECK(row.r <= 1.0);
  }
  CHECK(ev.comparison.has_value());

  // converted media: 25 fps frame list next to the waveform
  const nlohmann::json media = nlohmann::json::parse(std::ifstream(a / "outputs" / "proposed" / "test_0000" / "media.json"));
  CHECK(media["fps"] == 25.0);
  const FacialFeatureSequence conv = io::load_facial_features(a / "outputs" / "proposed" / "test_0000" / "facial.npy");
  CHECK(media["frames"].size() == static_cast<std::size_t>(conv.length()));
  const RgbImage frame = io::load_png(a / "outputs" / "proposed" / "test_0000" / "frames" / "00000.png");
  CHECK(frame.width == cfg.imagegen.image_side());

  // proposed and baseline consume the same corpus
  const StageRecord* joint = ma.find(stage::kTrainConv);
  const StageRecord* base = ma.find(stage::kRunBaseline);
  const StageRecord* corpus = ma.find(stage::kSynthCorpus);
  for (const auto& [path, hash] : corpus->outputs) {
    CHECK(joint->inputs.at(path) == hash);
    CHECK(base->inputs.at(path) == hash);
  }

  // a second run with the same config and seed reproduces every artifact
  cmd_run_all(cfg, b);
  const RunManifest mb = load_manifest(b);
  for (const StageRecord& r : ma.stages) {
    INFO("stage ", r.name);
    CHECK(mb.find(r.name)->outputs == r.outputs);
  }
  const EvaluationResult evb = load_evaluation(cfg, b);
  REQUIRE(evb.report.rows.size() == ev.report.rows.size());
  for (std::size_t i = 0; i < ev.report.rows.size(); ++i) CHECK(evb.report.rows[i].r == ev.report.rows[i].r);

  // rerunning a stage in place reproduces its hashes; removing downstream
  // artifacts leaves upstream records intact
  const auto before = ma.find(stage::kConvert)->outputs;
  fs::remove_all(a / "outputs");
  fs::remove_all(a / "reports");
  const RunManifest after_delete = load_manifest(a);
  for (const char* up : {stage::kSynthCorpus, stage::kAlign, stage::kTrainConv}) {
    for (const auto& [path, hash] : after_delete.find(up)->outputs) CHECK(io::file_sha256(a / path) == hash);
  }
  CHECK(cmd_convert(cfg, a).outputs == before);
  CHECK(cmd_align(cfg, a).outputs == ma.find(stage::kAlign)->outputs);

  fs::remove_all(a);
  fs::remove_all(b);
}
