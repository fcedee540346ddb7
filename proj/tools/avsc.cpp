#include "avsc/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  std::string out = "run";
};

// Precedence: --config file, else the run directory's saved config, else the
// preset; --seed overrides last.
avsc::ExperimentConfig resolve(const CommonFlags& f) {
  const avsc::Preset preset = f.preset ? avsc::preset_from_string(*f.preset) : avsc::Preset::kDesk;
  avsc::ExperimentConfig cfg;
  const fs::path saved = fs::path(f.out) / "config.json";
  if (!f.config.empty()) {
    cfg = avsc::load_experiment_config(f.config, preset);
  } else if (!f.preset && fs::exists(saved)) {
    cfg = avsc::load_experiment_config(saved, preset);
  } else {
    cfg = avsc::ExperimentConfig::for_preset(preset);
  }
  if (f.seed) cfg.seed = *f.seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audiovisual speaker conversion toolkit"};
  app.require_subcommand(1);
  CommonFlags flags;

  using Command = avsc::StageRecord (*)(const avsc::ExperimentConfig&, const fs::path&);
  const std::vector<std::tuple<std::string, std::string, Command>> stages = {
      {avsc::stage::kSynthCorpus, "generate the synthetic parallel corpus", avsc::cmd_synth_corpus},
      {avsc::stage::kAlign, "DTW-align training utterance pairs", avsc::cmd_align},
      {avsc::stage::kTrainConv, "train the audiovisual transformation network", avsc::cmd_train_conv},
      {avsc::stage::kTrainVocoder, "train the conditional waveform model", avsc::cmd_train_vocoder},
      {avsc::stage::kTrainImagegen, "train the image generator", avsc::cmd_train_imagegen},
      {avsc::stage::kConvert, "convert test utterances to WAV and PNG frames", avsc::cmd_convert},
      {avsc::stage::kRunBaseline, "train and run the separate audio-only / visual-only baseline",
       avsc::cmd_run_baseline},
      {avsc::stage::kEvaluate, "CCA audio-lip correlation report", avsc::cmd_evaluate},
  };

  auto add_flags = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON config overlaid on the preset")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "experiment seed");
    sub->add_option("--preset", flags.preset, "scale preset")->check(CLI::IsMember({"paper", "desk"}));
    sub->add_option("--out", flags.out, "run directory")->capture_default_str();
  };

  std::function<void()> action;
  for (const auto& [name, help, fn] : stages) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_flags(sub);
    sub->callback([&, fn = fn] { action = [&, fn] { fn(resolve(flags), flags.out); }; });
  }

  CLI::App* all = app.add_subcommand("run-all", "every stage in order");
  add_flags(all);
  all->callback([&] { action = [&] { avsc::cmd_run_all(resolve(flags), flags.out); }; });

  CLI::App* show = app.add_subcommand("show-config", "print the resolved configuration");
  add_flags(show);
  show->callback([&] { action = [&] { std::cout << avsc::to_json(resolve(flags)).dump(2) << '\n'; }; });

  CLI::App* verify = app.add_subcommand("verify", "check every artifact in the run manifest");
  verify->add_option("--out", flags.out, "run directory")->capture_default_str();
  verify->callback([&] {
    action = [&] {
      avsc::load_manifest(flags.out).verify(flags.out);
      std::cout << "manifest ok\n";
    };
  });

  CLI11_PARSE(app, argc, argv);
  try {
    action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
