#include "avsc/pipeline.hpp"

#include "avsc/align.hpp"
#include "avsc/io.hpp"
#include "avsc/nn/checkpoint.hpp"

#include <openssl/sha.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace avsc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ostream* g_log = &std::clog;

void log(const std::string& stage_name, const std::string& msg) {
  if (g_log) *g_log << "[" << stage_name << "] " << msg << std::endl;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  std::ostringstream out;
  for (unsigned char c : digest) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(c);
  return out.str();
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string utt_name(const std::string& split, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d", split.c_str(), i);
  return buf;
}

// ------------------------------------------------------------ layout

struct Layout {
  fs::path root;
  RunPaths paths;

  fs::path corpus() const { return root / paths.corpus; }
  fs::path speaker_dir(const std::string& split, const std::string& who) const { return corpus() / split / who; }
  fs::path wav(const std::string& split, const std::string& who, const std::string& id) const {
    return speaker_dir(split, who) / (id + ".wav");
  }
  fs::path mel(const std::string& split, const std::string& who, const std::string& id) const {
    return speaker_dir(split, who) / (id + "_mel.npy");
  }
  fs::path facial(const std::string& split, const std::string& who, const std::string& id) const {
    return speaker_dir(split, who) / (id + "_facial.npy");
  }
  fs::path alignment(const std::string& id) const { return root / paths.alignments / (id + ".json"); }
  fs::path checkpoint(const std::string& name) const { return root / paths.checkpoints / (name + ".ckpt"); }
  fs::path log_file(const std::string& name) const { return root / paths.logs / name; }
  fs::path output_dir(Condition c) const { return root / paths.outputs / to_string(c); }
  fs::path reports() const { return root / paths.reports; }
};

Layout layout(const ExperimentConfig& cfg, const fs::path& run_dir) { return {run_dir, cfg.paths}; }

std::string rel_path(const fs::path& root, const fs::path& p) { return fs::relative(p, root).generic_string(); }

void collect_files(const fs::path& dir, std::vector<fs::path>& out) {
  if (!fs::exists(dir)) return;
  std::vector<fs::path> found;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) found.push_back(e.path());
  }
  std::sort(found.begin(), found.end());
  out.insert(out.end(), found.begin(), found.end());
}

void reset_dir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

// ------------------------------------------------------------ corpus access

UtteranceFeatures load_features(const Layout& l, const std::string& split, const std::string& who,
                                const std::string& id) {
  UtteranceFeatures u;
  io::FeatureMeta meta;
  u.mel = io::load_mel(l.mel(split, who, id), &meta);
  u.facial = io::load_facial_features(l.facial(split, who, id));
  u.speaker_id = meta.speaker_id;
  u.utterance_id = id;
  check_rate_tied(u);
  return u;
}

void save_features(const fs::path& mel_path, const fs::path& facial_path, const UtteranceFeatures& u) {
  io::FeatureMeta meta;
  meta.speaker_id = u.speaker_id;
  meta.utterance_id = u.utterance_id;
  io::save_mel(mel_path, u.mel, meta);
  io::save_facial_features(facial_path, u.facial, meta);
}

std::vector<UtterancePair> load_aligned_pairs(const Layout& l, const std::vector<std::string>& ids) {
  std::vector<UtterancePair> pairs;
  pairs.reserve(ids.size());
  for (const std::string& id : ids) {
    const UtteranceFeatures src = load_features(l, "train", "source", id);
    const UtteranceFeatures tgt = load_features(l, "train", "target", id);
    const AlignmentPath path = alignment_from_json(read_json(l.alignment(id)));
    validate_path(path, src.facial.length(), tgt.facial.length());
    pairs.push_back(apply_alignment(path, src, tgt));
  }
  return pairs;
}

// ------------------------------------------------------------ stage runner

using StageBody = std::function<std::vector<fs::path>(StageRecord&)>;

StageRecord run_stage(const ExperimentConfig& cfg, const fs::path& run_dir, const std::string& name,
                      const std::vector<std::string>& required, const std::vector<std::string>& optional,
                      const StageBody& body) {
  cfg.validate();
  fs::create_directories(run_dir);
  RunManifest manifest = load_manifest(run_dir);
  const std::string config_hash = sha256_hex(to_json(cfg).dump());

  StageRecord rec;
  rec.name = name;
  rec.seed = stage_seed(cfg.seed, name);
  rec.config_sha256 = config_hash;

  auto consume = [&](const StageRecord& up) {
    for (const auto& [path, hash] : up.outputs) {
      const fs::path abs = run_dir / path;
      if (!fs::exists(abs)) {
        throw std::runtime_error("stage '" + name + "' needs the output of stage '" + up.name + "', but " + path +
                                 " is missing; rerun '" + up.name + "'");
      }
      if (io::file_sha256(abs) != hash) {
        throw std::runtime_error("stage '" + name + "' needs the output of stage '" + up.name + "', but " + path +
                                 " no longer matches its recorded hash; rerun '" + up.name + "'");
      }
      rec.inputs[path] = hash;
    }
    if (up.config_sha256 != config_hash) {
      log(name, "warning: stage '" + up.name + "' ran with a different configuration");
    }
  };
  for (const std::string& up : required) {
    const StageRecord* r = manifest.find(up);
    if (!r) {
      throw std::runtime_error("stage '" + name + "' requires stage '" + up + "' to run first (no record in " +
                               manifest_path(run_dir).string() + ")");
    }
    consume(*r);
  }
  for (const std::string& up : optional) {
    if (const StageRecord* r = manifest.find(up)) consume(*r);
  }

  const fs::path config_file = run_dir / "config.json";
  write_json(config_file, to_json(cfg));

  log(name, "start (seed " + std::to_string(rec.seed) + ")");
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<fs::path> outputs = body(rec);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const fs::path& p : outputs) rec.outputs[rel_path(run_dir, p)] = io::file_sha256(p);

  std::ostringstream done;
  done << "done in " << std::fixed << std::setprecision(1) << rec.seconds << " s, " << outputs.size()
       << " artifacts";
  log(name, done.str());

  manifest = load_manifest(run_dir);
  manifest.record(rec);
  save_manifest(run_dir, manifest);
  return rec;
}

// ------------------------------------------------------------ training helpers

std::vector<fs::path> train_transform_stage(const ExperimentConfig& cfg, const Layout& l,
                                            const std::vector<UtterancePair>& pairs, const TransformNetConfig& tcfg,
                                            std::uint64_t seed, const std::string& name, const std::string& stage_name) {
  TransformHyper hyper = cfg.transform_hyper;
  hyper.seed = seed;
  log(stage_name, "training " + name + " (" + to_string(tcfg.mode) + ") on " + std::to_string(pairs.size()) +
                      " aligned utterances");
  const TransformTrainResult r = train_transform(pairs, tcfg, hyper);
  if (!r.trace.empty()) {
    std::ostringstream msg;
    msg << name << " loss " << r.trace.front().total << " -> " << r.trace.back().total;
    log(stage_name, msg.str());
  }
  fs::create_directories(l.checkpoint(name).parent_path());
  fs::create_directories(l.log_file("x").parent_path());
  nn::save_checkpoint(l.checkpoint(name), to_checkpoint(r.params, tcfg));
  write_loss_trace_csv(l.log_file(name + "_loss.csv"), r.trace);
  return {l.checkpoint(name), l.log_file(name + "_loss.csv")};
}

std::vector<fs::path> train_vocoder_stage(const ExperimentConfig& cfg, const Layout& l, const VocoderConfig& vcfg,
                                          VocoderHyper hyper, std::uint64_t seed, const std::string& name,
                                          const std::string& stage_name) {
  hyper.seed = seed;
  std::vector<VocoderExample> examples;
  for (const std::string& id : corpus_ids(cfg, "train")) {
    const UtteranceFeatures u = load_features(l, "train", "target", id);
    examples.push_back(make_vocoder_example(vcfg, io::load_audio(l.wav("train", "target", id)), u));
  }
  log(stage_name, "training " + name + " on " + std::to_string(examples.size()) + " target clips, " +
                      std::to_string(hyper.epochs) + " epochs");
  const VocoderTrainResult r = train_vocoder(examples, vcfg, hyper);
  if (!r.trace.empty()) {
    const std::size_t n = std::min<std::size_t>(r.trace.size(), 50);
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < n; ++i) head += r.trace[i] / n, tail += r.trace[r.trace.size() - 1 - i] / n;
    std::ostringstream msg;
    msg << name << " cross-entropy " << head << " -> " << tail << " nats/sample";
    log(stage_name, msg.str());
  }
  fs::create_directories(l.checkpoint(name).parent_path());
  fs::create_directories(l.log_file("x").parent_path());
  nn::save_checkpoint(l.checkpoint(name), to_checkpoint(r.params, vcfg));
  {
    std::ofstream out(l.log_file(name + "_loss.csv"));
    out.precision(10);
    out << "step,cross_entropy\n";
    for (std::size_t i = 0; i < r.trace.size(); ++i) out << i + 1 << ',' << r.trace[i] << '\n';
  }
  return {l.checkpoint(name), l.log_file(name + "_loss.csv")};
}

std::vector<fs::path> train_imagegen_stage(const ExperimentConfig& cfg, const Layout& l, const ImageGanConfig& icfg,
                                           std::uint64_t seed, const std::string& name,
                                           const std::string& stage_name) {
  std::vector<GanExample> examples;
  for (const std::string& id : corpus_ids(cfg, "train")) {
    const UtteranceFeatures u = load_features(l, "train", "target", id);
    std::vector<RgbImage> frames;
    for (int k = 0; k < u.facial.length(); ++k) {
      frames.push_back(render_face(u.facial.keypoints().row(k), cfg.synth.target, icfg.image_side()));
    }
    auto ex = make_gan_examples(u, frames);
    examples.insert(examples.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
  }
  ImageGanHyper hyper = cfg.imagegen_hyper;
  hyper.seed = seed;
  log(stage_name, "training " + name + " on " + std::to_string(examples.size()) + " target frames");
  const ImageGanTrainResult r = train_imagegen(examples, icfg, hyper);
  if (!r.trace.empty()) {
    std::ostringstream msg;
    msg << name << " L1 " << r.trace.front().l1 << " -> " << r.trace.back().l1;
    log(stage_name, msg.str());
  }
  fs::create_directories(l.checkpoint(name).parent_path());
  fs::create_directories(l.log_file("x").parent_path());
  nn::save_checkpoint(l.checkpoint(name), to_checkpoint(r.params, icfg));
  write_gan_trace_csv(l.log_file(name + "_loss.csv"), r.trace);
  return {l.checkpoint(name), l.log_file(name + "_loss.csv")};
}

nn::Checkpoint load_stage_checkpoint(const Layout& l, const std::string& name, const std::string& kind) {
  const fs::path p = l.checkpoint(name);
  if (!fs::exists(p)) throw std::runtime_error("missing checkpoint " + p.string());
  nn::Checkpoint ck = nn::load_checkpoint(p);
  if (ck.kind != kind) throw std::runtime_error(p.string() + " holds a " + ck.kind + " model, expected " + kind);
  return ck;
}

/// Writes waveform, converted features, image frames and a media listing for one utterance.
std::vector<fs::path> write_converted(const fs::path& dir, const UtteranceFeatures& converted, const AudioClip& audio,
                                      const std::vector<RgbImage>& frames) {
  fs::create_directories(dir / "frames");
  std::vector<fs::path> out;
  io::save_wav(dir / "audio.wav", audio);
  save_features(dir / "mel.npy", dir / "facial.npy", converted);
  out.insert(out.end(), {dir / "audio.wav", dir / "mel.npy", dir / "mel.json", dir / "facial.npy", dir / "facial.json"});
  json media;
  media["audio"] = "audio.wav";
  media["fps"] = kFacialFps;
  media["frames"] = json::array();
  for (std::size_t k = 0; k < frames.size(); ++k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frames/%05zu.png", k);
    io::save_png(dir / buf, frames[k]);
    media["frames"].push_back(buf);
    out.push_back(dir / buf);
  }
  write_json(dir / "media.json", media);
  out.push_back(dir / "media.json");
  return out;
}

AudioClip vocode(const nn::Weights& params, const VocoderConfig& vcfg, const UtteranceFeatures& u,
                 std::uint64_t seed, double temperature) {
  const nn::Matrix mel = u.mel.frames.cast<double>();
  const nn::Matrix facial = vcfg.cond.facial_dim > 0 ? nn::Matrix(u.facial.fused.cast<double>()) : nn::Matrix();
  const nn::Matrix cond = build_condition(params, vcfg, mel, facial);
  GenerateOptions opts;
  opts.temperature = temperature;
  return generate(params, vcfg, cond, seed, opts);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << v;
  return out.str();
}

// ------------------------------------------------------------ JSON helpers

json speaker_to_json(const SpeakerStyle& s) {
  return {{"id", s.id},
          {"f0_hz", s.f0_hz},
          {"formant1_hz", s.formant1_hz},
          {"formant2_hz", s.formant2_hz},
          {"formant3_hz", s.formant3_hz},
          {"face_scale", s.face_scale},
          {"face_dx", s.face_dx},
          {"face_dy", s.face_dy},
          {"mouth_width", s.mouth_width},
          {"mouth_height", s.mouth_height},
          {"appearance_seed", s.appearance_seed},
          {"skin_rgb", {s.skin_r, s.skin_g, s.skin_b}}};
}

SpeakerStyle speaker_from_json(const json& j) {
  SpeakerStyle s;
  s.id = j.at("id").get<std::string>();
  s.f0_hz = j.at("f0_hz").get<double>();
  s.formant1_hz = j.at("formant1_hz").get<double>();
  s.formant2_hz = j.at("formant2_hz").get<double>();
  s.formant3_hz = j.at("formant3_hz").get<double>();
  s.face_scale = j.at("face_scale").get<double>();
  s.face_dx = j.at("face_dx").get<double>();
  s.face_dy = j.at("face_dy").get<double>();
  s.mouth_width = j.at("mouth_width").get<double>();
  s.mouth_height = j.at("mouth_height").get<double>();
  s.appearance_seed = j.at("appearance_seed").get<std::uint64_t>();
  const auto rgb = j.at("skin_rgb").get<std::vector<double>>();
  if (rgb.size() != 3) throw std::invalid_argument("skin_rgb needs three values");
  s.skin_r = rgb[0];
  s.skin_g = rgb[1];
  s.skin_b = rgb[2];
  return s;
}

json hyper_to_json(const TransformHyper& h) {
  return {{"lr", h.lr}, {"batch", h.batch}, {"epochs", h.epochs}};
}
json hyper_to_json(const VocoderHyper& h) {
  return {{"lr", h.lr}, {"epochs", h.epochs}, {"segment_frames", h.segment_frames}};
}
json hyper_to_json(const ImageGanHyper& h) { return {{"batch", h.batch}, {"epochs", h.epochs}}; }

void reject_unknown_keys(const json& given, const json& known, const std::string& where) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!known.contains(key)) throw std::invalid_argument("unknown config key '" + path + "'");
    if (value.is_object() && known.at(key).is_object()) reject_unknown_keys(value, known.at(key), path);
  }
}

}  // namespace

// ------------------------------------------------------------ config

std::string to_string(Preset p) { return p == Preset::kPaper ? "paper" : "desk"; }

Preset preset_from_string(const std::string& s) {
  if (s == "paper") return Preset::kPaper;
  if (s == "desk") return Preset::kDesk;
  throw std::invalid_argument("unknown preset '" + s + "' (expected paper or desk)");
}

ExperimentConfig ExperimentConfig::paper() {
  ExperimentConfig c;
  c.preset = Preset::kPaper;
  c.train_utterances = 630;
  c.test_utterances = 70;
  // mean sentence length 5.9 s
  c.synth.min_duration_s = 3.0;
  c.synth.max_duration_s = 8.8;
  c.transform = TransformNetConfig{};
  c.transform_hyper = TransformHyper{};
  c.transform_hyper.lr = 1e-4;
  c.transform_hyper.batch = 64;
  c.transform_hyper.epochs = 600;
  c.vocoder = VocoderConfig{};
  c.vocoder_hyper = VocoderHyper{};
  c.vocoder_hyper.epochs = 199;
  c.baseline_vocoder_hyper = c.vocoder_hyper;
  c.baseline_vocoder_hyper.epochs = 100;
  c.imagegen = ImageGanConfig{};
  c.imagegen.lr_g = 1e-3;
  c.imagegen.lr_d = 1e-5;
  c.imagegen_hyper = ImageGanHyper{};
  c.imagegen_hyper.batch = 64;
  c.imagegen_hyper.epochs = 30;
  c.eval = EvalOptions{};
  return c;
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c = paper();
  c.preset = Preset::kDesk;
  c.train_utterances = 40;
  c.test_utterances = 40;
  c.synth.min_duration_s = 2.0;
  c.synth.max_duration_s = 3.0;
  c.transform = TransformNetConfig::desk();
  c.transform_hyper.lr = 1e-3;
  c.transform_hyper.batch = 8;
  c.transform_hyper.epochs = 40;
  c.vocoder = VocoderConfig::desk();
  c.vocoder_hyper.epochs = 60;
  c.vocoder_hyper.segment_frames = 20;
  c.baseline_vocoder_hyper = c.vocoder_hyper;
  c.baseline_vocoder_hyper.epochs = 30;
  c.imagegen = ImageGanConfig::desk();
  c.imagegen_hyper.batch = 16;
  c.imagegen_hyper.epochs = 4;
  c.eval.mel_components = 5;
  c.eval.lip_components = 5;
  return c;
}

ExperimentConfig ExperimentConfig::for_preset(Preset p) { return p == Preset::kPaper ? paper() : desk(); }

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + what);
  };
  need(train_utterances >= 1, "train_utterances must be >= 1");
  need(test_utterances >= 1, "test_utterances must be >= 1");
  synth.validate();
  transform.validate();
  need(transform.mode == TransformMode::kJoint, "transform.mode must be joint (baselines are derived)");
  need(transform_hyper.lr > 0 && transform_hyper.batch >= 1 && transform_hyper.epochs >= 1,
       "transform_hyper needs lr > 0, batch >= 1, epochs >= 1");
  vocoder.validate();
  need(vocoder.cond.facial_dim > 0, "vocoder.cond.facial_dim must be > 0 for the joint model");
  for (const VocoderHyper* h : {&vocoder_hyper, &baseline_vocoder_hyper}) {
    need(h->lr > 0 && h->epochs >= 1 && h->segment_frames >= 0, "vocoder hyper needs lr > 0, epochs >= 1");
  }
  need(generation_temperature > 0, "generation_temperature must be > 0");
  imagegen.validate();
  need(imagegen.mel_frames > 0, "imagegen.mel_frames must be > 0 for the joint model");
  need(imagegen_hyper.batch >= 1 && imagegen_hyper.epochs >= 1, "imagegen_hyper needs batch, epochs >= 1");
  need(eval.mel_components >= 1 && eval.lip_components >= 1, "eval components must be >= 1");
  need(eval.ridge_ratio >= 0, "eval.ridge_ratio must be >= 0");
}

json to_json(const SynthConfig& c) {
  return {{"sample_rate", c.sample_rate},
          {"min_duration_s", c.min_duration_s},
          {"max_duration_s", c.max_duration_s},
          {"articulation_gain", c.articulation_gain},
          {"source_audio_nuisance", c.source_audio_nuisance},
          {"source_visual_nuisance", c.source_visual_nuisance},
          {"keypoint_noise", c.keypoint_noise},
          {"tempo_spread", c.tempo_spread},
          {"source", speaker_to_json(c.source)},
          {"target", speaker_to_json(c.target)}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  c.sample_rate = j.at("sample_rate").get<int>();
  c.min_duration_s = j.at("min_duration_s").get<double>();
  c.max_duration_s = j.at("max_duration_s").get<double>();
  c.articulation_gain = j.at("articulation_gain").get<double>();
  c.source_audio_nuisance = j.at("source_audio_nuisance").get<double>();
  c.source_visual_nuisance = j.at("source_visual_nuisance").get<double>();
  c.keypoint_noise = j.at("keypoint_noise").get<double>();
  c.tempo_spread = j.at("tempo_spread").get<double>();
  c.source = speaker_from_json(j.at("source"));
  c.target = speaker_from_json(j.at("target"));
  return c;
}

json to_json(const ExperimentConfig& c) {
  return {{"preset", to_string(c.preset)},
          {"seed", c.seed},
          {"paths",
           {{"corpus", c.paths.corpus},
            {"alignments", c.paths.alignments},
            {"checkpoints", c.paths.checkpoints},
            {"outputs", c.paths.outputs},
            {"reports", c.paths.reports},
            {"logs", c.paths.logs}}},
          {"corpus", {{"train_utterances", c.train_utterances}, {"test_utterances", c.test_utterances}}},
          {"synth", to_json(c.synth)},
          {"transformnet", {{"model", to_json(c.transform)}, {"train", hyper_to_json(c.transform_hyper)}}},
          {"vocoder",
           {{"model", to_json(c.vocoder)},
            {"train", hyper_to_json(c.vocoder_hyper)},
            {"baseline_train", hyper_to_json(c.baseline_vocoder_hyper)},
            {"temperature", c.generation_temperature}}},
          {"imagegen", {{"model", to_json(c.imagegen)}, {"train", hyper_to_json(c.imagegen_hyper)}}},
          {"eval",
           {{"mel_components", c.eval.mel_components},
            {"lip_components", c.eval.lip_components},
            {"ridge_ratio", c.eval.ridge_ratio}}}};
}

ExperimentConfig experiment_config_from_json(const json& given, Preset fallback) {
  if (!given.is_object()) throw std::invalid_argument("config must be a JSON object");
  const Preset preset = given.contains("preset") ? preset_from_string(given.at("preset").get<std::string>()) : fallback;
  json merged = to_json(ExperimentConfig::for_preset(preset));
  reject_unknown_keys(given, merged, "");
  merged.merge_patch(given);
  merged["preset"] = to_string(preset);

  ExperimentConfig c;
  try {
    c.preset = preset;
    c.seed = merged.at("seed").get<std::uint64_t>();
    const json& p = merged.at("paths");
    c.paths.corpus = p.at("corpus").get<std::string>();
    c.paths.alignments = p.at("alignments").get<std::string>();
    c.paths.checkpoints = p.at("checkpoints").get<std::string>();
    c.paths.outputs = p.at("outputs").get<std::string>();
    c.paths.reports = p.at("reports").get<std::string>();
    c.paths.logs = p.at("logs").get<std::string>();
    c.train_utterances = merged.at("corpus").at("train_utterances").get<int>();
    c.test_utterances = merged.at("corpus").at("test_utterances").get<int>();
    c.synth = synth_config_from_json(merged.at("synth"));

    const json& t = merged.at("transformnet");
    c.transform = transform_config_from_json(t.at("model"));
    c.transform_hyper.lr = t.at("train").at("lr").get<double>();
    c.transform_hyper.batch = t.at("train").at("batch").get<int>();
    c.transform_hyper.epochs = t.at("train").at("epochs").get<int>();

    const json& v = merged.at("vocoder");
    c.vocoder = vocoder_config_from_json(v.at("model"));
    for (auto [key, h] : {std::pair{"train", &c.vocoder_hyper}, std::pair{"baseline_train", &c.baseline_vocoder_hyper}}) {
      h->lr = v.at(key).at("lr").get<double>();
      h->epochs = v.at(key).at("epochs").get<int>();
      h->segment_frames = v.at(key).at("segment_frames").get<int>();
    }
    c.generation_temperature = v.at("temperature").get<double>();

    const json& g = merged.at("imagegen");
    c.imagegen = imagegen_config_from_json(g.at("model"));
    c.imagegen_hyper.batch = g.at("train").at("batch").get<int>();
    c.imagegen_hyper.epochs = g.at("train").at("epochs").get<int>();

    const json& e = merged.at("eval");
    c.eval.mel_components = e.at("mel_components").get<int>();
    c.eval.lip_components = e.at("lip_components").get<int>();
    c.eval.ridge_ratio = e.at("ridge_ratio").get<double>();
  } catch (const json::exception& ex) {
    throw std::invalid_argument(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path, Preset fallback) {
  try {
    return experiment_config_from_json(read_json(path), fallback);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

// ------------------------------------------------------------ manifest

const StageRecord* RunManifest::find(const std::string& name) const {
  for (const StageRecord& r : stages) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

void RunManifest::record(StageRecord rec) {
  stages.erase(std::remove_if(stages.begin(), stages.end(), [&](const StageRecord& r) { return r.name == rec.name; }),
               stages.end());
  stages.push_back(std::move(rec));
}

void RunManifest::verify(const fs::path& run_dir) const {
  for (const StageRecord& r : stages) {
    for (const auto* table : {&r.inputs, &r.outputs}) {
      for (const auto& [path, hash] : *table) {
        const fs::path abs = run_dir / path;
        if (!fs::exists(abs)) throw std::runtime_error("stage '" + r.name + "': " + path + " is missing");
        if (io::file_sha256(abs) != hash) {
          throw std::runtime_error("stage '" + r.name + "': " + path + " does not match its recorded hash");
        }
      }
    }
  }
}

json to_json(const RunManifest& m) {
  json stages = json::array();
  for (const StageRecord& r : m.stages) {
    stages.push_back({{"name", r.name},
                      {"seed", r.seed},
                      {"config_sha256", r.config_sha256},
                      {"seconds", r.seconds},
                      {"inputs", r.inputs},
                      {"outputs", r.outputs}});
  }
  return {{"format", "avsc-manifest/1"}, {"stages", stages}};
}

RunManifest manifest_from_json(const json& j) {
  if (j.value("format", "") != "avsc-manifest/1") throw std::runtime_error("unrecognized manifest format");
  RunManifest m;
  for (const json& s : j.at("stages")) {
    StageRecord r;
    r.name = s.at("name").get<std::string>();
    r.seed = s.at("seed").get<std::uint64_t>();
    r.config_sha256 = s.at("config_sha256").get<std::string>();
    r.seconds = s.at("seconds").get<double>();
    r.inputs = s.at("inputs").get<std::map<std::string, std::string>>();
    r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
    m.stages.push_back(std::move(r));
  }
  return m;
}

fs::path manifest_path(const fs::path& run_dir) { return run_dir / "manifest.json"; }

RunManifest load_manifest(const fs::path& run_dir) {
  const fs::path p = manifest_path(run_dir);
  if (!fs::exists(p)) return {};
  try {
    return manifest_from_json(read_json(p));
  } catch (const json::exception& e) {
    throw std::runtime_error(p.string() + ": " + e.what());
  }
}

void save_manifest(const fs::path& run_dir, const RunManifest& m) {
  const fs::path p = manifest_path(run_dir);
  const fs::path tmp = p.string() + ".tmp";
  write_json(tmp, to_json(m));
  fs::rename(tmp, p);
}

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage_name) {
  // FNV-1a over the name, mixed with the seed by a splitmix64 round
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stage_name) h = (h ^ c) * 0x100000001b3ULL;
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void set_pipeline_log(std::ostream* os) { g_log = os; }

std::vector<std::string> corpus_ids(const ExperimentConfig& cfg, const std::string& split) {
  const int n = split == "train" ? cfg.train_utterances : split == "test" ? cfg.test_utterances : -1;
  if (n < 0) throw std::invalid_argument("unknown corpus split '" + split + "'");
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back(utt_name(split, i));
  return ids;
}

// ------------------------------------------------------------ stages

StageRecord cmd_synth_corpus(const ExperimentConfig& cfg, const fs::path& run_dir) {
  return run_stage(cfg, run_dir, stage::kSynthCorpus, {}, {}, [&](StageRecord& rec) {
    const Layout l = layout(cfg, run_dir);
    reset_dir(l.corpus());
    json index;
    for (const std::string split : {"train", "test"}) {
      const std::uint64_t seed = stage_seed(rec.seed, split);
      const std::vector<std::string> ids = corpus_ids(cfg, split);
      for (int i = 0; i < static_cast<int>(ids.size()); ++i) {
        ParallelCorpus one = synth_parallel_range(seed, i, 1, cfg.synth);
        for (const std::string who : {"source", "target"}) {
          UtteranceFeatures& u = who == "source" ? one.source[0] : one.target[0];
          const AudioClip& clip = who == "source" ? one.source_clips[0] : one.target_clips[0];
          u.utterance_id = ids[i];
          fs::create_directories(l.speaker_dir(split, who));
          io::save_wav(l.wav(split, who, ids[i]), clip);
          save_features(l.mel(split, who, ids[i]), l.facial(split, who, ids[i]), u);
        }
      }
      index[split] = ids;
      log(stage::kSynthCorpus, std::to_string(ids.size()) + " " + split + " utterances");
    }
    index["source_speaker"] = cfg.synth.source.id;
    index["target_speaker"] = cfg.synth.target.id;
    write_json(l.corpus() / "index.json", index);
    std::vector<fs::path> out;
    collect_files(l.corpus(), out);
    return out;
  });
}

StageRecord cmd_align(const ExperimentConfig& cfg, const fs::path& run_dir) {
  return run_stage(cfg, run_dir, stage::kAlign, {stage::kSynthCorpus}, {}, [&](StageRecord&) {
    const Layout l = layout(cfg, run_dir);
    reset_dir(run_dir / cfg.paths.alignments);
    std::vector<fs::path> out;
    double mean_ratio = 0;
    const auto ids = corpus_ids(cfg, "train");
    for (const std::string& id : ids) {
      const UtteranceFeatures src = load_features(l, "train", "source", id);
      const UtteranceFeatures tgt = load_features(l, "train", "target", id);
      const AlignmentPath path = dtw_align(tied_frames(src), tied_frames(tgt));
      validate_path(path, src.facial.length(), tgt.facial.length());
      write_json(l.alignment(id), to_json(path));
      out.push_back(l.alignment(id));
      mean_ratio += static_cast<double>(path.pairs.size()) / std::max(src.facial.length(), tgt.facial.length()) / ids.size();
    }
    log(stage::kAlign, "aligned " + std::to_string(ids.size()) + " training pairs, mean path/longer ratio " +
                           fmt(mean_ratio, 3));
    return out;
  });
}

StageRecord cmd_train_conv(const ExperimentConfig& cfg, const fs::path& run_dir) {
  return run_stage(cfg, run_dir, stage::kTrainConv, {stage::kSynthCorpus, stage::kAlign}, {}, [&](StageRecord& rec) {
    const Layout l = layout(cfg, run_dir);
    const auto pairs = load_aligned_pairs(l, corpus_ids(cfg, "train"));
    return train_transform_stage(cfg, l, pairs, cfg.transform, rec.seed, "transformnet", stage::kTrainConv);
  });
}

StageRecord cmd_train_vocoder(const ExperimentConfig& cfg, const fs::path& run_dir) {
  return run_stage(cfg, run_dir, stage::kTrainVocoder, {stage::kSynthCorpus}, {}, [&](StageRecord& rec) {
    return train_vocoder_stage(cfg, layout(cfg, run_dir), cfg.vocoder, cfg.vocoder_hyper, rec.seed, "vocoder",
                               stage::kTrainVocoder);
  });
}

StageRecord cmd_train_imagegen(const ExperimentConfig& cfg, const fs::path& run_dir) {
  return run_stage(cfg, run_dir, stage::kTrainImagegen, {stage::kSynthCorpus}, {}, [&](StageRecord& rec) {
    return train_imagegen_stage(cfg, layout(cfg, run_dir), cfg.imagegen, rec.seed, "imagegen",
                                stage::kTrainImagegen);
  });
}

StageRecord cmd_convert(const ExperimentConfig& cfg, const fs::path& run_dir) {
  return run_stage(cfg, run_dir, stage::kConvert,
                   {stage::kSynthCorpus, stage::kTrainConv, stage::kTrainVocoder, stage::kTrainImagegen}, {},
                   [&](StageRecord& rec) {
                     const Layout l = layout(cfg, run_dir);
                     const nn::Checkpoint tck = load_stage_checkpoint(l, "transformnet", "transformnet");
                     const TransformNetConfig tcfg = transform_config_from_json(tck.config);
                     const nn::Checkpoint vck = load_stage_checkpoint(l, "vocoder", "vocoder");
                     const VocoderConfig vcfg = vocoder_config_from_json(vck.config);
                     const nn::Checkpoint ick = load_stage_checkpoint(l, "imagegen", "imagegen");
                     const ImageGanConfig icfg = imagegen_config_from_json(ick.config);

                     const fs::path dir = l.output_dir(Condition::kProposed);
                     reset_dir(dir);
                     std::vector<fs::path> out;
                     for (const std::string& id : corpus_ids(cfg, "test")) {
                       const UtteranceFeatures src = load_features(l, "test", "source", id);
                       UtteranceFeatures conv = convert(tck.groups.at("model"), tcfg, src);
                       conv.speaker_id = cfg.synth.target.id;
                       const AudioClip audio = vocode(vck.groups.at("model"), vcfg, conv,
                                                      stage_seed(rec.seed, id), cfg.generation_temperature);
                       const auto frames = render_frames(ick.groups.at("generator"), icfg, conv);
                       const auto files = write_converted(dir / id, conv, audio, frames);
                       out.insert(out.end(), files.begin(), files.end());
                     }
                     log(stage::kConvert, "converted " + std::to_string(cfg.test_utterances) + " test utterances");
                     return out;
                   });
}

StageRecord cmd_run_baseline(const ExperimentConfig& cfg, const fs::path& run_dir) {
  return run_stage(cfg, run_dir, stage::kRunBaseline, {stage::kSynthCorpus, stage::kAlign}, {}, [&](StageRecord& rec) {
    const Layout l = layout(cfg, run_dir);
    std::vector<fs::path> out;
    auto add = [&](const std::vector<fs::path>& files) { out.insert(out.end(), files.begin(), files.end()); };

    const auto [audio_cfg, visual_cfg] = make_baselines(cfg.transform);
    {
      const auto pairs = load_aligned_pairs(l, corpus_ids(cfg, "train"));
      add(train_transform_stage(cfg, l, pairs, audio_cfg, stage_seed(rec.seed, "audio"), "baseline_transform_audio",
                                stage::kRunBaseline));
      add(train_transform_stage(cfg, l, pairs, visual_cfg, stage_seed(rec.seed, "visual"),
                                "baseline_transform_visual", stage::kRunBaseline));
    }
    VocoderConfig vcfg = cfg.vocoder;
    vcfg.cond.facial_dim = 0;
    add(train_vocoder_stage(cfg, l, vcfg, cfg.baseline_vocoder_hyper, stage_seed(rec.seed, "vocoder"),
                            "baseline_vocoder", stage::kRunBaseline));
    ImageGanConfig icfg = cfg.imagegen;
    icfg.mel_frames = 0;
    add(train_imagegen_stage(cfg, l, icfg, stage_seed(rec.seed, "imagegen"), "baseline_imagegen",
                             stage::kRunBaseline));

    const nn::Checkpoint ta = load_stage_checkpoint(l, "baseline_transform_audio", "transformnet");
    const nn::Checkpoint tv = load_stage_checkpoint(l, "baseline_transform_visual", "transformnet");
    const nn::Checkpoint vck = load_stage_checkpoint(l, "baseline_vocoder", "vocoder");
    const nn::Checkpoint ick = load_stage_checkpoint(l, "baseline_imagegen", "imagegen");

    const fs::path dir = l.output_dir(Condition::kBaseline);
    reset_dir(dir);
    for (const std::string& id : corpus_ids(cfg, "test")) {
      const UtteranceFeatures src = load_features(l, "test", "source", id);
      // separate paths: each stream converted by its own single-modality network
      const UtteranceFeatures by_audio = convert(ta.groups.at("model"), audio_cfg, src);
      const UtteranceFeatures by_visual = convert(tv.groups.at("model"), visual_cfg, src);
      UtteranceFeatures conv = src;
      conv.speaker_id = cfg.synth.target.id;
      conv.mel = by_audio.mel;
      conv.facial = by_visual.facial;
      const AudioClip audio =
          vocode(vck.groups.at("model"), vcfg, conv, stage_seed(rec.seed, id), cfg.generation_temperature);
      const auto frames = render_frames(ick.groups.at("generator"), icfg, conv);
      add(write_converted(dir / id, conv, audio, frames));
    }
    log(stage::kRunBaseline, "converted " + std::to_string(cfg.test_utterances) + " test utterances");
    return out;
  });
}

StageRecord cmd_evaluate(const ExperimentConfig& cfg, const fs::path& run_dir) {
  return run_stage(cfg, run_dir, stage::kEvaluate, {stage::kSynthCorpus, stage::kConvert}, {stage::kRunBaseline},
                   [&](StageRecord&) {
    const Layout l = layout(cfg, run_dir);
    const RunManifest manifest = load_manifest(run_dir);
    std::vector<Condition> conditions{Condition::kProposed};
    if (manifest.find(stage::kRunBaseline)) conditions.push_back(Condition::kBaseline);

    CcaReport report;
    for (const std::string& id : corpus_ids(cfg, "test")) {
      for (Condition c : conditions) {
        const fs::path dir = l.output_dir(c) / id;
        const FacialFeatureSequence facial = io::load_facial_features(dir / "facial.npy");
        const EvalFeatures f = eval_features(io::load_audio(dir / "audio.wav"), facial.keypoints());
        report.rows.push_back({id, c, utterance_correlation(f, cfg.eval)});
      }
      const UtteranceFeatures tgt = load_features(l, "test", "target", id);
      const EvalFeatures f = eval_features(io::load_audio(l.wav("test", "target", id)), tgt.facial.keypoints());
      report.rows.push_back({id, Condition::kTarget, utterance_correlation(f, cfg.eval)});
    }

    reset_dir(l.reports());
    write_report_csv(l.reports() / "cca.csv", report);
    write_histogram_csv(l.reports() / "cca_histogram.csv", report);
    std::map<Condition, std::vector<double>> by;
    for (const ConditionSummary& s : report.summary()) by[s.condition] = report.values(s.condition);
    json summary;
    if (cfg.test_utterances >= 10) {
      summary = to_json(compare_conditions(by));
    } else {
      for (const ConditionSummary& s : report.summary()) {
        summary["conditions"][to_string(s.condition)] = {{"count", s.count}, {"mean", s.mean}, {"median", s.median}};
      }
      summary["note"] = "fewer than 10 utterances per condition; no significance test";
    }
    write_json(l.reports() / "cca_summary.json", summary);
    {
      std::ofstream out(l.reports() / "cca_distributions.txt");
      out << distribution_diagnostic(report);
    }
    for (const ConditionSummary& s : report.summary()) {
      log(stage::kEvaluate, to_string(s.condition) + ": mean r " + fmt(s.mean) + ", median " + fmt(s.median));
    }
    return std::vector<fs::path>{l.reports() / "cca.csv", l.reports() / "cca_histogram.csv",
                                 l.reports() / "cca_summary.json", l.reports() / "cca_distributions.txt"};
  });
}

void cmd_run_all(const ExperimentConfig& cfg, const fs::path& run_dir) {
  cmd_synth_corpus(cfg, run_dir);
  cmd_align(cfg, run_dir);
  cmd_train_conv(cfg, run_dir);
  cmd_train_vocoder(cfg, run_dir);
  cmd_train_imagegen(cfg, run_dir);
  cmd_convert(cfg, run_dir);
  cmd_run_baseline(cfg, run_dir);
  cmd_evaluate(cfg, run_dir);
}

EvaluationResult load_evaluation(const ExperimentConfig& cfg, const fs::path& run_dir) {
  const fs::path csv = run_dir / cfg.paths.reports / "cca.csv";
  if (!fs::exists(csv)) {
    throw std::runtime_error("no evaluation report at " + csv.string() + "; run stage '" + stage::kEvaluate + "'");
  }
  EvaluationResult r;
  r.report = read_report_csv(csv);
  std::map<Condition, std::vector<double>> by;
  for (const ConditionSummary& s : r.report.summary()) by[s.condition] = r.report.values(s.condition);
  bool enough = by.size() >= 2;
  for (const auto& [c, v] : by) enough = enough && v.size() >= 10;
  if (enough) r.comparison = compare_conditions(by);
  return r;
}

std::string distribution_diagnostic(const CcaReport& report) {
  std::ostringstream out;
  out << "condition  count  mean    q25     median  q75     min     max\n";
  for (const ConditionSummary& s : report.summary()) {
    out << std::left << std::setw(11) << to_string(s.condition) << std::setw(7) << s.count << fmt(s.mean) << "  "
        << fmt(s.q25) << "  " << fmt(s.median) << "  " << fmt(s.q75) << "  " << fmt(s.min) << "  " << fmt(s.max)
        << '\n';
  }
  std::map<std::string, std::map<Condition, double>> by_utt;
  std::vector<std::string> order;
  for (const CcaRow& row : report.rows) {
    if (!by_utt.count(row.utterance_id)) order.push_back(row.utterance_id);
    by_utt[row.utterance_id][row.condition] = row.r;
  }
  int wins = 0, compared = 0;
  out << "\nutterance   proposed  baseline  target\n";
  for (const std::string& id : order) {
    const auto& m = by_utt[id];
    out << std::left << std::setw(12) << id;
    for (Condition c : {Condition::kProposed, Condition::kBaseline, Condition::kTarget}) {
      const auto it = m.find(c);
      out << std::setw(10) << (it == m.end() ? std::string("-") : fmt(it->second));
    }
    out << '\n';
    if (m.count(Condition::kProposed) && m.count(Condition::kBaseline)) {
      ++compared;
      wins += m.at(Condition::kProposed) > m.at(Condition::kBaseline);
    }
  }
  if (compared > 0) {
    out << "\nproposed above baseline on " << wins << " of " << compared << " utterances\n";
  }
  return out.str();
}

}  // namespace avsc
