#include <doctest.h>

#include "avsc/align.hpp"
#include "avsc/nn/checkpoint.hpp"
#include "avsc/synth.hpp"
#include "avsc/transformnet.hpp"
#include "support.hpp"

#include <filesystem>

using namespace avsc;
using avsc::testing::random_matrix;

namespace {

TransformNetConfig micro(TransformMode mode) {
  TransformNetConfig cfg;
  cfg.mel_dim = 3;
  cfg.facial_dim = 4;
  cfg.channels.audio_down = {2, 3, 3};
  cfg.channels.facial_in = {3, 2};
  cfg.channels.fusion = {4, 3};
  cfg.channels.audio_up = {3, 2, 2};
  cfg.channels.facial_out = {2};
  cfg.mode = mode;
  if (mode != TransformMode::kJoint) cfg.audio_down_strides = {1, 1, 1};
  return cfg;
}

TransformBatch micro_batch(const TransformNetConfig& cfg, int t_v, nn::Rng& rng) {
  const int t_a = cfg.mode == TransformMode::kJoint ? 8 * t_v : t_v;
  TransformBatch b;
  for (int n = 0; n < 2; ++n) {
    b.src_mel.push_back(random_matrix(t_a, cfg.mel_dim, rng));
    b.src_facial.push_back(random_matrix(t_v, cfg.facial_dim, rng));
    b.tgt_mel.push_back(random_matrix(t_a, cfg.mel_dim, rng));
    b.tgt_facial.push_back(random_matrix(t_v, cfg.facial_dim, rng));
  }
  return b;
}

double worst_gradient_error(TransformMode mode, std::string* where) {
  const TransformNetConfig cfg = micro(mode);
  nn::Rng rng(11);
  TransformNetParams params = init_transform_params(cfg, 3);
  // non-trivial normalization parameters
  for (auto& [name, m] : params.params) {
    if (name.find(".bn.") != std::string::npos) m += random_matrix(m.rows(), m.cols(), rng, 0.3);
  }
  const TransformBatch batch = micro_batch(cfg, 3, rng);
  const TransformGradients g = transform_gradients(params, cfg, batch, nn::Mode::kTrain, nullptr);
  auto loss = [&] { return transform_gradients(params, cfg, batch, nn::Mode::kTrain, nullptr).loss.total; };
  return avsc::testing::worst(avsc::testing::check_gradients(params.params, g.grads, loss, 20, 5), where);
}

}  // namespace

TEST_CASE("gradients match central differences in every mode") {
  for (TransformMode mode : {TransformMode::kJoint, TransformMode::kAudioOnly, TransformMode::kVisualOnly}) {
    std::string where;
    const double err = worst_gradient_error(mode, &where);
    INFO(to_string(mode), " worst group ", where);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("acoustic term is weighted by ten") {
  nn::Matrix pm = nn::Matrix::Constant(2, 2, 1.0), tm = nn::Matrix::Constant(2, 2, 0.5);
  nn::Matrix pf = nn::Matrix::Constant(1, 3, -1.0), tf = nn::Matrix::Constant(1, 3, 1.0);
  const LossTerms t = transform_loss(pm, pf, tm, tf);
  CHECK(t.acoustic == 0.5);
  CHECK(t.facial == 2.0);
  CHECK(t.total == 10 * 0.5 + 2.0);
}

TEST_CASE("forward preserves shapes") {
  const TransformNetConfig cfg = TransformNetConfig::desk();
  const TransformNetParams p = init_transform_params(cfg, 1);
  nn::Rng rng(2);
  SUBCASE("training window") {
    const TransformOutput out = forward(p, cfg, random_matrix(400, 80, rng), random_matrix(50, 4236, rng));
    CHECK(out.mel.rows() == 400);
    CHECK(out.mel.cols() == 80);
    CHECK(out.facial.rows() == 50);
    CHECK(out.facial.cols() == 4236);
  }
  SUBCASE("odd full length") {
    const TransformOutput out = forward(p, cfg, random_matrix(8 * 37, 80, rng), random_matrix(37, 4236, rng));
    CHECK(out.mel.rows() == 8 * 37);
    CHECK(out.facial.rows() == 37);
  }
  SUBCASE("rate mismatch") {
    CHECK_THROWS_AS(forward(p, cfg, random_matrix(8 * 37 + 8, 80, rng), random_matrix(37, 4236, rng)),
                    std::invalid_argument);
    CHECK_THROWS_AS(forward(p, cfg, random_matrix(8 * 37 + 3, 80, rng), random_matrix(37, 4236, rng)),
                    std::invalid_argument);
  }
}

TEST_CASE("baseline variants use stride one and model a single stream") {
  const auto [audio, visual] = make_baselines(TransformNetConfig{});
  CHECK(audio.audio_factor() == 1);
  CHECK(visual.audio_factor() == 1);
  CHECK(audio.mode == TransformMode::kAudioOnly);
  CHECK(visual.mode == TransformMode::kVisualOnly);

  const TransformNetConfig cfg = micro(TransformMode::kAudioOnly);
  const TransformNetParams p = init_transform_params(cfg, 1);
  nn::Rng rng(4);
  const nn::Matrix mel = random_matrix(13, 3, rng), facial = random_matrix(5, 4, rng);
  const TransformOutput out = forward(p, cfg, mel, facial);
  CHECK(out.mel.rows() == 13);
  CHECK(out.facial == facial);
  for (const auto& [name, m] : p.params) CHECK(name.rfind("facial", 0) != 0);
}

TEST_CASE("paper configuration") {
  const TransformNetConfig cfg;
  CHECK(cfg.kernel_size == 5);
  CHECK(cfg.audio_factor() == 8);
  CHECK(cfg.acoustic_loss_weight == 10.0);
  const TransformHyper h;
  CHECK(h.lr == 1e-4);
  CHECK(h.batch == 64);
  CHECK(h.epochs == 600);
  const TransformNetConfig back = transform_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  TransformNetConfig bad = cfg;
  bad.kernel_size = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("inference is deterministic and checkpoints round-trip") {
  const TransformNetConfig cfg = micro(TransformMode::kJoint);
  const TransformNetParams p = init_transform_params(cfg, 9);
  CHECK(init_transform_params(cfg, 9) == p);
  const auto path = std::filesystem::temp_directory_path() / "avsc_transform_ckpt.bin";
  nn::save_checkpoint(path, to_checkpoint(p, cfg));
  const nn::Checkpoint back = nn::load_checkpoint(path);
  CHECK(back.kind == "transformnet");
  CHECK(back.groups.at("model") == p);
  CHECK(to_json(transform_config_from_json(back.config)) == to_json(cfg));
  std::filesystem::remove(path);
}

TEST_CASE("training overfits two windows") {
  SynthConfig sc;
  sc.min_duration_s = sc.max_duration_s = 4.0;
  const ParallelCorpus corpus = synth_parallel_corpus(5, 1, sc);
  const AlignmentPath path = dtw_align(tied_frames(corpus.source[0]), tied_frames(corpus.target[0]));
  UtterancePair pair = apply_alignment(path, corpus.source[0], corpus.target[0]);
  pair.source.mel.frames.conservativeResize(800, Eigen::NoChange);
  pair.source.facial.fused.conservativeResize(100, Eigen::NoChange);
  pair.target.mel.frames.conservativeResize(800, Eigen::NoChange);
  pair.target.facial.fused.conservativeResize(100, Eigen::NoChange);
  REQUIRE(make_training_windows(pair.source).size() == 2);

  const TransformNetConfig cfg = TransformNetConfig::desk();
  TransformHyper h;
  h.lr = 1e-3;
  h.epochs = 220;
  h.seed = 1;
  const TransformTrainResult r = train_transform({pair}, cfg, h);
  REQUIRE(r.trace.size() == 220);
  const double first = r.trace.front().total, last = r.trace.back().total;
  MESSAGE("loss ", first, " -> ", last);
  CHECK(last <= 0.1 * first);

  const TransformTrainResult again = train_transform({pair}, cfg, h);
  CHECK(again.trace.back().total == last);
}
