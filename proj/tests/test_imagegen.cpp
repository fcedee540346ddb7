#include <doctest.h>

#include "avsc/imagegen.hpp"
#include "avsc/synth.hpp"
#include "support.hpp"

#include <cmath>

using namespace avsc;
using avsc::testing::random_matrix;

namespace {

ImageGanConfig micro() {
  ImageGanConfig cfg;
  cfg.mel_frames = 2;
  cfg.mel_dim = 3;
  cfg.facial_dim = 4;
  cfg.fc_hidden = 6;
  cfg.reshape_side = 4;
  cfg.gen_channels = {3, 3};
  cfg.gen_layout = "DC";
  cfg.disc_channels = {3};
  return cfg;
}

std::vector<GanExample> random_batch(const ImageGanConfig& cfg, int n, nn::Rng& rng) {
  std::vector<GanExample> b;
  const int side = cfg.image_side();
  for (int i = 0; i < n; ++i) {
    GanExample ex;
    ex.mel_block = random_matrix(cfg.mel_frames, cfg.mel_dim, rng);
    ex.facial = random_matrix(1, cfg.facial_dim, rng);
    ex.target.height = ex.target.width = side;
    ex.target.pixels = (random_matrix(side * side, 3, rng).array() * 0.2 + 0.5).matrix();
    b.push_back(std::move(ex));
  }
  return b;
}

void scramble(nn::ParamMap& p, nn::Rng& rng) {
  for (auto& [name, m] : p) m += random_matrix(m.rows(), m.cols(), rng, 0.2);
}

RgbImage constant_image(int side, double v) {
  RgbImage img;
  img.height = img.width = side;
  img.pixels = nn::Matrix::Constant(side * side, 3, v);
  return img;
}

}  // namespace

TEST_CASE("paper generator emits 256x256x3 in range") {
  const ImageGanConfig cfg;
  CHECK(cfg.image_side() == 256);
  CHECK(cfg.reshape_side * cfg.reshape_side == 4096);
  CHECK(cfg.fc_hidden == 4096);
  CHECK(cfg.gen_channels == std::vector<int>{64, 64, 128, 128, 64, 64, 3});
  CHECK(cfg.disc_channels == std::vector<int>{8, 16, 32, 32});
  CHECK(cfg.disc_side() == 1);
  const ImageGanParams p = init_imagegen_params(cfg, 1);
  nn::Rng rng(1);
  const RgbImage img = generator_forward(p.generator, cfg, random_matrix(8, 80, rng), random_matrix(1, 4236, rng));
  CHECK(img.height == 256);
  CHECK(img.width == 256);
  CHECK(img.pixels.rows() == 256 * 256);
  CHECK(img.pixels.cols() == 3);
  CHECK(img.in_range());
  CHECK(std::isfinite(discriminator_forward(p.discriminator, cfg, img)));
  CHECK_THROWS_AS(generator_forward(p.generator, cfg, random_matrix(7, 80, rng), random_matrix(1, 4236, rng)),
                  std::invalid_argument);
}

TEST_CASE("zero output weights give the activation of the bias") {
  const ImageGanConfig cfg = ImageGanConfig::desk();
  ImageGanParams p = init_imagegen_params(cfg, 2);
  const std::string last = "conv." + std::to_string(cfg.gen_channels.size() - 1);
  p.generator.params.at(last + ".w").setZero();
  p.generator.params.at(last + ".b") << 0.5, -1.0, 2.0;
  nn::Rng rng(3);
  const RgbImage img = generator_forward(p.generator, cfg, random_matrix(8, 80, rng), random_matrix(1, 4236, rng));
  for (Eigen::Index r = 0; r < img.pixels.rows(); ++r) {
    REQUIRE(img.pixels(r, 0) == doctest::Approx(1 / (1 + std::exp(-0.5))));
    REQUIRE(img.pixels(r, 1) == doctest::Approx(1 / (1 + std::exp(1.0))));
    REQUIRE(img.pixels(r, 2) == doctest::Approx(1 / (1 + std::exp(-2.0))));
  }

  for (auto& [name, m] : p.discriminator.params) m.setZero();
  p.discriminator.params.at("head.b")(0, 0) = 0.75;
  CHECK(discriminator_forward(p.discriminator, cfg, img) == 0.75);
}

TEST_CASE("inference is deterministic and pixels stay in range for wild parameters") {
  const ImageGanConfig cfg = ImageGanConfig::desk();
  ImageGanParams p = init_imagegen_params(cfg, 4);
  CHECK(init_imagegen_params(cfg, 4) == p);
  nn::Rng rng(5);
  for (auto& [name, m] : p.generator.params) m = random_matrix(m.rows(), m.cols(), rng, 5.0);
  const nn::Matrix mel = random_matrix(8, 80, rng);
  const nn::RowVector facial = random_matrix(1, 4236, rng);
  const RgbImage a = generator_forward(p.generator, cfg, mel, facial);
  CHECK(a.pixels.minCoeff() >= 0.0);
  CHECK(a.pixels.maxCoeff() <= 1.0);
  CHECK(generator_forward(p.generator, cfg, mel, facial).pixels == a.pixels);
}

TEST_CASE("least-squares losses on scalar cases") {
  CHECK(lsgan_d_loss({1.0, 1.0}, {0.0, 0.0}) == 0.0);
  CHECK(lsgan_d_loss({0.0}, {1.0}) == 1.0);
  CHECK(lsgan_d_loss({0.5, 1.5}, {0.5}) == 0.5 * 0.25 + 0.5 * 0.25);
  const std::vector<RgbImage> real{constant_image(4, 0.5), constant_image(4, 0.2)};
  CHECK(lsgan_g_loss({1.0, 1.0}, real, real, 10.0) == 0.0);
  const std::vector<RgbImage> off{constant_image(4, 0.6), constant_image(4, 0.1)};
  CHECK(lsgan_g_loss({1.0, 1.0}, off, real, 10.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(lsgan_g_loss({0.0}, {off[0]}, {real[0]}, 10.0) == doctest::Approx(0.5 + 1.0).epsilon(1e-14));
}

TEST_CASE("generator and discriminator gradients match central differences") {
  const ImageGanConfig cfg = micro();
  CHECK(cfg.image_side() == 8);
  ImageGanParams p = init_imagegen_params(cfg, 6);
  nn::Rng rng(7);
  scramble(p.generator.params, rng);
  scramble(p.discriminator.params, rng);
  const std::vector<GanExample> batch = random_batch(cfg, 3, rng);

  const nn::ParamMap gg = generator_gradients(p, cfg, batch);
  auto g_loss = [&] {
    GanLosses l;
    generator_gradients(p, cfg, batch, &l);
    return l.g_loss;
  };
  std::string where;
  double err = avsc::testing::worst(avsc::testing::check_gradients(p.generator.params, gg, g_loss, 20, 1), &where);
  INFO("generator worst ", where);
  CHECK(err < 1e-4);

  const nn::ParamMap dg = discriminator_gradients(p, cfg, batch);
  auto d_loss = [&] {
    GanLosses l;
    discriminator_gradients(p, cfg, batch, &l);
    return l.d_loss;
  };
  err = avsc::testing::worst(avsc::testing::check_gradients(p.discriminator.params, dg, d_loss, 20, 2), &where);
  INFO("discriminator worst ", where);
  CHECK(err < 1e-4);
}

TEST_CASE("each update touches only its own network") {
  const ImageGanConfig base = micro();
  nn::Rng rng(8);
  const std::vector<GanExample> batch = random_batch(base, 2, rng);
  const ImageGanParams init = init_imagegen_params(base, 9);

  ImageGanConfig cfg = base;
  cfg.lr_g = 0;
  GanState only_d(init, cfg);
  lsgan_step(only_d, cfg, batch);
  CHECK(only_d.params.generator.params == init.generator.params);
  CHECK_FALSE(only_d.params.discriminator.params == init.discriminator.params);

  cfg = base;
  cfg.lr_d = 0;
  GanState only_g(init, cfg);
  lsgan_step(only_g, cfg, batch);
  CHECK(only_g.params.discriminator.params == init.discriminator.params);
  CHECK_FALSE(only_g.params.generator.params == init.generator.params);

  cfg.lr_g = 0;
  GanState frozen(init, cfg);
  lsgan_step(frozen, cfg, batch);
  CHECK(frozen.params.generator.params == init.generator.params);
  CHECK(frozen.params.discriminator.params == init.discriminator.params);

  CHECK_THROWS_AS(lsgan_step(frozen, cfg, {}), std::invalid_argument);
  CHECK_THROWS_AS(train_imagegen({}, cfg, {}), std::invalid_argument);
}

TEST_CASE("training is seed deterministic") {
  const ImageGanConfig cfg = micro();
  nn::Rng rng(10);
  const std::vector<GanExample> corpus = random_batch(cfg, 5, rng);
  ImageGanHyper h;
  h.batch = 2;
  h.epochs = 3;
  h.seed = 4;
  const ImageGanTrainResult a = train_imagegen(corpus, cfg, h);
  const ImageGanTrainResult b = train_imagegen(corpus, cfg, h);
  CHECK(a.params == b.params);
  REQUIRE(a.trace.size() == 3);
  CHECK(a.trace.back().g_loss == b.trace.back().g_loss);
}

TEST_CASE("examples pair eight mel frames with one facial frame") {
  SynthConfig sc;
  sc.min_duration_s = sc.max_duration_s = 2.0;
  const ParallelCorpus corpus = synth_parallel_corpus(1, 1, sc);
  const UtteranceFeatures& u = corpus.target[0];
  std::vector<RgbImage> frames;
  for (int k = 0; k < u.facial.length(); ++k) frames.push_back(render_face(u.facial.keypoints().row(k), sc.target, 32));
  const std::vector<GanExample> ex = make_gan_examples(u, frames);
  REQUIRE(static_cast<int>(ex.size()) == u.facial.length());
  CHECK(ex[3].mel_block == u.mel.frames.middleRows(24, 8).cast<double>());
  CHECK(ex[3].facial == u.facial.fused.row(3).cast<double>());
  frames.pop_back();
  CHECK_THROWS_AS(make_gan_examples(u, frames), std::invalid_argument);
}
