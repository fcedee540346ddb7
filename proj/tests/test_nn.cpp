#include <doctest.h>

#include "avsc/nn/layers.hpp"
#include "avsc/nn/optim.hpp"
#include "support.hpp"

using namespace avsc;
using namespace avsc::nn;
using avsc::testing::random_matrix;

namespace {

// Direct nested-loop convolution.
Matrix naive_conv(const Matrix& x, const Matrix& w, const Matrix& b, const ConvGeometry& g, int cin, int cout) {
  Matrix y = Matrix::Zero(g.out_positions(), cout);
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      for (int co = 0; co < cout; ++co) {
        double acc = b(0, co);
        for (int ky = 0; ky < g.kernel_h; ++ky) {
          for (int kx = 0; kx < g.kernel_w; ++kx) {
            const int iy = oy * g.stride_h - g.pad_top + ky * g.dilation_h;
            const int ix = ox * g.stride_w - g.pad_left + kx * g.dilation_w;
            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
            for (int ci = 0; ci < cin; ++ci) {
              acc += w((ky * g.kernel_w + kx) * cin + ci, co) * x(iy * g.in_w + ix, ci);
            }
          }
        }
        y(oy * g.out_w + ox, co) = acc;
      }
    }
  }
  return y;
}

double dot(const Batch& a, const Batch& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].cwiseProduct(b[i]).sum();
  return s;
}

// Gradient check of a layer through the scalar loss sum(out .* probe).
template <typename Forward, typename Backward>
void check_layer(ParamMap& params, const Batch& x, Forward fwd, Backward bwd, double tol = 1e-6) {
  Rng rng(99);
  Batch y = fwd(params, x);
  Batch probe;
  for (const Matrix& m : y) probe.push_back(random_matrix(m.rows(), m.cols(), rng));
  ParamMap grads = params.zeros_like();
  const Batch dx = bwd(params, grads, probe);
  auto loss = [&] { return dot(fwd(params, x), probe); };
  const auto checks = avsc::testing::check_gradients(params, grads, loss, 30, 1);
  std::string where;
  const double err = avsc::testing::worst(checks, &where);
  INFO("worst group ", where);
  CHECK(err < tol);

  // input gradient
  Batch xp = x;
  double diff = 0, na = 0, nn = 0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(x[n].size(), 20); ++i) {
      const double orig = xp[n].data()[i];
      xp[n].data()[i] = orig + 1e-6;
      const double up = dot(fwd(params, xp), probe);
      xp[n].data()[i] = orig - 1e-6;
      const double down = dot(fwd(params, xp), probe);
      xp[n].data()[i] = orig;
      const double num = (up - down) / 2e-6, a = dx[n].data()[i];
      diff += (a - num) * (a - num);
      na += a * a;
      nn += num * num;
    }
  }
  CHECK(std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nn) + 1e-300) < tol);
}

}  // namespace

TEST_CASE("geometry helpers") {
  const ConvGeometry s = same_1d(50, 5, 2);
  CHECK(s.out_w == 25);
  CHECK(same_1d(51, 5, 2).out_w == 26);
  CHECK(same_1d(400, 5, 1).out_w == 400);
  const ConvGeometry c = causal_1d(100, 2, 8);
  CHECK(c.out_w == 100);
  CHECK(c.pad_left == 8);
  const ConvGeometry g = same_2d(16, 16, 3, 2);
  CHECK(g.out_h == 8);
  CHECK(g.out_w == 8);
}

TEST_CASE("convolution matches a nested-loop reference") {
  Rng rng(1);
  ConvGeometry geoms[] = {same_1d(17, 5, 2), causal_1d(20, 2, 4), same_2d(9, 7, 3, 2), same_2d(8, 8, 5, 1)};
  for (const ConvGeometry& g : geoms) {
    Conv conv("c", 3, 4, g);
    ParamMap p;
    conv.init(p, rng);
    p.at("c.b") = random_matrix(1, 4, rng);
    const Matrix x = random_matrix(g.in_positions(), 3, rng);
    const Batch y = conv.forward(p, single(x));
    CHECK((y[0] - naive_conv(x, p.at("c.w"), p.at("c.b"), g, 3, 4)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("transposed convolution is the adjoint of convolution") {
  Rng rng(2);
  for (const ConvGeometry& g : {same_1d(13, 5, 2), same_2d(8, 8, 5, 2)}) {
    Conv conv("c", 3, 4, g);
    ConvTranspose deconv("d", 4, 3, g);
    ParamMap pc, pd;
    conv.init(pc, rng);
    deconv.init(pd, rng);
    pd.at("d.w") = pc.at("c.w");
    pc.at("c.b").setZero();
    pd.at("d.b").setZero();
    const Batch x = single(random_matrix(g.in_positions(), 3, rng));
    const Batch y = single(random_matrix(g.out_positions(), 4, rng));
    const Batch cx = conv.forward(pc, x);
    const Batch dy = deconv.forward(pd, y);
    CHECK(dy[0].rows() == g.in_positions());
    CHECK(dot(cx, y) == doctest::Approx(dot(x, dy)).epsilon(1e-12));
  }
}

TEST_CASE("layer gradients") {
  Rng rng(3);
  SUBCASE("conv") {
    Conv conv("c", 2, 3, same_2d(5, 4, 3, 2));
    ParamMap p;
    conv.init(p, rng);
    const Batch x{random_matrix(20, 2, rng), random_matrix(20, 2, rng)};
    check_layer(p, x, [&](const ParamMap& q, const Batch& in) { return conv.forward(q, in); },
                [&](const ParamMap& q, ParamMap& g, const Batch& dy) { return conv.backward(q, g, dy); });
  }
  SUBCASE("transposed conv") {
    ConvTranspose deconv("d", 2, 3, same_1d(9, 5, 2));
    ParamMap p;
    deconv.init(p, rng);
    const Batch x{random_matrix(5, 2, rng)};
    check_layer(p, x, [&](const ParamMap& q, const Batch& in) { return deconv.forward(q, in); },
                [&](const ParamMap& q, ParamMap& g, const Batch& dy) { return deconv.backward(q, g, dy); });
  }
  SUBCASE("linear") {
    Linear lin("l", 4, 3);
    ParamMap p;
    lin.init(p, rng);
    const Batch x{random_matrix(2, 4, rng)};
    check_layer(p, x, [&](const ParamMap& q, const Batch& in) { return lin.forward(q, in); },
                [&](const ParamMap& q, ParamMap& g, const Batch& dy) { return lin.backward(q, g, dy); });
  }
  SUBCASE("batch norm") {
    BatchNorm bn("bn", 3);
    ParamMap p, buf;
    bn.init(p, buf);
    p.at("bn.gamma") += random_matrix(1, 3, rng, 0.3);
    p.at("bn.beta") += random_matrix(1, 3, rng, 0.3);
    const Batch x{random_matrix(6, 3, rng), random_matrix(4, 3, rng)};
    check_layer(p, x, [&](const ParamMap& q, const Batch& in) { return bn.forward(q, buf, in, Mode::kTrain); },
                [&](const ParamMap& q, ParamMap& g, const Batch& dy) { return bn.backward(q, g, dy); });
  }
  SUBCASE("activations and pooling") {
    ParamMap none;
    for (ActivationKind k : {ActivationKind::kSigmoid, ActivationKind::kTanh, ActivationKind::kRelu}) {
      Activation act(k);
      const Batch x{random_matrix(4, 3, rng)};
      check_layer(none, x, [&](const ParamMap&, const Batch& in) { return act.forward(in); },
                  [&](const ParamMap&, ParamMap&, const Batch& dy) { return act.backward(dy); });
    }
    MaxPool2 pool(4, 5, 2);
    const Batch x{random_matrix(20, 2, rng)};
    const Batch y = pool.forward(x);
    CHECK(y[0].rows() == 4);
    check_layer(none, x, [&](const ParamMap&, const Batch& in) { return pool.forward(in); },
                [&](const ParamMap&, ParamMap&, const Batch& dy) { return pool.backward(dy); });
  }
}

TEST_CASE("batch normalization statistics") {
  BatchNorm bn("bn", 2);
  ParamMap p, buf;
  bn.init(p, buf);
  Matrix x(4, 2);
  x << 1, 10, 2, 20, 3, 30, 4, 40;
  ParamMap update = buf;
  const Batch y = bn.forward(p, buf, single(x), Mode::kTrain, &update);
  CHECK(std::abs(y[0].col(0).mean()) < 1e-12);
  CHECK(y[0].col(0).squaredNorm() / 4 == doctest::Approx(1.25 / (1.25 + 1e-5)));
  // running averages: 0.9 * old + 0.1 * batch, variance unbiased
  CHECK(update.at("bn.running_mean")(0, 0) == doctest::Approx(0.25));
  CHECK(update.at("bn.running_mean")(0, 1) == doctest::Approx(2.5));
  CHECK(update.at("bn.running_var")(0, 0) == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
  const Batch inf = bn.forward(p, update, single(x), Mode::kInference);
  CHECK(inf[0](0, 0) == doctest::Approx((1 - 0.25) / std::sqrt(0.9 + 0.1 * 5.0 / 3.0 + 1e-5)));
}

TEST_CASE("adam first step moves each parameter by lr against the gradient sign") {
  ParamMap p, g;
  p.add("w", Matrix::Constant(1, 3, 1.0));
  Matrix gm(1, 3);
  gm << 0.5, -2.0, 0.0;
  g.add("w", gm);
  Adam opt(AdamConfig{0.1});
  opt.step(p, g);
  CHECK(p.at("w")(0, 0) == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p.at("w")(0, 1) == doctest::Approx(1.1).epsilon(1e-7));
  CHECK(p.at("w")(0, 2) == 1.0);
  // second step with the same gradient keeps the bias-corrected ratio
  opt.step(p, g);
  CHECK(p.at("w")(0, 0) == doctest::Approx(0.8).epsilon(1e-7));

  Adam frozen(AdamConfig{0.0});
  ParamMap before = p;
  frozen.step(p, g);
  CHECK(p == before);
}

TEST_CASE("l1 loss and gradient") {
  Matrix a(1, 4), b(1, 4);
  a << 1, 2, 3, 4;
  b << 2, 2, 1, 4.5;
  Matrix g;
  CHECK(l1_loss(a, b, 10.0, &g) == doctest::Approx(3.5 / 4));
  CHECK(g(0, 0) == -2.5);
  CHECK(g(0, 1) == 0.0);
  CHECK(g(0, 2) == 2.5);
  CHECK_THROWS_AS(l1_loss(a, Matrix::Zero(2, 2), 1.0, nullptr), std::invalid_argument);
}
