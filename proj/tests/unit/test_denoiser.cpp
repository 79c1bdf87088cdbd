#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "inflare/denoiser.hpp"
#include "inflare/error.hpp"
#include "inflare/rng.hpp"
#include "oracles.hpp"

using namespace inflare;
using namespace inflare::denoiser;

namespace {

datasets::EigenFrame identity_frame(std::size_t d) {
  return {Vector(d, 0.0), Matrix::identity(d), Vector(d, 1.0), 0};
}

TrainedDenoiser wrap(const DenoiserNet& net, Vector params, const schedule::InflationSchedule& s) {
  return {net, params, params, s, identity_frame(s.dim()), TrainConfig{}, {}};
}

double silu(double h) { return h / (1.0 + std::exp(-h)); }

}  // namespace

TEST(Precondition, ClosedFormsAtGammaThree) {
  const auto s = schedule::InflationSchedule::prp(2, 7.01);
  const auto p = precondition(s, std::log(2.0));  // e^{2t} = 4
  EXPECT_NEAR(p.c_in[0], 0.5, 1e-15);
  EXPECT_NEAR(p.c_skip[0], 0.25, 1e-15);
  EXPECT_NEAR(p.c_out[0], std::sqrt(0.75), 1e-15);
  EXPECT_NEAR(p.c_out[0], 0.86603, 1e-5);
  EXPECT_NEAR(p.lambda[1], 1.15470, 1e-5);
  EXPECT_DOUBLE_EQ(precondition(s, 0.5).c_noise, 499.5);
}

TEST(Precondition, IdentitiesOnGrid) {
  const auto s = schedule::InflationSchedule::prr(3, 1, 0.5, 11.01, 1.0);
  for (int i = 1; i <= 100; ++i) {
    const double t = 11.01 * i / 100.0;
    const auto p = precondition(s, t);
    const auto e = schedule::eval(s, t);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(p.c_in[j] * p.c_in[j] * (1.0 + e.gamma[j]), 1.0, 1e-12);
      EXPECT_NEAR(p.lambda[j] * p.c_out[j], 1.0, 1e-12);
      EXPECT_NEAR(p.c_skip[j] + p.c_out[j] * p.c_out[j], 1.0, 1e-12);
    }
  }
}

TEST(Precondition, Errors) {
  const auto s = schedule::InflationSchedule::prp(2, 7.01);
  EXPECT_THROW(precondition(s, 0.0), InvalidArgument);
  EXPECT_THROW(precondition(s, 1e-9), InvalidArgument);
  const schedule::InflationSchedule hard(schedule::ScheduleKind::prr, 1.0, Vector{2.0, 0.0}, 5.0);
  EXPECT_THROW(precondition(hard, 1.0), InvalidArgument);
}

TEST(Net, LayoutAndInit) {
  const DenoiserNet net(2, {8, 4}, 6);
  EXPECT_EQ(net.widths(), (std::vector<std::size_t>{8, 8, 4, 2}));
  EXPECT_EQ(net.parameter_count(), 8u * 8 + 8 + 4 * 8 + 4 + 2 * 4 + 2);
  EXPECT_EQ(net.layout()[2].name, "W1");
  EXPECT_EQ(net.layout()[2].offset, 72u);
  RngStream rng(1);
  const Vector p = net.init_parameters(rng);
  for (std::size_t i = 0; i < 72; ++i) EXPECT_LE(std::abs(p[i]), 1.0 / std::sqrt(8.0));
  EXPECT_THROW(DenoiserNet(2, {8}, 3), InvalidArgument);
  EXPECT_THROW(DenoiserNet::from_widths({5, 4, 2}, 2), InvalidArgument);
}

TEST(Net, TimeEmbeddingValues) {
  Vector e(4);
  time_embedding(2.0, e);
  EXPECT_DOUBLE_EQ(e[0], std::cos(2.0));
  EXPECT_DOUBLE_EQ(e[1], std::cos(2.0 / 100.0));
  EXPECT_DOUBLE_EQ(e[2], std::sin(2.0));
  EXPECT_DOUBLE_EQ(e[3], std::sin(2.0 / 100.0));
}

TEST(Forward, ZeroParamsIsSkipPath) {
  const auto s = schedule::InflationSchedule::prp(2, 7.01);
  const DenoiserNet net(2, {16}, 8);
  const auto model = wrap(net, Vector(net.parameter_count(), 0.0), s);
  const Matrix x{{1.0, -2.0}, {0.5, 3.0}};
  const double t = 0.8;
  const Matrix dx = forward(model, x, t);
  const auto p = precondition(s, t);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(dx(b, j), p.c_skip[j] * x(b, j));
  const Matrix cot{{1.0, 2.0}, {-1.0, 0.5}};
  const Matrix g = input_vjp(model, x, t, cot);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(g(b, j), p.c_skip[j] * cot(b, j));
  EXPECT_EQ(input_vjp(model, x, t, Matrix(2, 2)), Matrix(2, 2));
}

TEST(Forward, DeterministicAndRejectsNonFinite) {
  const auto s = schedule::InflationSchedule::prp(2, 7.01);
  const DenoiserNet net(2, {16, 16}, 8);
  RngStream rng(4);
  const auto model = wrap(net, net.init_parameters(rng), s);
  const Matrix x{{0.3, -0.7}};
  EXPECT_EQ(forward(model, x, 1.3), forward(model, x, 1.3));
  EXPECT_THROW(forward(model, Matrix{{NAN, 0.0}}, 1.0), InvalidArgument);
  auto broken = model;
  broken.ema[0] = NAN;
  EXPECT_THROW(forward(broken, x, 1.0), NumericalError);
}

TEST(LossGrad, HandTracedSingleUnit) {
  const auto s = schedule::InflationSchedule::prp(1, 2.0);
  const auto net = DenoiserNet::from_widths({3, 1, 1}, 2);
  const Vector p{0.4, -0.3, 0.2, 0.1, 0.7, -0.05};  // W0 (1x3), b0, W1, b1
  const double y = 0.3, n = 0.2, t = 0.5;
  const auto l = loss_and_grad_fixed(net, p, Matrix{{y}}, Vector{t}, Matrix{{n}}, s, TrainConfig{});

  const double sigma2 = std::exp(1.0), gamma = sigma2 - 1.0, x = y + n;
  const double u[3] = {x / std::sqrt(sigma2), std::cos(499.5), std::sin(499.5)};
  const double h = p[0] * u[0] + p[1] * u[1] + p[2] * u[2] + p[3];
  const double sg = 1.0 / (1.0 + std::exp(-h));
  const double a = silu(h);
  const double f = p[4] * a + p[5];
  const double target = (y - x / sigma2) / std::sqrt(gamma / sigma2);
  const double r = f - target;
  EXPECT_NEAR(l.loss, r * r, 1e-14);
  const double dh = 2 * r * p[4] * sg * (1 + h * (1 - sg));
  const double expected[6] = {dh * u[0], dh * u[1], dh * u[2], dh, 2 * r * a, 2 * r};
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(l.grad[i], expected[i], 1e-13) << i;
}

TEST(LossGrad, MatchesFiniteDifferences) {
  const auto s = schedule::InflationSchedule::prr(2, 1, 0.5, 5.0, 1.0);
  const auto net = DenoiserNet::from_widths({6, 8, 2}, 4);
  RngStream rng(17);
  const Vector p = net.init_parameters(rng);
  Matrix y(4, 2), noise(4, 2);
  rng.fill_normal(y.data());
  Vector t{0.2, 1.0, 2.5, 4.0};
  for (std::size_t b = 0; b < 4; ++b) {
    const auto e = schedule::eval(s, t[b]);
    for (std::size_t j = 0; j < 2; ++j) noise(b, j) = std::sqrt(e.gamma[j]) * rng.normal();
  }
  const TrainConfig cfg;
  const auto l = loss_and_grad_fixed(net, p, y, t, noise, s, cfg);
  EXPECT_GE(l.loss, 0.0);
  auto f = [&](const Vector& q) { return loss_and_grad_fixed(net, q, y, t, noise, s, cfg).loss; };
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double fd = oracle::central_diff(f, p, k, 1e-5);
    EXPECT_LE(oracle::rel_err(l.grad[k], fd, 1e-6), 1e-4) << "parameter " << k;
  }
}

TEST(InputVjp, MatchesFiniteDifferences) {
  const auto s = schedule::InflationSchedule::prr(3, 2, 0.4, 6.0, 1.0);
  const DenoiserNet net(3, {12, 12}, 6);
  RngStream rng(23);
  const auto model = wrap(net, net.init_parameters(rng), s);
  for (double t : {0.05, 1.0, 5.5}) {
    Vector x(3), v(3);
    rng.fill_normal(x);
    rng.fill_normal(v);
    const Vector g = input_vjp(model, x, t, v);
    for (std::size_t k = 0; k < 3; ++k) {
      auto f = [&](const Vector& z) { return dot(forward(model, z, t), v); };
      EXPECT_LE(oracle::rel_err(g[k], oracle::central_diff(f, x, k, 1e-5), 1e-6), 1e-4);
    }
  }
}

TEST(LossGrad, ZeroNetLossIsUnitVariancePerDimension) {
  // With F ≡ 0 the loss is the second moment of the regression target.
  const auto s = schedule::InflationSchedule::prr(2, 1, 0.7, 7.0, 1.0);
  const DenoiserNet net(2, {4}, 4);
  const Vector p(net.parameter_count(), 0.0);
  RngStream rng(8);
  Matrix y(100000, 2);
  rng.fill_normal(y.data());
  const auto l = loss_and_grad(net, p, y, rng, s, TrainConfig{});
  EXPECT_NEAR(l.loss / 2.0, 1.0, 0.03);
}

TEST(LossGrad, IndependentOfThreadCount) {
  const auto s = schedule::InflationSchedule::prp(2, 7.01);
  const DenoiserNet net(2, {16}, 8);
  RngStream init(2);
  const Vector p = net.init_parameters(init);
  Matrix y(1000, 2);
  init.fill_normal(y.data());
  ::setenv("INFLARE_THREADS", "1", 1);
  RngStream r1(5);
  const auto a = loss_and_grad(net, p, y, r1, s, TrainConfig{});
  ::setenv("INFLARE_THREADS", "4", 1);
  RngStream r2(5);
  const auto b = loss_and_grad(net, p, y, r2, s, TrainConfig{});
  ::unsetenv("INFLARE_THREADS");
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad, b.grad);
}

class GaussianTraining : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    RngStream rng(31);
    data_ = new Matrix(sample_diag_gaussian(rng, 10000, Vector{0, 0}, Vector{1, 1}));
    TrainConfig cfg;
    cfg.steps = 3000;
    cfg.batch_size = 256;
    cfg.learning_rate = 2e-3;
    cfg.ema_half_life = 256.0 * 100;
    cfg.seed = 9;
    cfg.log_every = 100;
    model_ = new TrainedDenoiser(train(*data_, schedule_(), identity_frame(2), cfg, DenoiserNet(2, {64, 64}, 16)));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete model_;
  }
  static schedule::InflationSchedule schedule_() { return schedule::InflationSchedule::prp(2, 7.01); }
  static Matrix* data_;
  static TrainedDenoiser* model_;
};
Matrix* GaussianTraining::data_ = nullptr;
TrainedDenoiser* GaussianTraining::model_ = nullptr;

// For whitened Gaussian data F = 0 is optimal and the expected loss is exactly d.
TEST_F(GaussianTraining, LossSettlesAtGaussianOptimum) {
  const auto& c = model_->meta.loss_curve;
  ASSERT_EQ(c.size(), 30u);
  EXPECT_NEAR((c[27] + c[28] + c[29]) / 3.0, 2.0, 0.05);
  EXPECT_EQ(model_->meta.steps_done, 3000u);
}

TEST_F(GaussianTraining, ApproachesIdealDenoiser) {
  const auto s = schedule_();
  RngStream rng(77);
  double err = 0.0;
  std::size_t count = 0;
  for (int i = 1; i <= 20; ++i) {
    const double t = 7.01 * i / 20.0;
    const auto e = schedule::eval(s, t);
    const Matrix x = sample_diag_gaussian(rng, 500, Vector{0, 0}, e.sigma2);
    const Matrix d = forward(*model_, x, t);
    for (std::size_t b = 0; b < x.rows(); ++b)
      for (std::size_t j = 0; j < 2; ++j) {
        err += std::abs(d(b, j) - x(b, j) / e.sigma2[j]);
        ++count;
      }
  }
  EXPECT_LE(err / count, 0.1);
}

TEST(Train, SameSeedSameParameters) {
  RngStream rng(1);
  const Matrix data = sample_diag_gaussian(rng, 500, Vector{0, 0}, Vector{1, 1});
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.batch_size = 64;
  cfg.seed = 3;
  const auto s = schedule::InflationSchedule::prp(2, 7.01);
  const DenoiserNet net(2, {16}, 8);
  const auto a = train(data, s, identity_frame(2), cfg, net);
  const auto b = train(data, s, identity_frame(2), cfg, net);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.ema, b.ema);
  EXPECT_NE(a.params, a.ema);
}

TEST(Train, Errors) {
  const auto s = schedule::InflationSchedule::prp(2, 7.01);
  const DenoiserNet net(2, {16}, 8);
  TrainConfig cfg;
  cfg.steps = 1;
  EXPECT_THROW(train(Matrix{{NAN, 0.0}}, s, identity_frame(2), cfg, net), InvalidArgument);
  EXPECT_THROW(train(Matrix{{0.0, 0.0, 0.0}}, s, identity_frame(2), cfg, net), InvalidArgument);
  cfg.learning_rate = 0.0;
  EXPECT_THROW(train(Matrix{{0.0, 0.0}}, s, identity_frame(2), cfg, net), InvalidArgument);
  const schedule::InflationSchedule hard(schedule::ScheduleKind::prr, 1.0, Vector{2.0, 0.0}, 5.0);
  EXPECT_THROW(train(Matrix{{0.0, 0.0}}, hard, identity_frame(2), TrainConfig{}, net), InvalidArgument);
}

TEST(Train, DivergenceIsReported) {
  RngStream rng(1);
  Matrix data = sample_diag_gaussian(rng, 64, Vector{0, 0}, Vector{1, 1});
  for (std::size_t b = 0; b < data.rows(); ++b) data(b, 0) = 1e200;
  TrainConfig cfg;
  cfg.steps = 5;
  cfg.batch_size = 64;
  const auto s = schedule::InflationSchedule::prp(2, 7.01);
  EXPECT_THROW(train(data, s, identity_frame(2), cfg, DenoiserNet(2, {16}, 8)), NumericalError);
}
