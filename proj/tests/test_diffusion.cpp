#include <gtest/gtest.h>

#include <cmath>

#include "semcom/diffusion.hpp"

using namespace semcom;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::BadConfig;
}

struct Moments {
  double mean = 0, var = 0;
};

}  // namespace

TEST(Schedule, AlphaBarIsIndependentProduct) {
  const auto s = ScheduleConfig{}.make();
  ASSERT_EQ(s.steps(), 200);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_NEAR(s.beta(200), 0.02, 1e-15);
  // Independent oracle: sum of logs in long double.
  long double log_a = 0;
  for (int t = 0; t < 200; ++t) log_a += std::log1p(-(1e-4L + t * (0.02L - 1e-4L) / 199.0L));
  EXPECT_NEAR(s.alpha(200), static_cast<double>(std::exp(log_a)), 1e-12);
  EXPECT_NEAR(s.alpha(200), 0.13218, 5e-6);
  for (int t = 2; t <= 200; ++t) EXPECT_LT(s.alpha(t), s.alpha(t - 1));
}

TEST(Schedule, RangeErrors) {
  EXPECT_EQ(code_of([] { make_schedule(0, 1e-4, 0.02); }), ErrorCode::BadRange);
  EXPECT_EQ(code_of([] { make_schedule(10, 0.03, 0.02); }), ErrorCode::BadRange);
  EXPECT_EQ(code_of([] { make_schedule(10, 0.0, 0.02); }), ErrorCode::BadRange);
  EXPECT_EQ(code_of([] { make_schedule(10, 1e-4, 1.0); }), ErrorCode::BadRange);
  const auto s = make_schedule(10, 1e-4, 0.02);
  EXPECT_EQ(code_of([&] { s.alpha(0); }), ErrorCode::StepOutOfRange);
  EXPECT_EQ(code_of([&] { s.beta(11); }), ErrorCode::StepOutOfRange);
  EXPECT_DOUBLE_EQ(make_schedule(1, 0.3, 0.3).alpha(1), 0.7);
}

TEST(Forward, SingleStepMomentsWithinThreeStandardErrors) {
  const auto s = make_schedule(20, 0.01, 0.2);
  Rng rng(1);
  const int n = 40000;
  Tensor<double> x(1, 1, 1, 0.8);
  double m = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = forward_step(x, 20, s, rng)[0];
    m += v;
    m2 += v * v;
  }
  m /= n;
  const double var = m2 / n - m * m;
  const double mean_exp = std::sqrt(0.8) * 0.8, var_exp = 0.2;
  EXPECT_NEAR(m, mean_exp, 3 * std::sqrt(var_exp / n));
  EXPECT_NEAR(var, var_exp, 3 * var_exp * std::sqrt(2.0 / (n - 1)));
}

TEST(Forward, MarginalUsesAlphaBar) {
  const auto s = ScheduleConfig{}.make();
  Rng rng(2);
  const int n = 40000;
  Tensor<double> x(1, 1, 1, -0.5);
  double m = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = forward_sample(x, 150, s, rng)[0];
    m += v;
    m2 += v * v;
  }
  m /= n;
  const double a = s.alpha(150);
  EXPECT_NEAR(m, -0.5 * std::sqrt(a), 3 * std::sqrt((1 - a) / n));
  EXPECT_NEAR(m2 / n - m * m, 1 - a, 3 * (1 - a) * std::sqrt(2.0 / (n - 1)));
}

TEST(Reverse, StepFormulaAndNoNoiseAtFirstStep) {
  const auto s = make_schedule(5, 0.1, 0.3);
  Tensor<double> x(1, 1, 2), eps(1, 1, 2);
  x[0] = 0.4, x[1] = -1.0;
  eps[0] = 0.2, eps[1] = 0.5;
  Rng rng(3);
  const auto out = reverse_step_from_noise(x, 1, eps, s, rng);
  const double b = 0.1, a = 0.9;
  EXPECT_NEAR(out[0], (0.4 - b / std::sqrt(1 - a) * 0.2) / std::sqrt(1 - b), 1e-12);
  EXPECT_NEAR(out[1], (-1.0 - b / std::sqrt(1 - a) * 0.5) / std::sqrt(1 - b), 1e-12);
  Rng r1(4), r2(4);
  const auto a1 = reverse_step_from_noise(x, 3, eps, s, r1), a2 = reverse_step_from_noise(x, 3, eps, s, r2);
  EXPECT_EQ(a1, a2);
  EXPECT_NE(a1, reverse_step_from_noise(x, 3, eps, s, r1));
  EXPECT_EQ(code_of([&] { reverse_step_from_noise(x, 1, Tensor<double>(1, 1, 3), s, rng); }), ErrorCode::ShapeMismatch);
}

TEST(AnalyticGM, SingleComponentPosteriorMatchesScalarOracle) {
  const auto s = ScheduleConfig{}.make();
  const double sd = 0.3, mean = 0.7;
  AnalyticGMDenoiser<double> den({{1.0, {mean}}}, sd, s);
  const int t = 80;
  const double a = s.alpha(t);
  Tensor<double> x(1, 1, 1, 0.1);
  // Gaussian conjugacy: E[x0 | x_t] = m + sqrt(a) s^2 / (a s^2 + 1 - a) * (x_t - sqrt(a) m).
  const double mu = mean + std::sqrt(a) * sd * sd / (a * sd * sd + 1 - a) * (0.1 - std::sqrt(a) * mean);
  EXPECT_NEAR(den.posterior_mean(x, t)[0], mu, 1e-12);
  const auto eps = den.predict_noise(x, t, {});
  EXPECT_NEAR(eps[0], (0.1 - std::sqrt(a) * mu) / std::sqrt(1 - a), 1e-12);
}

TEST(AnalyticGM, SymmetricMixtureAndValidation) {
  const auto s = ScheduleConfig{}.make();
  AnalyticGMDenoiser<double> den({{0.5, {1.0, -1.0}}, {0.5, {-1.0, 1.0}}}, 0.1, s);
  const auto m = den.posterior_mean(Tensor<double>(1, 1, 2, 0.0), 50);
  EXPECT_NEAR(m[0], 0.0, 1e-12);
  EXPECT_NEAR(m[1], 0.0, 1e-12);
  // Far from the origin, the nearer component dominates.
  Tensor<double> x(1, 1, 2);
  x[0] = 1.0, x[1] = -1.0;
  EXPECT_NEAR(den.posterior_mean(x, 1)[0], 1.0, 1e-3);
  EXPECT_EQ(code_of([&] { AnalyticGMDenoiser<double>({{0.4, {0.0}}}, 0.1, s); }), ErrorCode::BadRange);
  EXPECT_EQ(code_of([&] { AnalyticGMDenoiser<double>({}, 0.1, s); }), ErrorCode::BadRange);
  EXPECT_EQ(code_of([&] { den.posterior_mean(Tensor<double>(1, 1, 3), 5); }), ErrorCode::ShapeMismatch);
}

TEST(AnalyticGM, PointMassChainLandsOnTheMean) {
  const auto s = ScheduleConfig{}.make();
  AnalyticGMDenoiser<double> den({{1.0, {0.25, -0.5}}}, 1e-3, s);
  Rng rng(7);
  const auto x = sample_raw({1, 1, 2}, {}, s, den, rng);
  EXPECT_NEAR(x[0], 0.25, 0.01);
  EXPECT_NEAR(x[1], -0.5, 0.01);
}

class LearnedDenoiserTest : public ::testing::Test {
 protected:
  NoiseSchedule sched = ScheduleConfig{}.make();
  SceneBundle scene = sample_dataset(1, 21).front();
};

TEST_F(LearnedDenoiserTest, InputLayout) {
  LearnedDenoiser den(32, 64, sched, {}, 1);
  EXPECT_EQ(LearnedDenoiser::input_channels({}), 11);
  const auto cond = make_condition(scene.seg, instance_edges(scene.instance_map), kNumClasses);
  Tensor<float> x(3, 32, 64, 0.5f);
  const int t = 120;
  const auto k = den.coefficients(t);
  const double a = sched.alpha(t), sigma = std::sqrt((1 - a) / a);
  EXPECT_NEAR(k.sigma, sigma, 1e-12);
  EXPECT_NEAR(k.c_in, 1 / std::sqrt(sigma * sigma + 0.25), 1e-12);
  const auto in = den.build_input(x, t, cond);
  ASSERT_EQ(in.channels(), 11);
  EXPECT_NEAR(in(2, 5, 5), 0.5 / std::sqrt(a) * k.c_in, 1e-6);
  for (int c = 0; c < kNumClasses; ++c) EXPECT_EQ(in(3 + c, 7, 9), scene.seg(7, 9) == c ? 1.0f : 0.0f);
  EXPECT_EQ(in(9, 7, 9), cond.edge(7, 9));
  EXPECT_NEAR(in(10, 0, 0), std::log(sigma) / 4, 1e-6);
  EXPECT_EQ(code_of([&] { den.build_input(Tensor<float>(3, 16, 64), t, cond); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { make_condition(scene.seg, EdgeMap(16, 64), kNumClasses); }), ErrorCode::DimMismatch);
}

TEST_F(LearnedDenoiserTest, ZeroOutputLayerGivesSkipOnlyEstimate) {
  LearnedDenoiser den(32, 64, sched, {}, 1);
  const auto cond = make_condition(scene.seg, EdgeMap(32, 64, 0), kNumClasses);
  Tensor<float> x(3, 32, 64, -0.3f);
  const int t = 60;
  const double a = sched.alpha(t), s2 = (1 - a) / a;
  const auto eps = den.predict_noise(x, t, cond);
  for (float v : eps.data()) EXPECT_NEAR(v, -0.3 / std::sqrt(a) * std::sqrt(s2) / (s2 + 0.25), 1e-5);
}

TEST_F(LearnedDenoiserTest, InitialLossMatchesClosedForm) {
  // With F = 0, eps_hat - eps = (sigma x0 - sd^2 eps) / (sigma^2 + sd^2), so the
  // expected loss at step t is (sigma^2 E[x0^2] + sd^4) / (sigma^2 + sd^2)^2.
  LearnedDenoiser den(32, 64, sched, {}, 1);
  const DenoiserExample ex{to_model_range(scene.image), scene.seg, instance_edges(scene.instance_map)};
  double ex2 = 0;
  for (float v : ex.x0.data()) ex2 += static_cast<double>(v) * v;
  ex2 /= static_cast<double>(ex.x0.size());
  for (int t : {1, 50, 200}) {
    const double a = sched.alpha(t), s2 = (1 - a) / a, sd2 = 0.25;
    const double expected = (s2 * ex2 + sd2 * sd2) / ((s2 + sd2) * (s2 + sd2));
    double sum = 0;
    const int reps = 50;
    for (int r = 0; r < reps; ++r)
      sum += detail::denoiser_loss_and_grad(den, ex, {t, false, static_cast<std::uint64_t>(r)}, nullptr);
    EXPECT_NEAR(sum / reps, expected, 0.01 * expected) << "t=" << t;
  }
}

TEST_F(LearnedDenoiserTest, OutputLayerGradientIsExactForQuadraticLoss) {
  LearnedDenoiser den(32, 64, sched, {16, 2, 0.5, kNumClasses}, 4);
  Rng rng(5);
  for (auto& v : den.net().params().back().weight) v = static_cast<float>(rng.uniform(-0.05, 0.05));
  const DenoiserExample ex{to_model_range(scene.image), scene.seg, instance_edges(scene.instance_map)};
  const detail::DiffusionDraw d{90, false, 11};
  auto g = den.net().zero_gradients();
  detail::denoiser_loss_and_grad(den, ex, d, &g);
  auto& w = den.net().params().back().weight;
  for (std::size_t i : {0u, 17u, 200u}) {
    const float v = w[i];
    const float h = 1e-2f;
    w[i] = v + h;
    const double lp = detail::denoiser_loss_and_grad(den, ex, d, nullptr);
    w[i] = v - h;
    const double lm = detail::denoiser_loss_and_grad(den, ex, d, nullptr);
    w[i] = v;
    EXPECT_NEAR(g.back().weight[i], (lp - lm) / (2 * h), 2e-3 * std::abs((lp - lm) / (2 * h)) + 1e-6);
  }
}

TEST_F(LearnedDenoiserTest, TrainingReducesValidationLoss) {
  const auto ds = sample_dataset(60, 8);
  std::vector<DenoiserExample> ex;
  for (const auto& s : ds) ex.push_back({to_model_range(s.image), s.seg, instance_edges(s.instance_map)});
  LearnedDenoiser den(32, 64, sched, {16, 3, 0.5, kNumClasses}, 1);
  DenoiserTrainConfig cfg;
  cfg.epochs = 10;
  cfg.val_examples = 12;
  DenoiserTrainReport rep;
  train_denoiser(den, ex, cfg, &rep);
  ASSERT_EQ(rep.epoch_val_losses.size(), 10u);
  EXPECT_LT(rep.epoch_val_losses.back(), 0.85 * rep.init_val_loss);
  EXPECT_LT(rep.epoch_val_losses.back(), rep.epoch_val_losses.front());

  ex[0].x0[0] = std::nanf("");
  LearnedDenoiser bad(32, 64, sched, {16, 3, 0.5, kNumClasses}, 1);
  EXPECT_EQ(code_of([&] { train_denoiser(bad, ex, cfg); }), ErrorCode::Diverged);
  EXPECT_EQ(code_of([&] { train_denoiser(bad, {}, cfg); }), ErrorCode::EmptyInput);
}

TEST_F(LearnedDenoiserTest, SamplingIsSeededAndBounded) {
  LearnedDenoiser den(32, 64, make_schedule(10, 1e-3, 0.2), {8, 2, 0.5, kNumClasses}, 1);
  const auto cond = make_condition(scene.seg, instance_edges(scene.instance_map), kNumClasses);
  Rng r1(9), r2(9);
  const auto a = sample({3, 32, 64}, cond, den.schedule(), den, r1);
  const auto b = sample({3, 32, 64}, cond, den.schedule(), den, r2);
  EXPECT_EQ(a, b);
  for (float v : a.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Reverse, ScalarHandExample) {
  // beta_2 = 0.1 and alpha_2 = (1 - 4/9) * 0.9 = 0.5.
  const auto s = NoiseSchedule::from_betas({4.0 / 9.0, 0.1});
  EXPECT_NEAR(s.alpha(2), 0.5, 1e-15);
  Tensor<double> x(1, 1, 1), eps(1, 1, 1);
  x[0] = 1.0, eps[0] = 0.2;
  Rng rng(9), copy = rng;
  const double z = copy.normal();
  const auto out = reverse_step_from_noise(x, 2, eps, s, rng);
  EXPECT_NEAR(out[0] - std::sqrt(0.1) * z, 1.0242783136894626, 1e-12);
}
