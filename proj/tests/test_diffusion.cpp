#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "difflight/diffusion/sampler.hpp"
#include "difflight/rng.hpp"

using namespace difflight;
using namespace difflight::diffusion;

namespace {

template <typename S>
WindowArray<S> random_window(Rng& rng, int rows = 8, int cols = 24, double lo = -1, double hi = 1) {
  WindowArray<S> w(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) w(r, c) = static_cast<S>(rng.uniform(lo, hi));
  return w;
}

// The noise implied by (x_k, x0): exact inverse of forward_noise.
template <typename S>
WindowArray<S> implied_eps(const WindowArray<S>& x_k, const WindowArray<S>& x0, int k,
                           const DiffusionScheduleT<S>& sch) {
  const S ab = sch.abar(k);
  return (x_k - std::sqrt(ab) * x0) / std::sqrt(S(1) - ab);
}

}  // namespace

TEST_CASE("schedule tables: product identity, monotonicity, beta range") {
  auto sch = DiffusionSchedule::cosine(100);
  sch.validate();
  CHECK(sch.abar(0) == 1.0f);
  CHECK(sch.abar(1) > 0.99f);  // near-1 at the start
  CHECK(sch.abar(100) < 1e-3f);
  double prod = 1;
  for (int k = 1; k <= 100; ++k) {
    prod *= sch.alpha[k - 1];
    CHECK(sch.alpha_bar[k - 1] == doctest::Approx(prod).epsilon(1e-5));
    CHECK(sch.alpha[k - 1] == doctest::Approx(1.0 - sch.beta[k - 1]));
  }
}

TEST_CASE("explicit betas: abar(2) = 0.9 * 0.8 = 0.72") {
  auto sch = DiffusionSchedule::from_betas({0.1, 0.2});
  CHECK(sch.abar(2) == doctest::Approx(0.72));
}

TEST_CASE("sampling plans are strictly decreasing and end at 1") {
  for (int n : {1, 10, 20, 50, 100}) {
    auto plan = DiffusionSchedule::make_plan(100, n);
    CHECK(plan.back() == 1);
    CHECK(plan.front() == (n == 1 ? 1 : 100));
    for (size_t i = 0; i + 1 < plan.size(); ++i) CHECK(plan[i] > plan[i + 1]);
  }
  CHECK(DiffusionSchedule::make_plan(100, 100).size() == 100);
}

TEST_CASE("forward_noise endpoints and out-of-range k") {
  auto sch = DiffusionSchedule::cosine(100);
  Rng rng(1);
  auto x0 = random_window<float>(rng);
  auto eps = random_window<float>(rng, 8, 24, -2, 2);
  // abar -> 1 limit: x_k ~ x0 at small k
  auto x1 = forward_noise(x0, 1, eps, sch);
  CHECK(((x1 - x0).abs().maxCoeff()) < 0.15f);
  CHECK((forward_noise(x0, 0, eps, sch) == x0).all());
  CHECK_THROWS_AS(forward_noise(x0, 101, eps, sch), ContractViolation);
}

TEST_CASE("forward_noise sample mean matches sqrt(abar) x0 within 3 sigma") {
  auto sch = DiffusionSchedule::cosine(100);
  const int k = 60, n = 100000;
  Rng rng(7);
  WindowArray<float> x0(1, 4);
  x0 << 0.5f, -0.25f, 0.8f, -0.9f;
  Eigen::Array<double, 1, 4> acc = Eigen::Array<double, 1, 4>::Zero();
  for (int i = 0; i < n; ++i) {
    WindowArray<float> eps(1, 4);
    for (int c = 0; c < 4; ++c) eps(0, c) = static_cast<float>(rng.normal());
    acc += forward_noise(x0, k, eps, sch).row(0).cast<double>();
  }
  acc /= n;
  const double ab = sch.abar(k);
  const double sigma = std::sqrt((1.0 - ab) / n);  // std of the sample mean
  for (int c = 0; c < 4; ++c) CHECK(std::abs(acc(0, c) - std::sqrt(ab) * x0(0, c)) < 3.0 * sigma);
}

TEST_CASE("predict_x0 inverts forward_noise") {
  auto sch = DiffusionSchedule::cosine(100);
  Rng rng(3);
  auto x0 = random_window<float>(rng);
  SUBCASE("exact inversion with the true eps") {
    auto eps = random_window<float>(rng, 8, 24, -2, 2);
    auto xk = forward_noise(x0, 37, eps, sch);
    auto rec = predict_x0(xk, eps, 37, sch);
    CHECK((rec - x0).abs().maxCoeff() < 1e-5f);
  }
  SUBCASE("eps_hat = 0 gives x_k / sqrt(abar)") {
    auto xk = random_window<float>(rng);
    WindowArray<float> zero = WindowArray<float>::Zero(8, 24);
    auto rec = predict_x0(xk, zero, 20, sch);
    CHECK((rec - xk / std::sqrt(sch.abar(20))).abs().maxCoeff() < 1e-6f);
  }
  SUBCASE("round-trip across every k") {
    float worst = 0;
    for (int k = 1; k <= 100; ++k) {
      auto eps = random_window<float>(rng, 8, 24, -2, 2);
      auto xk = forward_noise(x0, k, eps, sch);
      worst = std::max(worst, (predict_x0(xk, eps, k, sch) - x0).abs().maxCoeff());
    }
    CHECK(worst <= 1e-3f);
  }
}

TEST_CASE("ddim: oracle noise predictor reconstructs x0 on every plan") {
  auto sch = DiffusionSchedule::cosine(100);
  Rng rng(11);
  auto x0 = random_window<float>(rng);
  for (int steps : {100, 50, 20, 10}) {
    sch.set_plan(steps);
    auto eps0 = random_window<float>(rng, 8, 24, -2, 2);
    auto x = forward_noise(x0, 100, eps0, sch);
    for (size_t i = 0; i < sch.sampling_plan.size(); ++i) {
      const int k = sch.sampling_plan[i];
      const int k_prev = (i + 1 < sch.sampling_plan.size()) ? sch.sampling_plan[i + 1] : 0;
      auto eps_hat = implied_eps(x, x0, k, sch);
      x = ddim_step(x, eps_hat, k, k_prev, sch);
    }
    CAPTURE(steps);
    CHECK((x - x0).abs().maxCoeff() <= 1e-3f);
  }
}

TEST_CASE("ddim: k_prev = 0 returns x0_hat exactly; plan violations rejected") {
  auto sch = DiffusionSchedule::cosine(100);
  sch.set_plan(10);
  Rng rng(13);
  auto xk = random_window<float>(rng);
  auto eps = random_window<float>(rng);
  auto out = ddim_step(xk, eps, 1, 0, sch);
  auto x0h = predict_x0(xk, eps, 1, sch);
  CHECK((out - x0h).abs().maxCoeff() == 0.0f);

  CHECK_THROWS_AS(ddim_step(xk, eps, 55, 10, sch), ContractViolation);  // 55 not in the 10-step plan
  CHECK_THROWS_AS(ddim_step(xk, eps, 12, 100, sch), ContractViolation);  // k_prev >= k
}

TEST_CASE("cfg identities") {
  Rng rng(17);
  auto ec = random_window<float>(rng);
  auto eu = random_window<float>(rng);
  CHECK((cfg_noise(ec, eu, 1.0f) - ec).abs().maxCoeff() < 1e-7f);
  CHECK((cfg_noise(ec, eu, 0.0f) - eu).abs().maxCoeff() < 1e-7f);
  CHECK((cfg_noise(ec, ec, 3.7f) - ec).abs().maxCoeff() < 1e-7f);

  // affine in omega: r(w1) + r(w2) = 2 r((w1+w2)/2)
  auto r1 = cfg_noise(ec, eu, 0.4f);
  auto r2 = cfg_noise(ec, eu, 2.0f);
  auto rm = cfg_noise(ec, eu, 1.2f);
  CHECK(((r1 + r2) - 2.0f * rm).abs().maxCoeff() < 1e-5f);
}

TEST_CASE("prcd composition: reductions, checkerboard brute force, partition enforcement") {
  Rng rng(19);
  auto er = random_window<float>(rng);
  auto en = random_window<float>(rng);

  MaskPair all_obs = MaskPair::from_obs(StepMask::Constant(8, true));
  CHECK((prcd_compose(er, en, all_obs) == er).all());
  MaskPair none_obs = MaskPair::from_obs(StepMask::Constant(8, false));
  CHECK((prcd_compose(er, en, none_obs) == en).all());

  StepMask checker(8);
  for (int t = 0; t < 8; ++t) checker[t] = (t % 2 == 0);
  auto out = prcd_compose(er, en, MaskPair::from_obs(checker));
  for (int t = 0; t < 8; ++t)
    for (int c = 0; c < 24; ++c) CHECK(out(t, c) == (checker[t] ? er(t, c) : en(t, c)));

  // selection property: composing identical inputs is the identity
  auto same = prcd_compose(er, er, MaskPair::from_obs(checker));
  CHECK((same == er).all());

  MaskPair overlapping;
  overlapping.m_obs = StepMask::Constant(8, true);
  overlapping.m_mis = StepMask::Constant(8, true);
  CHECK_THROWS_AS(prcd_compose(er, en, overlapping), ContractViolation);
}
