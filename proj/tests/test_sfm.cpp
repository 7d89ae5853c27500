#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "difflight/sfm/sfm.hpp"

using namespace difflight;
using namespace difflight::sfm;
using namespace difflight::datapipe;
using trafficsim::NetworkSpec;

namespace {

NetworkSpec net33() {
  NetworkSpec n;
  n.rows = 3;
  n.cols = 3;
  return n;
}

NetworkSpec net22() {
  NetworkSpec n;
  n.rows = 2;
  n.cols = 2;
  return n;
}

// sinusoidal demand, piecewise-constant in 60 s segments, balanced turn
// shares so lane loads are comparable across an intersection
trafficsim::FlowSpec sinusoidal_flow(const NetworkSpec& net, int seconds, double base = 0.35) {
  auto flow = trafficsim::uniform_flow(net, seconds, base);
  for (auto& src : flow.sources) {
    src.rate.clear();
    for (int t = 0; t < seconds; t += 60) {
      double rate = base + 0.6 * base * std::sin(2.0 * M_PI * t / 900.0);
      src.rate.push_back({t, t + 60, rate});
    }
    for (auto& r : src.routes) r.weight = 1.0 / 3.0;
  }
  return flow;
}

}  // namespace

TEST_CASE("sfm lane rule: mean of constants, arithmetic mean") {
  std::vector<double> same(12, 4.5);
  CHECK(impute_lane(same) == doctest::Approx(4.5));
  std::vector<double> ramp;
  for (int i = 1; i <= 12; ++i) ramp.push_back(i);
  CHECK(impute_lane(ramp) == doctest::Approx(6.5));
  // unavailable lanes contribute zero while the divisor stays k
  std::vector<double> partial(12, 0.0);
  partial[0] = 12.0;
  CHECK(impute_lane(partial) == doctest::Approx(1.0));
}

TEST_CASE("sfm bound: imputed value stays within [0, max] of present neighbors") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> vals;
    double mx = 0;
    for (int i = 0; i < 12; ++i) {
      vals.push_back(rng.uniform(0, 20));
      mx = std::max(mx, vals.back());
    }
    double v = impute_lane(vals);
    CHECK(v >= 0.0);
    CHECK(v <= mx);
  }
}

TEST_CASE("impute_reward sums queue features; consistent with simulator reward") {
  std::array<float, 24> obs{};
  CHECK(impute_reward(obs) == doctest::Approx(0.0));
  for (int lane = 0; lane < 12; ++lane) obs[static_cast<size_t>(2 * lane + 1)] = 1.0f;
  CHECK(impute_reward(obs) == doctest::Approx(12.0));

  // fully observed cell: reward equals the queue sum of its own observation
  NetworkSpec net = net33();
  auto flow = trafficsim::uniform_flow(net, 300, 0.15);
  Episode ep = run_behavior_policy(net, flow, PolicyKind::FixedTime, 3);
  for (int s = 0; s < ep.n_steps; s += 5)
    for (int i = 0; i < ep.n_intersections; ++i)
      CHECK(impute_reward(ep.at(s, i).obs) == doctest::Approx(ep.at(s, i).reward));
}

TEST_CASE("imputation never overwrites observed cells") {
  NetworkSpec net = net22();
  auto flow = sinusoidal_flow(net, 600);
  Episode ep = run_behavior_policy(net, flow, PolicyKind::FixedTime, 5);
  MaskSet mask = generate_mask(net, ep.n_steps, MaskPattern::RM, 0.3, 9);
  Episode imp = impute_episode(net, ep, mask);
  for (int s = 0; s < ep.n_steps; ++s)
    for (int i = 0; i < ep.n_intersections; ++i)
      if (mask.observed(i, s)) CHECK(imp.at(s, i).obs == ep.at(s, i).obs);
}

TEST_CASE("sfm beats zero-fill on a sinusoidal-demand rm-30% episode") {
  NetworkSpec net = net22();
  auto flow = sinusoidal_flow(net, 900);
  Episode ep = run_behavior_policy(net, flow, PolicyKind::FixedTime, 5);
  MaskSet mask = generate_mask(net, ep.n_steps, MaskPattern::RM, 0.3, 9);
  Episode by_sfm = impute_episode(net, ep, mask);
  Episode by_zero = zero_fill_episode(ep, mask);
  const double mae_sfm = masked_obs_mae(ep, by_sfm, mask);
  const double mae_zero = masked_obs_mae(ep, by_zero, mask);
  CAPTURE(mae_sfm);
  CAPTURE(mae_zero);
  CHECK(mae_sfm < mae_zero);
}
