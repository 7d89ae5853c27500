#include "difflight/datapipe/policies.hpp"

namespace difflight::datapipe {

using trafficsim::Phase;
using trafficsim::PhaseTable;

const char* policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::FixedTime: return "fixed_time";
    case PolicyKind::GreedyQueue: return "greedy_queue";
    case PolicyKind::EpsilonGreedyQueue: return "epsilon_greedy_queue";
    case PolicyKind::Random: return "random";
  }
  return "?";
}

PolicyKind policy_from_name(const std::string& s) {
  if (s == "fixed_time") return PolicyKind::FixedTime;
  if (s == "greedy_queue") return PolicyKind::GreedyQueue;
  if (s == "epsilon_greedy_queue") return PolicyKind::EpsilonGreedyQueue;
  if (s == "random") return PolicyKind::Random;
  throw ContractViolation("unknown behavior policy '" + s + "'");
}

namespace {

Phase greedy_phase(const trafficsim::ObservationVector& obs) {
  int best = 0;
  float best_q = -1;
  for (int p = 0; p < trafficsim::kPhases; ++p) {
    const auto& pr = PhaseTable::pairs()[static_cast<size_t>(p)];
    float q = obs[static_cast<size_t>(2 * pr[0] + 1)] + obs[static_cast<size_t>(2 * pr[1] + 1)];
    if (q > best_q) {
      best_q = q;
      best = p;
    }
  }
  return static_cast<Phase>(best);
}

}  // namespace

Phase decide_policy(PolicyKind kind, const trafficsim::ObservationVector& obs, int control_step, double epsilon,
                    Rng& rng) {
  switch (kind) {
    case PolicyKind::FixedTime: return static_cast<Phase>(control_step % 4);
    case PolicyKind::GreedyQueue: return greedy_phase(obs);
    case PolicyKind::EpsilonGreedyQueue:
      if (rng.bernoulli(epsilon)) return static_cast<Phase>(rng.uniform_int(4));
      return greedy_phase(obs);
    case PolicyKind::Random: return static_cast<Phase>(rng.uniform_int(4));
  }
  return Phase::A;
}

Episode run_behavior_policy(const trafficsim::NetworkSpec& net, const trafficsim::FlowSpec& flow, PolicyKind kind,
                            std::uint64_t seed, double epsilon) {
  trafficsim::Simulator sim(net, flow, seed);
  Rng policy_rng = Rng(seed).fork("policy");
  const int n = net.n_intersections();
  Episode ep;
  ep.policy = policy_name(kind);
  ep.seed = seed;
  ep.n_intersections = n;
  ep.control_period = net.control_period;
  ep.n_steps = flow.episode_seconds / net.control_period;
  ep.steps.resize(static_cast<size_t>(ep.n_steps) * static_cast<size_t>(n));

  std::vector<Phase> actions(static_cast<size_t>(n), Phase::A);
  for (int step = 0; step < ep.n_steps; ++step) {
    for (int i = 0; i < n; ++i) {
      StepRecord& r = ep.at(step, i);
      r.obs = sim.observe(i);
      r.reward = static_cast<float>(sim.reward(i));
      actions[static_cast<size_t>(i)] = decide_policy(kind, r.obs, step, epsilon, policy_rng);
      r.action = static_cast<int>(actions[static_cast<size_t>(i)]);
    }
    for (int tick = 0; tick < net.control_period; ++tick) sim.step(actions);
  }
  ep.vehicles = sim.records();
  return ep;
}

}  // namespace difflight::datapipe
