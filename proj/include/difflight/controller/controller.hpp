#pragma once

// Closed-loop inference. Per-intersection agents hold a C-step history
// buffer (with per-step availability), run the shared DDIM sampling plan in
// lockstep rounds with partial-rewards composition and classifier-free
// guidance, exchange generated observations between rounds (DCM), decode
// the next action through inverse dynamics, and drive the simulator.

#include <functional>

#include "difflight/datapipe/window.hpp"
#include "difflight/trainer/trainer.hpp"
#include "difflight/trafficsim/simulator.hpp"

namespace difflight::controller {

struct InferenceConfig {
  int sampling_steps = 10;
  float omega = 1.2f;
  bool dcm_enabled = true;
  bool dcm_replace_all = false;  // replace every neighbor cell, not just missing ones
  bool clamp_observed = true;    // re-noise observed history cells after each step
  float future_reward = 1.0f;    // conditioning value for the H future slots
  bool use_invdyn = true;        // off: greedy-queue rule on the imputed observation
};

struct RunHooks {
  // (control_step, round, agent, eps_hat) after each denoise round
  std::function<void(int, int, int, const diffusion::WindowArray<float>&)> on_eps;
  // (control_step, agent, published x0_hat) after each round's exchange
  std::function<void(int, int, const diffusion::WindowArray<float>&)> on_publish;
};

struct RunResult {
  double att = 0;
  datapipe::Episode episode;  // ground-truth log of the closed-loop run
  long vehicles_entered = 0;
  long vehicles_completed = 0;
};

RunResult run_closed_loop(const trainer::TrainedModel& model, const trafficsim::NetworkSpec& net,
                          const trafficsim::FlowSpec& flow, const datapipe::MaskSet& mask,
                          const InferenceConfig& icfg, std::uint64_t seed, const RunHooks* hooks = nullptr);

}  // namespace difflight::controller
