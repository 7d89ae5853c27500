#pragma once

// Store-and-forward imputation: a missing lane value at time t is the mean
// of the k=12 connected upstream entrance lanes' values at t-1, with
// unavailable lanes contributing 0 while the divisor stays k.

#include <array>
#include <span>

#include "difflight/datapipe/dataset.hpp"
#include "difflight/datapipe/mask.hpp"

namespace difflight::sfm {

struct SfmConfig {
  int k = 12;
};

// (1/k) * sum of the connected lanes' previous-step values. Unavailable
// lanes must already be zeroed by the caller.
double impute_lane(std::span<const double> upstream_prev_values, int k = 12);

// Full-intersection imputation at control step `step` (raw vehicle counts,
// both features per lane). At step 0 there is no previous step: zeros.
std::array<float, trafficsim::kObsDim> impute_observation(const trafficsim::NetworkSpec& net,
                                                          const datapipe::Episode& ep, const datapipe::MaskSet& mask,
                                                          int intersection, int step, const SfmConfig& cfg = {});

// Reward recomputed from an (imputed) observation: sum of L_queue.
double impute_reward(const std::array<float, trafficsim::kObsDim>& obs);

// Missing cells replaced by SFM (or zeros); observed cells never overwritten.
datapipe::Episode impute_episode(const trafficsim::NetworkSpec& net, const datapipe::Episode& ep,
                                 const datapipe::MaskSet& mask, const SfmConfig& cfg = {});
datapipe::Episode zero_fill_episode(const datapipe::Episode& ep, const datapipe::MaskSet& mask);

// Mean absolute observation error over masked cells against the ground truth.
double masked_obs_mae(const datapipe::Episode& truth, const datapipe::Episode& imputed,
                      const datapipe::MaskSet& mask);

}  // namespace difflight::sfm
