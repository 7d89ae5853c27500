#include "difflight/sfm/sfm.hpp"

namespace difflight::sfm {

using datapipe::Episode;
using datapipe::MaskSet;
using trafficsim::GridTopology;
using trafficsim::kLanes;
using trafficsim::kObsDim;

double impute_lane(std::span<const double> upstream_prev_values, int k) {
  require(k > 0, "sfm: k must be positive");
  double sum = 0;
  for (double v : upstream_prev_values) sum += v;
  return sum / static_cast<double>(k);
}

std::array<float, kObsDim> impute_observation(const trafficsim::NetworkSpec& net, const Episode& ep,
                                              const MaskSet& mask, int intersection, int step,
                                              const SfmConfig& cfg) {
  std::array<float, kObsDim> out{};
  if (step == 0) return out;  // no previous step: zeros
  const GridTopology topo(net.rows, net.cols);
  const auto feeders = topo.all_feeders(intersection);
  double num_sum = 0, queue_sum = 0;
  for (const auto& fd : feeders) {
    if (fd.neighbor < 0) continue;                      // boundary slot contributes 0
    if (!mask.observed(fd.neighbor, step - 1)) continue;  // missing neighbor contributes 0
    const auto& obs = ep.at(step - 1, fd.neighbor).obs;
    num_sum += obs[static_cast<size_t>(2 * fd.lane + 0)];
    queue_sum += obs[static_cast<size_t>(2 * fd.lane + 1)];
  }
  const float num = static_cast<float>(num_sum / cfg.k);
  const float queue = static_cast<float>(queue_sum / cfg.k);
  for (int lane = 0; lane < kLanes; ++lane) {
    out[static_cast<size_t>(2 * lane + 0)] = num;
    out[static_cast<size_t>(2 * lane + 1)] = queue;
  }
  return out;
}

double impute_reward(const std::array<float, kObsDim>& obs) {
  double sum = 0;
  for (int lane = 0; lane < kLanes; ++lane) sum += obs[static_cast<size_t>(2 * lane + 1)];
  return sum;
}

Episode impute_episode(const trafficsim::NetworkSpec& net, const Episode& ep, const MaskSet& mask,
                       const SfmConfig& cfg) {
  Episode out = ep;
  for (int step = 0; step < ep.n_steps; ++step) {
    for (int i = 0; i < ep.n_intersections; ++i) {
      if (mask.observed(i, step)) continue;
      auto& rec = out.at(step, i);
      rec.obs = impute_observation(net, ep, mask, i, step, cfg);
      rec.reward = static_cast<float>(impute_reward(rec.obs));
    }
  }
  return out;
}

Episode zero_fill_episode(const Episode& ep, const MaskSet& mask) {
  Episode out = ep;
  for (int step = 0; step < ep.n_steps; ++step) {
    for (int i = 0; i < ep.n_intersections; ++i) {
      if (mask.observed(i, step)) continue;
      auto& rec = out.at(step, i);
      rec.obs.fill(0.0f);
      rec.reward = 0.0f;
    }
  }
  return out;
}

double masked_obs_mae(const Episode& truth, const Episode& imputed, const MaskSet& mask) {
  double err = 0;
  long n = 0;
  for (int step = 0; step < truth.n_steps; ++step) {
    for (int i = 0; i < truth.n_intersections; ++i) {
      if (mask.observed(i, step)) continue;
      const auto& a = truth.at(step, i).obs;
      const auto& b = imputed.at(step, i).obs;
      for (int c = 0; c < kObsDim; ++c) {
        err += std::abs(static_cast<double>(a[static_cast<size_t>(c)]) - b[static_cast<size_t>(c)]);
        n += 1;
      }
    }
  }
  require(n > 0, "masked_obs_mae: mask hides no cells");
  return err / static_cast<double>(n);
}

}  // namespace difflight::sfm
