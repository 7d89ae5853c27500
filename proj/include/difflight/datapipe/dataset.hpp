#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "difflight/datapipe/episode.hpp"
#include "difflight/datapipe/policies.hpp"

namespace difflight::datapipe {

// Observations map to [-1, 1] around half capacity; rewards map to [0, 1]
// with 1 = empty intersection, so the inference-time "condition on 1"
// targets the best case.
struct Normalization {
  int lane_capacity = 30;
  float q_max = 360;  // 12 * lane_capacity

  static Normalization from(const trafficsim::NetworkSpec& net) {
    return {net.lane_capacity, static_cast<float>(trafficsim::kLanes * net.lane_capacity)};
  }

  float obs_to_unit(float count) const {
    float v = 2.0f * (count / static_cast<float>(lane_capacity)) - 1.0f;
    return std::min(1.0f, std::max(-1.0f, v));
  }
  float reward_to_unit(float queue_sum) const { return 1.0f - std::min(queue_sum / q_max, 1.0f); }

  // Continuous inverses (diagnostics) and the exact rounded inverse on the
  // representable range of integer vehicle counts.
  double unit_to_obs(float v) const { return (static_cast<double>(v) + 1.0) * 0.5 * lane_capacity; }
  int unit_to_count(float v) const {
    double x = unit_to_obs(v);
    x = std::min(static_cast<double>(lane_capacity), std::max(0.0, x));
    return static_cast<int>(std::llround(x));
  }
  double unit_to_queue_sum(float v) const { return (1.0 - static_cast<double>(v)) * q_max; }
};

struct OfflineDataset {
  trafficsim::NetworkSpec net;
  std::string topo_hash;
  Normalization norm;
  std::vector<Episode> episodes;

  int n_steps() const { return episodes.empty() ? 0 : episodes.front().n_steps; }
  int n_intersections() const { return net.n_intersections(); }
  void validate() const;
};

// Offline dataset construction: the requested behavior policies in equal
// shares, episodes_per_policy runs each with derived seeds.
OfflineDataset build_dataset(const trafficsim::NetworkSpec& net, const trafficsim::FlowSpec& flow,
                             const std::vector<PolicyKind>& policies, int episodes_per_policy, std::uint64_t seed);

void save_dataset(const std::string& dir, const OfflineDataset& ds);
OfflineDataset load_dataset(const std::string& dir);

}  // namespace difflight::datapipe
