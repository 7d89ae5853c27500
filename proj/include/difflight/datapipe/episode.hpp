#pragma once

#include <array>
#include <string>
#include <vector>

#include "difflight/trafficsim/network.hpp"

namespace difflight::datapipe {

// One control step of one intersection: raw (unnormalized) vehicle counts.
struct StepRecord {
  std::array<float, trafficsim::kObsDim> obs{};
  int action = 0;  // phase index 0..3
  float reward = 0;  // queue sum at the sample instant
};

struct Episode {
  std::string policy;
  std::uint64_t seed = 0;
  int n_intersections = 0;
  int n_steps = 0;        // control steps
  int control_period = 15;
  std::vector<StepRecord> steps;  // [step * n_intersections + intersection]
  std::vector<trafficsim::VehicleRecord> vehicles;

  const StepRecord& at(int step, int inter) const {
    return steps[static_cast<size_t>(step) * static_cast<size_t>(n_intersections) + static_cast<size_t>(inter)];
  }
  StepRecord& at(int step, int inter) {
    return steps[static_cast<size_t>(step) * static_cast<size_t>(n_intersections) + static_cast<size_t>(inter)];
  }
  int episode_seconds() const { return n_steps * control_period; }
};

// Line-delimited episode log: one record per control step per intersection
// (fields t, intersection_id, obs, action, reward), then a trailer of
// vehicle records.
void save_episode(const std::string& path, const Episode& ep);
Episode load_episode(const std::string& path);
std::string episode_jsonl(const Episode& ep);
Episode parse_episode_jsonl(const std::string& text);

}  // namespace difflight::datapipe
