#pragma once

// Deterministic discrete-time queue simulator, dt = 1 s. Vehicles traverse
// links at free-flow speed, queue at entrance lanes, and discharge under
// green at 1 vehicle per saturation_period seconds when downstream capacity
// allows. Blocked vehicles simply wait.

#include <array>
#include <deque>
#include <vector>

#include "difflight/rng.hpp"
#include "difflight/trafficsim/network.hpp"

namespace difflight::trafficsim {

using ObservationVector = std::array<float, kObsDim>;

class Simulator {
 public:
  Simulator(NetworkSpec net, FlowSpec flow, std::uint64_t seed);

  // One 1-second tick. An action differing from the current phase before
  // min_action_duration has elapsed is rejected for that intersection.
  void step(const std::vector<Phase>& actions);

  // (L_num, L_queue) per entrance lane, fixed N,E,S,W x left,through,right order.
  ObservationVector observe(int intersection) const;

  // Sum of queue lengths over the 12 entrance lanes.
  int reward(int intersection) const;

  int now() const { return now_; }
  int n_intersections() const { return net_.n_intersections(); }
  const NetworkSpec& net() const { return net_; }
  const GridTopology& topology() const { return topo_; }
  Phase current_phase(int intersection) const { return phase_[static_cast<size_t>(intersection)]; }
  int phase_elapsed(int intersection) const { return elapsed_[static_cast<size_t>(intersection)]; }

  long vehicles_entered() const { return entered_; }
  long vehicles_left() const { return left_; }
  long vehicles_inside() const;

  int queue_count(int intersection, int lane) const;
  int moving_count(int intersection, int lane) const;

  // Records for every vehicle that entered the network so far.
  std::vector<VehicleRecord> records() const;

  // Conservation + capacity checks; throws ContractViolation on breach.
  void check_invariants() const;

  // Order-insensitive digest of the full dynamic state (determinism checks).
  std::uint64_t state_hash() const;

 private:
  struct MovingVeh {
    int vid;
    int remaining;
    int target_lane;
  };
  struct LinkState {
    std::array<std::deque<int>, 3> queue;
    std::vector<MovingVeh> moving;
    std::array<int, 3> moving_count{};
    std::array<double, 3> credit{};
  };
  struct PendingArrival {
    std::vector<Turn> route;
  };
  struct SourceState {
    int intersection;
    Approach approach;
    const FlowSource* spec;
    Rng rng;
    std::deque<PendingArrival> backlog;
  };

  LinkState& link(int inter, Approach ap) { return links_[static_cast<size_t>(inter * 4 + static_cast<int>(ap))]; }
  const LinkState& link(int inter, Approach ap) const {
    return links_[static_cast<size_t>(inter * 4 + static_cast<int>(ap))];
  }
  bool lane_has_room(int inter, Approach ap, int turn) const;
  bool try_inject(SourceState& src, const std::vector<Turn>& route);
  std::vector<Turn> sample_route(SourceState& src);

  NetworkSpec net_;
  FlowSpec flow_;
  GridTopology topo_;
  PhaseTable phases_;
  int now_ = 0;
  long entered_ = 0;
  long left_ = 0;
  std::vector<Phase> phase_;
  std::vector<int> elapsed_;
  std::vector<LinkState> links_;
  std::vector<MovingVeh> sink_;
  std::vector<VehicleRecord> vehicles_;
  std::vector<int> vehicle_next_turn_;
  std::vector<SourceState> sources_;
};

}  // namespace difflight::trafficsim
