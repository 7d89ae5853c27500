#pragma once

// Grid-of-intersections topology: every interior intersection has 4 incoming
// approaches x 3 entrance lanes = 12 lanes, one per traffic movement. The 8
// left/through movements are partitioned into 4 signal phases; right turns
// are always green.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "difflight/common.hpp"

namespace difflight::trafficsim {

enum class Phase : int { A = 0, B = 1, C = 2, D = 3 };
enum class Approach : int { N = 0, E = 1, S = 2, W = 3 };
enum class Turn : int { Left = 0, Through = 1, Right = 2 };

inline constexpr int kLanes = 12;
inline constexpr int kPhases = 4;
inline constexpr int kObsDim = 24;  // (L_num, L_queue) per lane

constexpr int lane_index(Approach a, Turn t) { return static_cast<int>(a) * 3 + static_cast<int>(t); }
constexpr Approach lane_approach(int lane) { return static_cast<Approach>(lane / 3); }
constexpr Turn lane_turn(int lane) { return static_cast<Turn>(lane % 3); }

inline char phase_letter(Phase p) { return static_cast<char>('A' + static_cast<int>(p)); }
Phase phase_from_letter(char c);
const char* approach_name(Approach a);
Approach approach_from_name(const std::string& s);

// Compass direction a movement discharges toward (right-hand traffic).
Approach movement_out_direction(Approach from, Turn turn);
Approach opposite(Approach a);

// Phase -> its pair of non-conflicting left/through movements (lane indices).
// Phase A carries movement-2 and movement-8 (1-based): the opposing
// north/south through pair.
struct PhaseTable {
  bool right_turn_always_green = true;

  static const std::array<std::array<int, 2>, kPhases>& pairs();
  bool is_green(Phase p, int lane) const;
};

struct NetworkSpec {
  int rows = 2;
  int cols = 2;
  int lane_capacity = 30;       // vehicles per entrance lane (queued + moving)
  int free_flow_time = 30;      // seconds per link
  int saturation_period = 2;    // seconds of green per discharged vehicle
  int min_action_duration = 15; // seconds a phase must hold before switching
  int control_period = 15;      // seconds between control decisions

  int n_intersections() const { return rows * cols; }
  void validate() const;
};

struct RatePiece {
  int t0 = 0;
  int t1 = 0;
  double rate = 0;  // vehicles per second
};

struct Route {
  std::vector<Turn> turns;
  double weight = 1;
};

struct ScheduledArrival {
  int t = 0;
  int route = 0;  // index into routes
};

struct FlowSource {
  Approach side = Approach::N;  // boundary side the traffic enters from
  int index = 0;                // column (N/S) or row (E/W)
  std::vector<RatePiece> rate;
  std::vector<Route> routes;
  std::vector<ScheduledArrival> scheduled;  // deterministic injections

  double rate_at(int t) const;
};

struct FlowSpec {
  int episode_seconds = 3600;
  std::vector<FlowSource> sources;
};

struct VehicleRecord {
  int id = 0;
  std::vector<Turn> route;
  int t_enter = 0;
  int t_leave = -1;  // -1: still inside

  bool completed() const { return t_leave >= 0; }
};

struct GridTopology {
  int rows = 0;
  int cols = 0;

  GridTopology() = default;
  GridTopology(int r, int c) : rows(r), cols(c) {}

  int n() const { return rows * cols; }
  int id(int r, int c) const { return r * cols + c; }
  int row(int id_) const { return id_ / cols; }
  int col(int id_) const { return id_ % cols; }

  // Neighboring intersection in the given compass direction, if any.
  std::optional<int> neighbor(int id_, Approach dir) const;

  struct Feeder {
    int neighbor = -1;  // -1: boundary, no upstream intersection
    int lane = -1;
  };
  // The (up to 3) upstream entrance lanes at the neighboring intersection
  // whose movements discharge into this approach's link, in movement order.
  std::array<Feeder, 3> feeders(int id_, Approach ap) const;

  // All 12 upstream feeder lanes of an intersection (4 approaches x 3),
  // approach-major; boundary slots have neighbor = -1.
  std::array<Feeder, kLanes> all_feeders(int id_) const;
};

// Uniform Poisson demand on every boundary link; convenience for tests and
// default specs. Routes cross the full grid (all-through) plus turn variants.
FlowSpec uniform_flow(const NetworkSpec& net, int episode_seconds, double rate_per_source);

double average_travel_time(const std::vector<VehicleRecord>& records, std::optional<int> t_end = std::nullopt);

// JSON schema-versioned spec files; unknown fields are rejected.
NetworkSpec load_network_spec(const std::string& path);
void save_network_spec(const std::string& path, const NetworkSpec& net);
NetworkSpec parse_network_spec(const std::string& json_text);
std::string network_spec_json(const NetworkSpec& net);
FlowSpec load_flow_spec(const std::string& path);
void save_flow_spec(const std::string& path, const FlowSpec& flow);
FlowSpec parse_flow_spec(const std::string& json_text);
std::string flow_spec_json(const FlowSpec& flow);

// Hash of the pieces windowing/masking depend on (grid dims + capacity).
std::string topology_hash(const NetworkSpec& net);

}  // namespace difflight::trafficsim
