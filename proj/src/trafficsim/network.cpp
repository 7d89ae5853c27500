#include "difflight/trafficsim/network.hpp"

namespace difflight::trafficsim {

Phase phase_from_letter(char c) {
  require(c >= 'A' && c <= 'D', std::string("unknown phase '") + c + "'");
  return static_cast<Phase>(c - 'A');
}

const char* approach_name(Approach a) {
  switch (a) {
    case Approach::N: return "N";
    case Approach::E: return "E";
    case Approach::S: return "S";
    case Approach::W: return "W";
  }
  return "?";
}

Approach approach_from_name(const std::string& s) {
  if (s == "N") return Approach::N;
  if (s == "E") return Approach::E;
  if (s == "S") return Approach::S;
  if (s == "W") return Approach::W;
  throw ContractViolation("unknown approach '" + s + "'");
}

Approach opposite(Approach a) {
  switch (a) {
    case Approach::N: return Approach::S;
    case Approach::E: return Approach::W;
    case Approach::S: return Approach::N;
    case Approach::W: return Approach::E;
  }
  return Approach::N;
}

Approach movement_out_direction(Approach from, Turn turn) {
  // heading = direction of travel for traffic entering from `from`
  const Approach heading = opposite(from);
  if (turn == Turn::Through) return heading;
  // compass order N,E,S,W: right turn = heading rotated +1 (clockwise),
  // left turn = heading rotated -1
  const int h = static_cast<int>(heading);
  if (turn == Turn::Right) return static_cast<Approach>((h + 1) % 4);
  return static_cast<Approach>((h + 3) % 4);
}

const std::array<std::array<int, 2>, kPhases>& PhaseTable::pairs() {
  // A: N/S through (movements 2 and 8, 1-based); B: N/S left;
  // C: E/W through; D: E/W left.
  static const std::array<std::array<int, 2>, kPhases> p = {{
      {lane_index(Approach::N, Turn::Through), lane_index(Approach::S, Turn::Through)},
      {lane_index(Approach::N, Turn::Left), lane_index(Approach::S, Turn::Left)},
      {lane_index(Approach::E, Turn::Through), lane_index(Approach::W, Turn::Through)},
      {lane_index(Approach::E, Turn::Left), lane_index(Approach::W, Turn::Left)},
  }};
  return p;
}

bool PhaseTable::is_green(Phase p, int lane) const {
  if (right_turn_always_green && lane_turn(lane) == Turn::Right) return true;
  const auto& pr = pairs()[static_cast<size_t>(p)];
  return lane == pr[0] || lane == pr[1];
}

void NetworkSpec::validate() const {
  require(rows >= 1 && cols >= 1, "network: grid dims must be positive");
  require(lane_capacity >= 1, "network: lane_capacity must be positive");
  require(free_flow_time >= 1, "network: free_flow_time must be positive");
  require(saturation_period >= 1, "network: saturation_period must be positive");
  require(min_action_duration >= 1 && control_period >= 1, "network: durations must be positive");
}

double FlowSource::rate_at(int t) const {
  for (const auto& p : rate)
    if (t >= p.t0 && t < p.t1) return p.rate;
  return 0.0;
}

std::optional<int> GridTopology::neighbor(int id_, Approach dir) const {
  int r = row(id_), c = col(id_);
  switch (dir) {
    case Approach::N: r -= 1; break;
    case Approach::S: r += 1; break;
    case Approach::E: c += 1; break;
    case Approach::W: c -= 1; break;
  }
  if (r < 0 || r >= rows || c < 0 || c >= cols) return std::nullopt;
  return id(r, c);
}

std::array<GridTopology::Feeder, 3> GridTopology::feeders(int id_, Approach ap) const {
  std::array<Feeder, 3> out{};
  auto nbr = neighbor(id_, ap);
  if (!nbr) return out;  // boundary: all slots empty
  // movements at the neighbor that discharge toward us
  const Approach toward = opposite(ap);
  int k = 0;
  for (int lane = 0; lane < kLanes; ++lane) {
    if (movement_out_direction(lane_approach(lane), lane_turn(lane)) == toward) {
      out[static_cast<size_t>(k++)] = {*nbr, lane};
    }
  }
  return out;
}

std::array<GridTopology::Feeder, kLanes> GridTopology::all_feeders(int id_) const {
  std::array<Feeder, kLanes> out{};
  for (int a = 0; a < 4; ++a) {
    auto f = feeders(id_, static_cast<Approach>(a));
    for (int j = 0; j < 3; ++j) out[static_cast<size_t>(a * 3 + j)] = f[static_cast<size_t>(j)];
  }
  return out;
}

FlowSpec uniform_flow(const NetworkSpec& net, int episode_seconds, double rate_per_source) {
  FlowSpec flow;
  flow.episode_seconds = episode_seconds;
  auto add = [&](Approach side, int index) {
    FlowSource s;
    s.side = side;
    s.index = index;
    s.rate = {{0, episode_seconds, rate_per_source}};
    const int len = (side == Approach::N || side == Approach::S) ? net.rows : net.cols;
    std::vector<Turn> through(static_cast<size_t>(len + 1), Turn::Through);
    s.routes = {{through, 0.7},
                {[&] {
                   auto r = through;
                   r[0] = Turn::Left;
                   return r;
                 }(),
                 0.15},
                {[&] {
                   auto r = through;
                   r[0] = Turn::Right;
                   return r;
                 }(),
                 0.15}};
    flow.sources.push_back(std::move(s));
  };
  for (int c = 0; c < net.cols; ++c) {
    add(Approach::N, c);
    add(Approach::S, c);
  }
  for (int r = 0; r < net.rows; ++r) {
    add(Approach::E, r);
    add(Approach::W, r);
  }
  return flow;
}

double average_travel_time(const std::vector<VehicleRecord>& records, std::optional<int> t_end) {
  double total = 0;
  long n = 0;
  for (const auto& v : records) {
    if (v.completed()) {
      total += v.t_leave - v.t_enter;
      n += 1;
    } else if (t_end) {
      total += *t_end - v.t_enter;
      n += 1;
    }
  }
  require(n >= 1, "average_travel_time: no traffic (zero counted vehicles)");
  return total / static_cast<double>(n);
}

std::string topology_hash(const NetworkSpec& net) {
  std::string key = std::to_string(net.rows) + "x" + std::to_string(net.cols) + ":cap" +
                    std::to_string(net.lane_capacity) + ":cp" + std::to_string(net.control_period);
  return hash_hex(fnv1a64(key));
}

}  // namespace difflight::trafficsim
