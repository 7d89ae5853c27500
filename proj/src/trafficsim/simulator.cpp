#include "difflight/trafficsim/simulator.hpp"

#include <algorithm>

namespace difflight::trafficsim {

Simulator::Simulator(NetworkSpec net, FlowSpec flow, std::uint64_t seed)
    : net_(std::move(net)), flow_(std::move(flow)), topo_(net_.rows, net_.cols) {
  net_.validate();
  const int n = net_.n_intersections();
  phase_.assign(static_cast<size_t>(n), Phase::A);
  // start past the minimum duration so the first control decision is free
  elapsed_.assign(static_cast<size_t>(n), net_.min_action_duration);
  links_.resize(static_cast<size_t>(n) * 4);
  Rng root(seed);
  for (size_t si = 0; si < flow_.sources.size(); ++si) {
    const FlowSource& fs = flow_.sources[si];
    int inter;
    switch (fs.side) {
      case Approach::N: inter = topo_.id(0, fs.index); break;
      case Approach::S: inter = topo_.id(net_.rows - 1, fs.index); break;
      case Approach::E: inter = topo_.id(fs.index, net_.cols - 1); break;
      case Approach::W: inter = topo_.id(fs.index, 0); break;
      default: inter = 0;
    }
    require(fs.index >= 0 &&
                fs.index < ((fs.side == Approach::N || fs.side == Approach::S) ? net_.cols : net_.rows),
            "flow source index out of range");
    require(!topo_.neighbor(inter, fs.side).has_value(),
            "flow source must sit on a boundary approach");
    require(!fs.routes.empty(), "flow source needs at least one route");
    sources_.push_back({inter, fs.side, &fs, root.fork("source").fork(si), {}});
  }
}

bool Simulator::lane_has_room(int inter, Approach ap, int turn) const {
  const LinkState& L = link(inter, ap);
  const int count = static_cast<int>(L.queue[static_cast<size_t>(turn)].size()) +
                    L.moving_count[static_cast<size_t>(turn)];
  return count < net_.lane_capacity;
}

std::vector<Turn> Simulator::sample_route(SourceState& src) {
  double total = 0;
  for (const auto& r : src.spec->routes) total += r.weight;
  double x = src.rng.uniform() * total;
  for (const auto& r : src.spec->routes) {
    x -= r.weight;
    if (x <= 0) return r.turns;
  }
  return src.spec->routes.back().turns;
}

bool Simulator::try_inject(SourceState& src, const std::vector<Turn>& route) {
  const Turn first = route.empty() ? Turn::Through : route[0];
  if (!lane_has_room(src.intersection, src.approach, static_cast<int>(first))) return false;
  const int vid = static_cast<int>(vehicles_.size());
  VehicleRecord rec;
  rec.id = vid;
  rec.route = route;
  rec.t_enter = now_;
  vehicles_.push_back(std::move(rec));
  vehicle_next_turn_.push_back(0);
  LinkState& L = link(src.intersection, src.approach);
  L.moving.push_back({vid, net_.free_flow_time, static_cast<int>(first)});
  L.moving_count[static_cast<size_t>(static_cast<int>(first))] += 1;
  entered_ += 1;
  return true;
}

void Simulator::step(const std::vector<Phase>& actions) {
  require(static_cast<int>(actions.size()) == net_.n_intersections(),
          "step: need one action per intersection");
  const int n = net_.n_intersections();

  // 1. phase switches, gated by the minimum action duration
  for (int i = 0; i < n; ++i) {
    if (actions[static_cast<size_t>(i)] != phase_[static_cast<size_t>(i)] &&
        elapsed_[static_cast<size_t>(i)] >= net_.min_action_duration) {
      phase_[static_cast<size_t>(i)] = actions[static_cast<size_t>(i)];
      elapsed_[static_cast<size_t>(i)] = 0;
    }
  }

  // 2. advance moving vehicles; arrivals join their target queue in entry order
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 4; ++a) {
      LinkState& L = link(i, static_cast<Approach>(a));
      size_t w = 0;
      for (size_t r = 0; r < L.moving.size(); ++r) {
        MovingVeh v = L.moving[r];
        v.remaining -= 1;
        if (v.remaining <= 0) {
          L.queue[static_cast<size_t>(v.target_lane)].push_back(v.vid);
          L.moving_count[static_cast<size_t>(v.target_lane)] -= 1;
        } else {
          L.moving[w++] = v;
        }
      }
      L.moving.resize(w);
    }
  }
  {
    size_t w = 0;
    for (size_t r = 0; r < sink_.size(); ++r) {
      MovingVeh v = sink_[r];
      v.remaining -= 1;
      if (v.remaining <= 0) {
        vehicles_[static_cast<size_t>(v.vid)].t_leave = now_;
        left_ += 1;
      } else {
        sink_[w++] = v;
      }
    }
    sink_.resize(w);
  }

  // 3. discharge under green: 1 vehicle per saturation_period seconds of
  //    green with a waiting queue; head-of-line blocking when downstream full
  const double credit_per_tick = 1.0 / net_.saturation_period;
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 4; ++a) {
      LinkState& L = link(i, static_cast<Approach>(a));
      for (int t = 0; t < 3; ++t) {
        const int lane = lane_index(static_cast<Approach>(a), static_cast<Turn>(t));
        if (!phases_.is_green(phase_[static_cast<size_t>(i)], lane)) {
          L.credit[static_cast<size_t>(t)] = 0;
          continue;
        }
        auto& q = L.queue[static_cast<size_t>(t)];
        if (q.empty()) continue;
        L.credit[static_cast<size_t>(t)] =
            std::min(L.credit[static_cast<size_t>(t)] + credit_per_tick, 1.0);
        while (L.credit[static_cast<size_t>(t)] >= 1.0 && !q.empty()) {
          const int vid = q.front();
          const Approach out = movement_out_direction(static_cast<Approach>(a), static_cast<Turn>(t));
          auto nbr = topo_.neighbor(i, out);
          if (nbr) {
            const Approach ap2 = opposite(out);
            int& nt = vehicle_next_turn_[static_cast<size_t>(vid)];
            const auto& route = vehicles_[static_cast<size_t>(vid)].route;
            const Turn next =
                (nt + 1 < static_cast<int>(route.size())) ? route[static_cast<size_t>(nt + 1)] : Turn::Through;
            if (!lane_has_room(*nbr, ap2, static_cast<int>(next))) break;  // blocked, wait
            q.pop_front();
            nt += 1;
            LinkState& L2 = link(*nbr, ap2);
            L2.moving.push_back({vid, net_.free_flow_time, static_cast<int>(next)});
            L2.moving_count[static_cast<size_t>(static_cast<int>(next))] += 1;
          } else {
            q.pop_front();
            sink_.push_back({vid, net_.free_flow_time, 0});
          }
          L.credit[static_cast<size_t>(t)] -= 1.0;
        }
      }
    }
  }

  // 4. arrivals: drain backlog first, then fresh Poisson draws; blocked
  //    vehicles wait in the backlog without a timestamp
  for (auto& src : sources_) {
    for (const auto& sa : src.spec->scheduled) {
      if (sa.t == now_) {
        require(sa.route >= 0 && sa.route < static_cast<int>(src.spec->routes.size()),
                "scheduled arrival references route out of range");
        src.backlog.push_back({src.spec->routes[static_cast<size_t>(sa.route)].turns});
      }
    }
    while (!src.backlog.empty()) {
      if (!try_inject(src, src.backlog.front().route)) break;
      src.backlog.pop_front();
    }
    const double rate = src.spec->rate_at(now_);
    const int arrivals = rate > 0 ? src.rng.poisson(rate) : 0;
    for (int k = 0; k < arrivals; ++k) {
      auto route = sample_route(src);
      if (!src.backlog.empty() || !try_inject(src, route)) src.backlog.push_back({std::move(route)});
    }
  }

  for (int i = 0; i < n; ++i) elapsed_[static_cast<size_t>(i)] += 1;
  now_ += 1;
}

ObservationVector Simulator::observe(int intersection) const {
  ObservationVector obs{};
  for (int lane = 0; lane < kLanes; ++lane) {
    const int q = queue_count(intersection, lane);
    const int m = moving_count(intersection, lane);
    obs[static_cast<size_t>(2 * lane)] = static_cast<float>(q + m);
    obs[static_cast<size_t>(2 * lane + 1)] = static_cast<float>(q);
  }
  return obs;
}

int Simulator::reward(int intersection) const {
  int sum = 0;
  for (int lane = 0; lane < kLanes; ++lane) sum += queue_count(intersection, lane);
  return sum;
}

int Simulator::queue_count(int intersection, int lane) const {
  const LinkState& L = link(intersection, lane_approach(lane));
  return static_cast<int>(L.queue[static_cast<size_t>(lane % 3)].size());
}

int Simulator::moving_count(int intersection, int lane) const {
  const LinkState& L = link(intersection, lane_approach(lane));
  return L.moving_count[static_cast<size_t>(lane % 3)];
}

long Simulator::vehicles_inside() const {
  long inside = 0;
  for (const auto& L : links_) {
    inside += static_cast<long>(L.moving.size());
    for (const auto& q : L.queue) inside += static_cast<long>(q.size());
  }
  inside += static_cast<long>(sink_.size());
  return inside;
}

std::vector<VehicleRecord> Simulator::records() const { return vehicles_; }

void Simulator::check_invariants() const {
  require(entered_ == vehicles_inside() + left_,
          "conservation breach: entered=" + std::to_string(entered_) + " inside=" +
              std::to_string(vehicles_inside()) + " left=" + std::to_string(left_));
  for (int i = 0; i < net_.n_intersections(); ++i) {
    for (int lane = 0; lane < kLanes; ++lane) {
      const int c = queue_count(i, lane) + moving_count(i, lane);
      require(c >= 0 && c <= net_.lane_capacity,
              "capacity breach at intersection " + std::to_string(i) + " lane " + std::to_string(lane) + ": " +
                  std::to_string(c));
    }
  }
  for (int i = 0; i < net_.n_intersections(); ++i) {
    int greens = 0;
    for (int lane = 0; lane < kLanes; ++lane)
      if (phases_.is_green(phase_[static_cast<size_t>(i)], lane)) greens += 1;
    require(greens == 6, "phase legality breach: expected 2 phase movements + 4 right turns green");
  }
}

std::uint64_t Simulator::state_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix_int = [&h](long v) { h = fnv1a64(&v, sizeof(v), h); };
  mix_int(now_);
  mix_int(entered_);
  mix_int(left_);
  for (int i = 0; i < net_.n_intersections(); ++i) {
    mix_int(static_cast<int>(phase_[static_cast<size_t>(i)]));
    mix_int(elapsed_[static_cast<size_t>(i)]);
  }
  for (const auto& L : links_) {
    for (const auto& q : L.queue) {
      mix_int(static_cast<long>(q.size()));
      for (int vid : q) mix_int(vid);
    }
    for (const auto& m : L.moving) {
      mix_int(m.vid);
      mix_int(m.remaining);
      mix_int(m.target_lane);
    }
  }
  for (const auto& m : sink_) {
    mix_int(m.vid);
    mix_int(m.remaining);
  }
  return h;
}

}  // namespace difflight::trafficsim
