#include "difflight/controller/controller.hpp"

#include <deque>

namespace difflight::controller {

using datapipe::kFeederLanes;
using datapipe::kHistory;
using datapipe::kHorizon;
using datapipe::kWindowSteps;
using diffusion::MaskPair;
using diffusion::WindowArray;
using stformer::SampleInput;
using trafficsim::kLanes;

namespace {

constexpr int kObsCols = kLanes * datapipe::kLaneFeatures;

struct HistoryEntry {
  Eigen::Array<float, Eigen::Dynamic, 1> obs;  // normalized, 24
  float reward = 0;                            // normalized
  bool observed = false;
};

struct AgentState {
  std::deque<HistoryEntry> history;  // length exactly C
  WindowArray<float> x;              // current sample, T x 24
  WindowArray<float> published;      // x0_hat shared with neighbors
  Eigen::Array<bool, Eigen::Dynamic, 1> observed;  // T (history flags, future false)
  WindowArray<float> obs_values;                   // T x 24 ground-truth-observed values
  Eigen::Array<float, Eigen::Dynamic, 1> rewards;  // T
  MaskPair masks;                                  // reward availability partition
  int round_counter = 0;

  void push(HistoryEntry e) {
    history.push_back(std::move(e));
    if (history.size() > static_cast<size_t>(kHistory)) history.pop_front();
  }
};

// Raw observed neighbor history assembled exactly like the training feed.
datapipe::NeighborFeed base_feed(const trafficsim::GridTopology& topo, const std::vector<AgentState>& agents,
                                 int inter) {
  auto feed = datapipe::NeighborFeed::zero(kWindowSteps);
  for (int lane = 0; lane < kLanes; ++lane) {
    const auto feeders = topo.feeders(inter, trafficsim::lane_approach(lane));
    for (int j = 0; j < kFeederLanes; ++j) {
      const auto& fd = feeders[static_cast<size_t>(j)];
      if (fd.neighbor < 0) continue;
      const auto& nbr = agents[static_cast<size_t>(fd.neighbor)];
      for (int w = 0; w < kHistory; ++w) {
        const auto& h = nbr.history[static_cast<size_t>(w)];
        if (!h.observed) continue;
        const int cell = w * kFeederLanes + j;
        feed.avail(lane, cell) = true;
        feed.values(lane, cell * 2 + 0) = h.obs[2 * fd.lane + 0];
        feed.values(lane, cell * 2 + 1) = h.obs[2 * fd.lane + 1];
      }
    }
  }
  return feed;
}

// DCM exchange: missing cells (or all cells) take the neighbor's current
// published x0_hat.
datapipe::NeighborFeed dcm_feed(const trafficsim::GridTopology& topo, const std::vector<AgentState>& agents,
                                int inter, const datapipe::NeighborFeed& base, bool replace_all) {
  datapipe::NeighborFeed feed = base;
  for (int lane = 0; lane < kLanes; ++lane) {
    const auto feeders = topo.feeders(inter, trafficsim::lane_approach(lane));
    for (int j = 0; j < kFeederLanes; ++j) {
      const auto& fd = feeders[static_cast<size_t>(j)];
      if (fd.neighbor < 0) continue;
      const auto& pub = agents[static_cast<size_t>(fd.neighbor)].published;
      for (int w = 0; w < kWindowSteps; ++w) {
        const int cell = w * kFeederLanes + j;
        if (!replace_all && base.avail(lane, cell)) continue;
        feed.avail(lane, cell) = true;
        feed.values(lane, cell * 2 + 0) = pub(w, 2 * fd.lane + 0);
        feed.values(lane, cell * 2 + 1) = pub(w, 2 * fd.lane + 1);
      }
    }
  }
  return feed;
}

SampleInput<float> agent_input(const AgentState& a, const datapipe::NeighborFeed& feed, int k, bool null_condition) {
  SampleInput<float> in;
  in.x_k = a.x;
  in.obs_values = a.obs_values;
  in.observed = a.observed;
  in.rewards = a.rewards;
  in.reward_avail = a.masks.m_obs;
  in.null_condition = null_condition;
  in.k = k;
  in.nei_values = feed.values;
  in.nei_avail = feed.avail;
  return in;
}

WindowArray<float> gaussian_window(Rng& rng) {
  WindowArray<float> w(kWindowSteps, kObsCols);
  for (int r = 0; r < kWindowSteps; ++r)
    for (int c = 0; c < kObsCols; ++c) w(r, c) = static_cast<float>(rng.normal());
  return w;
}

void clamp_observed_rows(AgentState& a, int k, const diffusion::DiffusionSchedule& sch, Rng& rng) {
  for (int w = 0; w < kHistory; ++w) {
    if (!a.observed[w]) continue;
    for (int c = 0; c < kObsCols; ++c) {
      const float eps = static_cast<float>(rng.normal());
      const float ab = sch.abar(k);
      a.x(w, c) = std::sqrt(ab) * a.obs_values(w, c) + std::sqrt(1.0f - ab) * eps;
    }
  }
}

int greedy_phase_from_queues(const Eigen::Array<float, Eigen::Dynamic, 1>& obs_norm,
                             const datapipe::Normalization& norm) {
  int best = 0;
  double best_q = -1e18;
  for (int p = 0; p < trafficsim::kPhases; ++p) {
    const auto& pr = trafficsim::PhaseTable::pairs()[static_cast<size_t>(p)];
    const double q =
        norm.unit_to_obs(obs_norm[2 * pr[0] + 1]) + norm.unit_to_obs(obs_norm[2 * pr[1] + 1]);
    if (q > best_q) {
      best_q = q;
      best = p;
    }
  }
  return best;
}

}  // namespace

RunResult run_closed_loop(const trainer::TrainedModel& model, const trafficsim::NetworkSpec& net,
                          const trafficsim::FlowSpec& flow, const datapipe::MaskSet& mask,
                          const InferenceConfig& icfg, std::uint64_t seed, const RunHooks* hooks) {
  require(model.topology_hash == trafficsim::topology_hash(net), "run: checkpoint topology differs from network");
  const int n = net.n_intersections();
  const int n_steps = flow.episode_seconds / net.control_period;
  require(mask.n_intersections == n && mask.n_steps >= n_steps, "run: mask does not cover this episode");
  require(model.config.model_config().window_steps == kWindowSteps, "run: model window length mismatch");

  diffusion::DiffusionSchedule schedule = model.schedule;
  schedule.set_plan(icfg.sampling_steps);
  const auto& plan = schedule.sampling_plan;
  const bool prcd = model.config.reward_handling == trainer::RewardHandling::Prcd;

  trafficsim::Simulator sim(net, flow, seed);
  trafficsim::GridTopology topo(net.rows, net.cols);
  Rng root = Rng(seed).fork("controller");

  std::vector<AgentState> agents(static_cast<size_t>(n));
  for (auto& a : agents) {
    for (int w = 0; w < kHistory; ++w) a.push({Eigen::Array<float, Eigen::Dynamic, 1>::Zero(kObsCols), 0, false});
  }

  datapipe::Episode log;
  log.policy = "difflight";
  log.seed = seed;
  log.n_intersections = n;
  log.n_steps = n_steps;
  log.control_period = net.control_period;
  log.steps.resize(static_cast<size_t>(n_steps) * static_cast<size_t>(n));

  std::vector<trafficsim::Phase> actions(static_cast<size_t>(n), trafficsim::Phase::A);

  for (int step = 0; step < n_steps; ++step) {
    // --- sense -------------------------------------------------------------
    for (int i = 0; i < n; ++i) {
      auto& a = agents[static_cast<size_t>(i)];
      const auto raw = sim.observe(i);
      const int qsum = sim.reward(i);
      HistoryEntry e;
      e.observed = mask.observed(i, step);
      e.obs = Eigen::Array<float, Eigen::Dynamic, 1>::Zero(kObsCols);
      if (e.observed) {
        for (int c = 0; c < kObsCols; ++c) e.obs[c] = model.norm.obs_to_unit(raw[static_cast<size_t>(c)]);
        e.reward = model.norm.reward_to_unit(static_cast<float>(qsum));
      }
      a.push(std::move(e));

      auto& rec = log.at(step, i);
      rec.obs = raw;
      rec.reward = static_cast<float>(qsum);
    }

    // --- build windows and conditions ---------------------------------------
    std::vector<datapipe::NeighborFeed> base(static_cast<size_t>(n));
    std::vector<datapipe::NeighborFeed> feeds(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      auto& a = agents[static_cast<size_t>(i)];
      a.observed.setConstant(kWindowSteps, false);
      a.obs_values = WindowArray<float>::Zero(kWindowSteps, kObsCols);
      a.rewards.setZero(kWindowSteps);
      Eigen::Array<bool, Eigen::Dynamic, 1> avail(kWindowSteps);
      for (int w = 0; w < kHistory; ++w) {
        const auto& h = a.history[static_cast<size_t>(w)];
        a.observed[w] = h.observed;
        if (h.observed) {
          for (int c = 0; c < kObsCols; ++c) a.obs_values(w, c) = h.obs[c];
          a.rewards[w] = h.reward;
        }
        avail[w] = h.observed;
      }
      for (int w = kHistory; w < kWindowSteps; ++w) {
        a.rewards[w] = icfg.future_reward;  // condition the future on the best case
        avail[w] = true;
      }
      a.masks = MaskPair::from_obs(avail);
      if (!prcd) {
        // zero-pad ablation: every slot conditions, missing values stay 0
        a.masks = MaskPair::from_obs(Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(kWindowSteps, true));
        for (int w = 0; w < kHistory; ++w)
          if (!a.observed[w]) a.rewards[w] = 0;
      }

      Rng xk_rng = root.fork("xk").fork(static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i));
      a.x = gaussian_window(xk_rng);
      if (icfg.clamp_observed) clamp_observed_rows(a, plan.front(), schedule, xk_rng);
      a.published = a.x;
      a.round_counter = 0;
      base[static_cast<size_t>(i)] = base_feed(topo, agents, i);
      feeds[static_cast<size_t>(i)] = base[static_cast<size_t>(i)];
    }

    // --- lockstep reverse sampling ------------------------------------------
    for (size_t round = 0; round < plan.size(); ++round) {
      const int k = plan[round];
      const int k_next = (round + 1 < plan.size()) ? plan[round + 1] : 0;
      for (const auto& a : agents)
        require(a.round_counter == static_cast<int>(round),
                "lockstep protocol error: desynchronized round counters");

      std::vector<SampleInput<float>> batch;
      batch.reserve(static_cast<size_t>(2 * n));
      for (int i = 0; i < n; ++i) {
        batch.push_back(agent_input(agents[static_cast<size_t>(i)], feeds[static_cast<size_t>(i)], k, false));
        batch.push_back(agent_input(agents[static_cast<size_t>(i)], feeds[static_cast<size_t>(i)], k, true));
      }
      numcore::NoGradGuard ng;
      auto out = model.predictor.forward(batch);

      // extract per-agent windows
      auto window_of = [&](int b) {
        WindowArray<float> w(kWindowSteps, kObsCols);
        const auto& v = out.value();
        const std::int64_t basei = static_cast<std::int64_t>(b) * kWindowSteps * kObsCols;
        for (int t = 0; t < kWindowSteps; ++t)
          for (int c = 0; c < kObsCols; ++c) w(t, c) = v[basei + static_cast<std::int64_t>(t) * kObsCols + c];
        return w;
      };

      for (int i = 0; i < n; ++i) {
        auto& a = agents[static_cast<size_t>(i)];
        WindowArray<float> eps_c = window_of(2 * i);
        WindowArray<float> eps_u = window_of(2 * i + 1);
        WindowArray<float> eps_guided = diffusion::cfg_noise(eps_c, eps_u, icfg.omega);
        WindowArray<float> eps_hat = prcd ? diffusion::prcd_compose(eps_guided, eps_u, a.masks) : eps_guided;
        if (hooks && hooks->on_eps) hooks->on_eps(step, static_cast<int>(round), i, eps_hat);

        a.published = diffusion::predict_x0(a.x, eps_hat, k, schedule);
        for (int w = 0; w < kHistory; ++w)
          if (a.observed[w]) a.published.row(w) = a.obs_values.row(w);  // clamped: truth where known
        if (hooks && hooks->on_publish) hooks->on_publish(step, i, a.published);

        a.x = diffusion::ddim_step(a.x, eps_hat, k, k_next, schedule);
        if (icfg.clamp_observed) {
          Rng crng = root.fork("clamp").fork(static_cast<std::uint64_t>(step) * 1000 + round, static_cast<std::uint64_t>(i));
          clamp_observed_rows(a, k_next, schedule, crng);
        }
        a.round_counter += 1;
      }

      // barrier: every agent finished round k before feeds refresh
      if (icfg.dcm_enabled && round + 1 < plan.size()) {
        for (int i = 0; i < n; ++i)
          feeds[static_cast<size_t>(i)] = dcm_feed(topo, agents, i, base[static_cast<size_t>(i)], icfg.dcm_replace_all);
      }
    }

    // --- decode and act ------------------------------------------------------
    for (int i = 0; i < n; ++i) {
      auto& a = agents[static_cast<size_t>(i)];
      Eigen::Array<float, Eigen::Dynamic, 1> o_t = a.x.row(kHistory - 1).transpose();
      Eigen::Array<float, Eigen::Dynamic, 1> o_next = a.x.row(kHistory).transpose();
      int action;
      if (icfg.use_invdyn) {
        action = model.inv->infer_action(o_t, o_next);
      } else {
        action = greedy_phase_from_queues(o_t, model.norm);
      }
      actions[static_cast<size_t>(i)] = static_cast<trafficsim::Phase>(action);
      log.at(step, i).action = action;
    }
    for (int tick = 0; tick < net.control_period; ++tick) sim.step(actions);
  }

  RunResult res;
  log.vehicles = sim.records();
  res.episode = std::move(log);
  res.vehicles_entered = sim.vehicles_entered();
  res.vehicles_completed = sim.vehicles_left();
  res.att = trafficsim::average_travel_time(res.episode.vehicles, flow.episode_seconds);
  return res;
}

}  // namespace difflight::controller
