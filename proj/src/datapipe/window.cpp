#include "difflight/datapipe/window.hpp"

namespace difflight::datapipe {

using trafficsim::GridTopology;
using trafficsim::kLanes;

WindowSample make_window(const OfflineDataset& ds, const MaskSet& mask, int episode, int intersection, int t) {
  require(episode >= 0 && episode < static_cast<int>(ds.episodes.size()), "window: episode out of range");
  const Episode& ep = ds.episodes[static_cast<size_t>(episode)];
  require(intersection >= 0 && intersection < ep.n_intersections, "window: intersection out of range");
  require(t >= kHistory - 1, "window: anchor before the first full history");
  require(t + kHorizon < ep.n_steps, "window: anchor out of range (future exceeds episode)");
  require(mask.n_intersections == ep.n_intersections && mask.n_steps >= ep.n_steps,
          "window: mask does not cover this dataset");

  const int T = kWindowSteps;
  WindowSample s;
  s.episode = episode;
  s.intersection = intersection;
  s.t_anchor = t;
  s.window.t_anchor = t;
  s.window.values.setZero(T, kLanes * kLaneFeatures);
  s.window.observed.setConstant(T, false);
  s.rewards.values.setZero(T);
  s.rewards.available.setConstant(T, false);
  s.cell_known.setConstant(T, false);
  s.neighbors = NeighborFeed::zero(T);

  const GridTopology topo(ds.net.rows, ds.net.cols);
  for (int w = 0; w < T; ++w) {
    const int step = t - (kHistory - 1) + w;
    const bool known = mask.observed(intersection, step);
    s.cell_known[w] = known;
    const StepRecord& rec = ep.at(step, intersection);
    if (known) {
      for (int c = 0; c < kLanes * kLaneFeatures; ++c)
        s.window.values(w, c) = ds.norm.obs_to_unit(rec.obs[static_cast<size_t>(c)]);
      s.window.observed[w] = (w < kHistory);
      s.rewards.values[w] = ds.norm.reward_to_unit(rec.reward);
      s.rewards.available[w] = true;
    }
    // neighbor feed: ground truth where the upstream cell is observed
    for (int lane = 0; lane < kLanes; ++lane) {
      const auto feeders = topo.feeders(intersection, trafficsim::lane_approach(lane));
      for (int j = 0; j < kFeederLanes; ++j) {
        const auto& fd = feeders[static_cast<size_t>(j)];
        if (fd.neighbor < 0) continue;  // boundary: zero-padded, unavailable
        if (!mask.observed(fd.neighbor, step)) continue;
        const StepRecord& nrec = ep.at(step, fd.neighbor);
        const int cell = w * kFeederLanes + j;
        s.neighbors.avail(lane, cell) = true;
        s.neighbors.values(lane, cell * kLaneFeatures + 0) =
            ds.norm.obs_to_unit(nrec.obs[static_cast<size_t>(2 * fd.lane + 0)]);
        s.neighbors.values(lane, cell * kLaneFeatures + 1) =
            ds.norm.obs_to_unit(nrec.obs[static_cast<size_t>(2 * fd.lane + 1)]);
      }
    }
  }
  return s;
}

SplitResult self_supervised_split(WindowSample& sample, MaskPattern pattern, Rng& rng, double rm_ratio) {
  SplitResult res;
  res.artificial.setConstant(kWindowSteps, false);
  bool any_observed = false;
  for (int w = 0; w < kHistory; ++w) any_observed = any_observed || sample.window.observed[w];
  if (!any_observed) return res;  // nothing observable to split

  if (pattern == MaskPattern::RM) {
    for (int w = 0; w < kHistory; ++w)
      if (sample.window.observed[w] && rng.bernoulli(rm_ratio)) res.artificial[w] = true;
  } else {
    for (int w = 0; w < kHistory; ++w)
      if (sample.window.observed[w]) res.artificial[w] = true;
  }
  for (int w = 0; w < kHistory; ++w) {
    if (res.artificial[w]) {
      sample.window.observed[w] = false;
      sample.rewards.available[w] = false;
    }
  }
  res.ok = true;
  return res;
}

std::vector<Transition> indicator_transitions(const OfflineDataset& ds, const MaskSet& mask) {
  std::vector<Transition> out;
  for (int e = 0; e < static_cast<int>(ds.episodes.size()); ++e) {
    const Episode& ep = ds.episodes[static_cast<size_t>(e)];
    for (int i = 0; i < ep.n_intersections; ++i) {
      for (int t = 0; t + 1 < ep.n_steps; ++t) {
        if (mask.observed(i, t) && mask.observed(i, t + 1)) {
          out.push_back({e, i, t, ep.at(t, i).action});
        }
      }
    }
  }
  return out;
}

}  // namespace difflight::datapipe
