#pragma once

// Training/inference windows: C historical + H future control steps of one
// intersection, with the matching partial-reward trajectory and the
// neighbor feed f_nei (per local lane, the L'=3 upstream entrance lanes
// that discharge into its approach).

#include <Eigen/Core>

#include "difflight/datapipe/dataset.hpp"
#include "difflight/datapipe/mask.hpp"

namespace difflight::datapipe {

inline constexpr int kHistory = 5;                    // C
inline constexpr int kHorizon = 3;                    // H
inline constexpr int kWindowSteps = kHistory + kHorizon;  // T
inline constexpr int kFeederLanes = 3;                // L'
inline constexpr int kLaneFeatures = 2;               // (L_num, L_queue)

template <typename S>
struct TrajectoryWindowT {
  // normalized values in [-1,1]; rows = window slot, cols = lane*2 + feature.
  // Slots with no ground truth are zero-filled.
  Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> values;  // T x 24
  Eigen::Array<bool, Eigen::Dynamic, 1> observed;          // T; future slots always false
  int t_anchor = 0;
};

template <typename S>
struct RewardTrajectoryT {
  Eigen::Array<S, Eigen::Dynamic, 1> values;       // T, normalized to [0,1]
  Eigen::Array<bool, Eigen::Dynamic, 1> available; // T
};

template <typename S>
struct NeighborFeedT {
  // per local lane: T*L' upstream cells, 2 features each, time-major
  // (cell = t*L' + j). Missing cells are zero with available=false.
  Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> values;  // 12 x (T*L'*2)
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> avail;  // 12 x (T*L')

  static NeighborFeedT zero(int window_steps) {
    NeighborFeedT f;
    f.values.setZero(trafficsim::kLanes, window_steps * kFeederLanes * kLaneFeatures);
    f.avail.setConstant(trafficsim::kLanes, window_steps * kFeederLanes, false);
    return f;
  }
};

using TrajectoryWindow = TrajectoryWindowT<float>;
using RewardTrajectory = RewardTrajectoryT<float>;
using NeighborFeed = NeighborFeedT<float>;

struct WindowSample {
  TrajectoryWindow window;
  RewardTrajectory rewards;
  NeighborFeed neighbors;
  // ground truth exists at this slot (MaskSet-observed); unchanged by the
  // artificial self-supervision split.
  Eigen::Array<bool, Eigen::Dynamic, 1> cell_known;  // T
  int episode = 0;
  int intersection = 0;
  int t_anchor = 0;
};

// Slice a (C history + H future) window anchored at control step t
// (anchor = last historical step). Requires t >= C-1 and t + H < n_steps.
WindowSample make_window(const OfflineDataset& ds, const MaskSet& mask, int episode, int intersection, int t);

// Artificial self-supervision split. RM: each observed history slot is
// hidden independently with probability rm_ratio. KM: the local
// intersection's whole observed history is hidden. Hidden slots lose their
// observation and reward availability ("missing simultaneously") while the
// ground truth stays in window.values for the loss.
struct SplitResult {
  bool ok = false;  // false: nothing observable to split (skip-sample)
  Eigen::Array<bool, Eigen::Dynamic, 1> artificial;  // T, true = hidden by the split
};
SplitResult self_supervised_split(WindowSample& sample, MaskPattern pattern, Rng& rng, double rm_ratio = 0.5);

// Transitions with both endpoint observations observed (the Eq.-13
// indicator); used by the inverse dynamics model.
struct Transition {
  int episode = 0;
  int intersection = 0;
  int t = 0;
  int action = 0;
};
std::vector<Transition> indicator_transitions(const OfflineDataset& ds, const MaskSet& mask);

}  // namespace difflight::datapipe
