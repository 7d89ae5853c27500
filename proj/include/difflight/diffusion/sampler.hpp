#pragma once

// Forward noising, deterministic DDIM reverse steps (sigma = 0),
// classifier-free guidance, and the partial-rewards mask composition of
// noise estimates. All operate on window arrays [T x features] with
// per-timestep masks broadcast across the feature axis.

#include <cmath>

#include "difflight/diffusion/schedule.hpp"

namespace difflight::diffusion {

template <typename S>
using WindowArray = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;
using StepMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

// Binary non-overlapping partition of the window's timesteps.
struct MaskPair {
  StepMask m_obs;
  StepMask m_mis;

  void validate() const {
    require(m_obs.size() == m_mis.size(), "mask pair: size mismatch");
    for (Eigen::Index t = 0; t < m_obs.size(); ++t)
      require(m_obs[t] != m_mis[t], "mask pair: masks must partition timesteps (overlap or gap at t=" +
                                        std::to_string(t) + ")");
  }
  static MaskPair from_obs(const StepMask& obs) {
    MaskPair mp;
    mp.m_obs = obs;
    mp.m_mis = !obs;
    return mp;
  }
};

// x_k = sqrt(abar_k) x0 + sqrt(1 - abar_k) eps. k = 0 returns x0.
template <typename S>
WindowArray<S> forward_noise(const WindowArray<S>& x0, int k, const WindowArray<S>& eps,
                             const DiffusionScheduleT<S>& sch) {
  require(k >= 0 && k <= sch.K, "forward_noise: k=" + std::to_string(k) + " out of [0," + std::to_string(sch.K) + "]");
  require(x0.rows() == eps.rows() && x0.cols() == eps.cols(), "forward_noise: shape mismatch");
  const S ab = sch.abar(k);
  return std::sqrt(ab) * x0 + std::sqrt(S(1) - ab) * eps;
}

// x0_hat = (x_k - sqrt(1 - abar_k) eps_hat) / sqrt(abar_k)
template <typename S>
WindowArray<S> predict_x0(const WindowArray<S>& x_k, const WindowArray<S>& eps_hat, int k,
                          const DiffusionScheduleT<S>& sch) {
  require(x_k.rows() == eps_hat.rows() && x_k.cols() == eps_hat.cols(), "predict_x0: shape mismatch");
  const S ab = sch.abar(k);
  return (x_k - std::sqrt(S(1) - ab) * eps_hat) / std::sqrt(ab);
}

// Deterministic DDIM update to the earlier step k_prev (sigma = 0):
// x_{k_prev} = sqrt(abar_{k_prev}) x0_hat + sqrt(1 - abar_{k_prev}) eps_hat.
template <typename S>
WindowArray<S> ddim_step(const WindowArray<S>& x_k, const WindowArray<S>& eps_hat, int k, int k_prev,
                         const DiffusionScheduleT<S>& sch) {
  require(k_prev < k, "ddim_step: k_prev must precede k");
  require(sch.in_plan(k) && sch.in_plan(k_prev),
          "ddim_step: steps (" + std::to_string(k) + "," + std::to_string(k_prev) + ") not in the sampling plan");
  WindowArray<S> x0_hat = predict_x0(x_k, eps_hat, k, sch);
  const S ab = sch.abar(k_prev);
  return std::sqrt(ab) * x0_hat + std::sqrt(S(1) - ab) * eps_hat;
}

// eps_uncond + omega (eps_cond - eps_uncond)
template <typename S>
WindowArray<S> cfg_noise(const WindowArray<S>& eps_cond, const WindowArray<S>& eps_uncond, S omega) {
  require(eps_cond.rows() == eps_uncond.rows() && eps_cond.cols() == eps_uncond.cols(), "cfg_noise: shape mismatch");
  return eps_uncond + omega * (eps_cond - eps_uncond);
}

// Per-timestep selection: reward-conditioned estimate on m_obs rows, the
// unconditioned estimate on m_mis rows.
template <typename S>
WindowArray<S> prcd_compose(const WindowArray<S>& eps_rewarded, const WindowArray<S>& eps_null,
                            const MaskPair& masks) {
  masks.validate();
  require(eps_rewarded.rows() == eps_null.rows() && eps_rewarded.cols() == eps_null.cols(),
          "prcd_compose: shape mismatch");
  require(masks.m_obs.size() == eps_rewarded.rows(), "prcd_compose: mask length must match window steps");
  WindowArray<S> out(eps_rewarded.rows(), eps_rewarded.cols());
  for (Eigen::Index t = 0; t < out.rows(); ++t)
    out.row(t) = masks.m_obs[t] ? eps_rewarded.row(t) : eps_null.row(t);
  return out;
}

}  // namespace difflight::diffusion
