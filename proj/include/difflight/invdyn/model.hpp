#pragma once

// Inverse dynamics f_phi: maps a pair of consecutive (normalized)
// observations to the phase that produced the transition. 4-way classifier,
// argmax decoding with ties broken toward the lowest phase index.

#include "difflight/numcore/tensor.hpp"
#include "difflight/rng.hpp"

namespace difflight::invdyn {

using numcore::ParamStore;
using numcore::Tensor;

struct InvDynConfig {
  int obs_dim = 24;
  int hidden = 128;
  int n_actions = 4;
};

template <typename S>
class InverseDynamics {
 public:
  InverseDynamics(InvDynConfig cfg, ParamStore<S>& store, Rng init_rng) : cfg_(cfg) {
    w0_ = xavier(store, "inv.w0", 2 * cfg.obs_dim, cfg.hidden, init_rng);
    b0_ = store.add("inv.b0", Tensor<S>::zeros({cfg.hidden}));
    w1_ = xavier(store, "inv.w1", cfg.hidden, cfg.hidden, init_rng);
    b1_ = store.add("inv.b1", Tensor<S>::zeros({cfg.hidden}));
    w2_ = xavier(store, "inv.w2", cfg.hidden, cfg.n_actions, init_rng);
    b2_ = store.add("inv.b2", Tensor<S>::zeros({cfg.n_actions}));
  }

  const InvDynConfig& config() const { return cfg_; }

  // obs_pairs: [B, 2*obs_dim] of concatenated (o_t, o_{t+1}).
  Tensor<S> logits(const Tensor<S>& obs_pairs) const {
    using namespace numcore;
    auto h0 = gelu(add(matmul(obs_pairs, w0_), b0_));
    auto h1 = gelu(add(matmul(h0, w1_), b1_));
    return add(matmul(h1, w2_), b2_);
  }

  // Cross-entropy against logged actions, restricted by per-sample weights
  // (the Eq.-13 indicator: transitions with a missing endpoint carry 0).
  Tensor<S> loss(const Tensor<S>& obs_pairs, std::shared_ptr<const std::vector<int>> actions,
                 std::shared_ptr<const Vec<S>> weights) const {
    return numcore::softmax_xent(logits(obs_pairs), std::move(actions), std::move(weights));
  }

  int infer_action(const Eigen::Array<S, Eigen::Dynamic, 1>& o_t,
                   const Eigen::Array<S, Eigen::Dynamic, 1>& o_next) const {
    require(o_t.size() == cfg_.obs_dim && o_next.size() == cfg_.obs_dim, "infer_action: bad observation size");
    numcore::NoGradGuard ng;
    Vec<S> pair(2 * cfg_.obs_dim);
    pair << o_t, o_next;
    auto lg = logits(Tensor<S>::constant({1, 2 * cfg_.obs_dim}, std::move(pair)));
    if (!lg.value().allFinite()) throw NumericFault("infer_action: non-finite logits");
    int best = 0;
    for (int a = 1; a < cfg_.n_actions; ++a)
      if (lg.value()[a] > lg.value()[best]) best = a;  // strict: ties keep the lowest index
    return best;
  }

 private:
  static Tensor<S> xavier(ParamStore<S>& store, const std::string& name, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    return store.add(name, Tensor<S>::param({fan_in, fan_out},
                                            rng.uniform_vec<S>(static_cast<std::int64_t>(fan_in) * fan_out, -bound,
                                                               bound)));
  }

  InvDynConfig cfg_;
  Tensor<S> w0_, b0_, w1_, b1_, w2_, b2_;
};

}  // namespace difflight::invdyn
