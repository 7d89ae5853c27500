#pragma once

// Shared fixtures for the noise-model tests and the acceptance suite.

#include "difflight/numcore/gradcheck.hpp"
#include "difflight/stformer/model.hpp"

namespace difflight::testsupport {

// Random normalized inputs in the ranges the models see in production.
template <typename S>
stformer::SampleInput<S> random_sample_input(const stformer::StformerConfig& cfg, Rng& rng) {
  stformer::SampleInput<S> in;
  const int T = cfg.window_steps, L = cfg.lanes, F = cfg.lane_features;
  const int NC = cfg.nei_cells();
  in.x_k.resize(T, L * F);
  in.obs_values.resize(T, L * F);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < L * F; ++c) {
      in.x_k(t, c) = static_cast<S>(rng.uniform(-1.5, 1.5));
      in.obs_values(t, c) = static_cast<S>(rng.uniform(-1, 1));
    }
  in.observed.resize(T);
  in.rewards.resize(T);
  in.reward_avail.resize(T);
  for (int t = 0; t < T; ++t) {
    in.observed[t] = rng.bernoulli(0.7);
    in.rewards[t] = static_cast<S>(rng.uniform(0, 1));
    in.reward_avail[t] = rng.bernoulli(0.7);
  }
  in.k = 1 + rng.uniform_int(100);
  in.nei_values.resize(L, NC * F);
  in.nei_avail.resize(L, NC);
  for (int l = 0; l < L; ++l)
    for (int c = 0; c < NC; ++c) {
      in.nei_avail(l, c) = rng.bernoulli(0.7);
      for (int f = 0; f < F; ++f) in.nei_values(l, c * F + f) = static_cast<S>(rng.uniform(-1, 1));
    }
  return in;
}

template <typename S>
stformer::SampleInput<S> cast_sample_input(const stformer::SampleInput<double>& d) {
  stformer::SampleInput<S> in;
  in.x_k = d.x_k.template cast<S>();
  in.obs_values = d.obs_values.template cast<S>();
  in.observed = d.observed;
  in.rewards = d.rewards.template cast<S>();
  in.reward_avail = d.reward_avail;
  in.null_condition = d.null_condition;
  in.k = d.k;
  in.nei_values = d.nei_values.template cast<S>();
  in.nei_avail = d.nei_avail;
  return in;
}

// Re-initialize the zero-initialized output head so probe tests see a
// non-degenerate map.
template <typename S>
void randomize_head(numcore::ParamStore<S>& store, const stformer::StformerConfig& cfg, Rng rng) {
  auto* w = store.find("stf.head.w1");
  auto* b = store.find("stf.head.b1");
  require(w && b, "randomize_head: head parameters missing");
  const double bound = std::sqrt(6.0 / (cfg.width + cfg.lane_features));
  w->mutable_value() = rng.uniform_vec<S>(w->size(), -bound, bound);
  b->mutable_value() = rng.uniform_vec<S>(b->size(), -0.1, 0.1);
}

// Zero every value/output projection (attention V/O, encoder MLP output):
// each residual branch then contributes nothing.
template <typename S>
void zero_value_output_projections(numcore::ParamStore<S>& store) {
  for (auto& [name, t] : store.items) {
    const bool hit = name.find(".wv") != std::string::npos || name.find(".wo") != std::string::npos ||
                     name.find("mlp.w2") != std::string::npos || name.find("mlp.b2") != std::string::npos;
    if (hit) t.mutable_value().setZero();
  }
}

// Scalar loss used by gradient checks: weighted sum of the predicted noise.
template <typename S>
numcore::Tensor<S> probe_loss(const stformer::NoiseModel<S>& model,
                              const std::vector<stformer::SampleInput<S>>& batch, std::uint64_t wseed) {
  auto out = model.forward(batch);
  Rng r(wseed);
  auto w = numcore::Tensor<S>::constant(out.shape(), r.uniform_vec<S>(out.size(), 0.2, 1.0));
  return numcore::sum(numcore::mul(out, w));
}

}  // namespace difflight::testsupport
