#pragma once

#include <cmath>

#include "difflight/numcore/tensor.hpp"

namespace difflight::numcore {

// Bias-corrected Adam over a ParamStore. Moment arrays are kept per parameter
// in store order; step_count increases by exactly 1 per update.
template <typename S>
struct AdamState {
  long step_count = 0;
  S lr = S(2e-4);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  std::vector<Vec<S>> m, v;

  static AdamState init(const ParamStore<S>& params, S lr = S(2e-4)) {
    AdamState st;
    st.lr = lr;
    st.m.reserve(params.items.size());
    st.v.reserve(params.items.size());
    for (const auto& [name, t] : params.items) {
      st.m.push_back(Vec<S>::Zero(t.size()));
      st.v.push_back(Vec<S>::Zero(t.size()));
    }
    return st;
  }
};

// One update from the gradients currently accumulated in `params`.
// Parameters without a gradient this step are treated as zero-gradient.
template <typename S>
void adam_step(ParamStore<S>& params, AdamState<S>& state) {
  require(state.m.size() == params.items.size() && state.v.size() == params.items.size(),
          "adam_step: state tracks " + std::to_string(state.m.size()) + " params, store has " +
              std::to_string(params.items.size()));
  state.step_count += 1;
  const S bc1 = S(1) - std::pow(state.beta1, static_cast<S>(state.step_count));
  const S bc2 = S(1) - std::pow(state.beta2, static_cast<S>(state.step_count));
  for (size_t i = 0; i < params.items.size(); ++i) {
    auto& t = params.items[i].second;
    require(state.m[i].size() == t.size(),
            "adam_step: moment shape mismatch for '" + params.items[i].first + "'");
    Vec<S> g = t.has_grad() ? t.grad() : Vec<S>(Vec<S>::Zero(t.size()));
    if (!g.allFinite()) throw NumericFault("adam_step: non-finite gradient for '" + params.items[i].first + "'");
    state.m[i] = state.beta1 * state.m[i] + (S(1) - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (S(1) - state.beta2) * g * g;
    Vec<S> mhat = state.m[i] / bc1;
    Vec<S> vhat = state.v[i] / bc2;
    t.mutable_value() -= state.lr * mhat / (vhat.sqrt() + state.eps);
  }
}

}  // namespace difflight::numcore
