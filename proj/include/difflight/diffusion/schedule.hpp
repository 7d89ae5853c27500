#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "difflight/common.hpp"

namespace difflight::diffusion {

// Noise schedule over K diffusion steps with the alpha_bar(0) = 1 convention
// for the sampling endpoint. Tables are indexed k-1 for k = 1..K and satisfy
// alpha_bar(k) = prod_{j<=k} alpha(j) exactly by construction.
template <typename S>
struct DiffusionScheduleT {
  int K = 0;
  Vec<S> beta;
  Vec<S> alpha;
  Vec<S> alpha_bar;
  std::vector<int> sampling_plan;  // strictly decreasing, ends at 1

  S abar(int k) const {
    require(k >= 0 && k <= K, "schedule: diffusion step " + std::to_string(k) + " out of [0," + std::to_string(K) + "]");
    return k == 0 ? S(1) : alpha_bar[k - 1];
  }

  bool in_plan(int k) const {
    return k == 0 || std::find(sampling_plan.begin(), sampling_plan.end(), k) != sampling_plan.end();
  }

  void validate() const {
    require(K >= 1 && beta.size() == K && alpha.size() == K && alpha_bar.size() == K, "schedule: bad table sizes");
    S prev = S(1);
    for (int k = 1; k <= K; ++k) {
      require(beta[k - 1] > S(0) && beta[k - 1] < S(1), "schedule: beta out of (0,1) at k=" + std::to_string(k));
      require(alpha_bar[k - 1] < prev, "schedule: alpha_bar not strictly decreasing at k=" + std::to_string(k));
      prev = alpha_bar[k - 1];
    }
    require(!sampling_plan.empty() && sampling_plan.back() == 1, "schedule: sampling plan must end at step 1");
    for (size_t i = 0; i + 1 < sampling_plan.size(); ++i)
      require(sampling_plan[i] > sampling_plan[i + 1], "schedule: sampling plan must be strictly decreasing");
    require(sampling_plan.front() <= K, "schedule: sampling plan exceeds K");
  }

  static DiffusionScheduleT from_betas(const std::vector<double>& betas) {
    DiffusionScheduleT sch;
    sch.K = static_cast<int>(betas.size());
    sch.beta.resize(sch.K);
    sch.alpha.resize(sch.K);
    sch.alpha_bar.resize(sch.K);
    double ab = 1;
    for (int k = 1; k <= sch.K; ++k) {
      sch.beta[k - 1] = static_cast<S>(betas[static_cast<size_t>(k - 1)]);
      sch.alpha[k - 1] = static_cast<S>(1.0 - betas[static_cast<size_t>(k - 1)]);
      ab *= 1.0 - betas[static_cast<size_t>(k - 1)];
      sch.alpha_bar[k - 1] = static_cast<S>(ab);
    }
    sch.sampling_plan = full_plan(sch.K);
    sch.validate();
    return sch;
  }

  // Cosine schedule: alpha_bar(k) follows cos^2((pi/2)(k/K + s)/(1 + s)),
  // normalized to alpha_bar(0) = 1, with per-step beta clipped to 0.999.
  static DiffusionScheduleT cosine(int K, double s = 0.008) {
    require(K >= 1, "schedule: K must be positive");
    auto f = [&](int k) {
      double x = (static_cast<double>(k) / K + s) / (1.0 + s);
      double c = std::cos(0.5 * M_PI * x);
      return c * c;
    };
    std::vector<double> betas(static_cast<size_t>(K));
    for (int k = 1; k <= K; ++k)
      betas[static_cast<size_t>(k - 1)] = std::min(1.0 - f(k) / f(k - 1), 0.999);
    return from_betas(betas);
  }

  // Evenly spaced descending subsequence of {K..1} ending at 1.
  static std::vector<int> make_plan(int K, int n_steps) {
    require(n_steps >= 1 && n_steps <= K, "sampling plan: need 1 <= steps <= K");
    std::vector<int> plan;
    if (n_steps == 1) return {1};
    for (int i = 0; i < n_steps; ++i) {
      double pos = static_cast<double>(K) - static_cast<double>(K - 1) * i / (n_steps - 1);
      int k = static_cast<int>(std::llround(pos));
      if (plan.empty() || k < plan.back()) plan.push_back(k);
    }
    if (plan.back() != 1) plan.push_back(1);
    return plan;
  }
  static std::vector<int> full_plan(int K) { return make_plan(K, K); }

  void set_plan(int n_steps) {
    sampling_plan = make_plan(K, n_steps);
    validate();
  }
};

using DiffusionSchedule = DiffusionScheduleT<float>;

}  // namespace difflight::diffusion
