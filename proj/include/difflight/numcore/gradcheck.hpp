#pragma once

#include <functional>
#include <tuple>

#include "difflight/numcore/tensor.hpp"
#include "difflight/rng.hpp"

namespace difflight::numcore {

struct GradCheckSample {
  std::string param;
  std::int64_t index = 0;
  double autodiff = 0;
  double central = 0;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::vector<GradCheckSample> samples;
};

// Compares reverse-mode gradients of a scalar-valued computation against
// central finite differences on `n_samples` uniformly sampled parameter
// coordinates. `loss_fn` must rebuild the graph on every call and be
// deterministic given fixed inputs. Relative error per coordinate is
// |autodiff - central| / (|central| + 1e-8).
template <typename S, typename F>
GradCheckResult grad_check(F&& loss_fn, ParamStore<S>& params, double eps, int n_samples, Rng rng) {
  require(eps > 0, "grad_check: eps must be positive");
  params.zero_grads();
  Tensor<S> loss = loss_fn();
  if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericFault("grad_check: non-finite loss");
  loss.backward();

  std::vector<std::tuple<size_t, std::int64_t>> coords;
  const std::int64_t total = params.total_size();
  require(total > 0, "grad_check: empty parameter store");
  for (int i = 0; i < n_samples; ++i) {
    std::int64_t flat = rng.uniform_int64(total);
    for (size_t p = 0; p < params.items.size(); ++p) {
      const std::int64_t sz = params.items[p].second.size();
      if (flat < sz) {
        coords.emplace_back(p, flat);
        break;
      }
      flat -= sz;
    }
  }

  GradCheckResult res;
  for (auto [p, idx] : coords) {
    auto& t = params.items[p].second;
    const double autodiff = t.has_grad() ? static_cast<double>(t.grad()[idx]) : 0.0;
    const S orig = t.value()[idx];
    double fp, fm;
    {
      NoGradGuard ng;
      t.mutable_value()[idx] = orig + static_cast<S>(eps);
      fp = static_cast<double>(loss_fn().item());
      t.mutable_value()[idx] = orig - static_cast<S>(eps);
      fm = static_cast<double>(loss_fn().item());
      t.mutable_value()[idx] = orig;
    }
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericFault("grad_check: non-finite perturbed loss");
    const double central = (fp - fm) / (2.0 * eps);
    const double rel = std::abs(autodiff - central) / (std::abs(central) + 1e-8);
    res.max_rel_error = std::max(res.max_rel_error, rel);
    res.samples.push_back({params.items[p].first, idx, autodiff, central});
  }
  return res;
}

// Max relative error of a 32-bit autodiff gradient against the central
// differences recorded by grad_check on a mirrored 64-bit instantiation
// (same parameter names/values). The 64-bit mode exists for exactly this
// oracle path: float central differences are dominated by forward rounding
// noise, which would measure the oracle rather than the gradients.
template <typename F>
double oracle_rel_error(F&& loss_fn, ParamStore<float>& params, const GradCheckResult& oracle) {
  params.zero_grads();
  Tensor<float> loss = loss_fn();
  if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericFault("oracle_rel_error: non-finite loss");
  loss.backward();
  double max_rel = 0;
  for (const auto& s : oracle.samples) {
    auto* t = params.find(s.param);
    require(t != nullptr, "oracle_rel_error: missing parameter '" + s.param + "'");
    const double g = t->has_grad() ? static_cast<double>(t->grad()[s.index]) : 0.0;
    max_rel = std::max(max_rel, std::abs(g - s.central) / (std::abs(s.central) + 1e-8));
  }
  return max_rel;
}

}  // namespace difflight::numcore
