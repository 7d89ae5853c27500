#pragma once

// Minimal 1-D temporal U-Net ablation variant: conv/pool/upsample over the
// flattened window with one skip connection. Sees only the local trajectory
// and zero-padded rewards (no neighbor feed, no null token) - enough to
// reproduce the direction of the architecture comparison, not its
// magnitudes.

#include "difflight/stformer/model.hpp"

namespace difflight::stformer {

template <typename S>
class TemporalUNet {
 public:
  TemporalUNet(StformerConfig cfg, ParamStore<S>& store, Rng init_rng) : cfg_(cfg) {
    cfg_.validate();
    require(cfg_.window_steps % 2 == 0, "unet: window length must be even");
    const int D = cfg_.width;
    const int cin = 2 * lane_cols() + 2;  // x_k, observed values, observed flag, zero-padded reward
    in_ = make_conv(store, "unet.in", cin, D, init_rng);
    down_ = make_conv(store, "unet.down", D, 2 * D, init_rng);
    up_ = make_conv(store, "unet.up", 2 * D, D, init_rng);
    fuse_ = make_conv(store, "unet.fuse", 2 * D, D, init_rng);
    emb_dt_w_ = xavier(store, "unet.dt.w", D, D, init_rng);
    emb_dt_b_ = store.add("unet.dt.b", Tensor<S>::zeros({D}));
    out_w_ = store.add("unet.out.w", Tensor<S>::zeros({3 * D, lane_cols()}));
    out_b_ = store.add("unet.out.b", Tensor<S>::zeros({lane_cols()}));
  }

  const StformerConfig& config() const { return cfg_; }

  Tensor<S> forward(const std::vector<SampleInput<S>>& batch) const {
    using namespace numcore;
    const int B = static_cast<int>(batch.size());
    const int T = cfg_.window_steps, D = cfg_.width;
    const int LC = lane_cols();
    const int cin = 2 * LC + 2;
    Vec<S> host(static_cast<std::int64_t>(B) * T * cin);
    Vec<S> dts(static_cast<std::int64_t>(B) * D);
    std::int64_t w = 0;
    for (int b = 0; b < B; ++b) {
      const auto& s = batch[static_cast<size_t>(b)];
      for (int t = 0; t < T; ++t) {
        for (int c = 0; c < LC; ++c) host[w++] = s.x_k(t, c);
        for (int c = 0; c < LC; ++c) host[w++] = s.observed[t] ? s.obs_values(t, c) : S(0);
        host[w++] = s.observed[t] ? S(1) : S(0);
        // zero-padded reward: missing (or dropped) rewards enter as 0
        host[w++] = (s.reward_avail[t] && !s.null_condition) ? s.rewards[t] : S(0);
      }
      dts.segment(static_cast<std::int64_t>(b) * D, D) = sinusoidal_features<S>(batch[static_cast<size_t>(b)].k, D);
    }
    auto x_in = Tensor<S>::constant({B, T, cin}, std::move(host));
    auto dt_in = Tensor<S>::constant({B, D}, std::move(dts));
    auto e_dt = add(matmul(dt_in, emb_dt_w_), emb_dt_b_);  // [B, D]
    auto bidx = std::make_shared<std::vector<int>>();
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t) bidx->push_back(b);

    auto h1 = gelu(add_rows(conv3(x_in, in_), e_dt, bidx));  // [B, T, D]
    auto pooled = avg_pool2(h1);                             // [B, T/2, D]
    auto h2 = gelu(conv3(pooled, down_));                    // [B, T/2, 2D]
    auto u = gelu(conv3(upsample2(h2), up_));                // [B, T, D]
    auto h3 = gelu(conv3(concat<S>({h1, u}, 2), fuse_));     // [B, T, D]
    auto feats = concat<S>({h1, u, h3}, 2);                  // [B, T, 3D]
    return reshape(add(matmul(feats, out_w_), out_b_), {B, T, cfg_.lanes, cfg_.lane_features});
  }

  Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> predict_noise(const SampleInput<S>& in) const {
    numcore::NoGradGuard ng;
    auto out = forward({in});
    Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> win(cfg_.window_steps, lane_cols());
    for (int t = 0; t < cfg_.window_steps; ++t)
      for (int c = 0; c < lane_cols(); ++c)
        win(t, c) = out.value()[static_cast<std::int64_t>(t) * lane_cols() + c];
    return win;
  }

 private:
  int lane_cols() const { return cfg_.lanes * cfg_.lane_features; }

  struct Conv {
    Tensor<S> w;  // [3*cin, cout], kernel size 3, same padding
    Tensor<S> b;
  };
  static Tensor<S> xavier(ParamStore<S>& store, const std::string& name, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    return store.add(name, Tensor<S>::param({fan_in, fan_out},
                                            rng.uniform_vec<S>(static_cast<std::int64_t>(fan_in) * fan_out, -bound,
                                                               bound)));
  }
  static Conv make_conv(ParamStore<S>& store, const std::string& prefix, int cin, int cout, Rng& rng) {
    Conv c;
    c.w = xavier(store, prefix + ".w", 3 * cin, cout, rng);
    c.b = store.add(prefix + ".b", Tensor<S>::zeros({cout}));
    return c;
  }

  // Same-padded temporal conv, kernel 3, via shifted slices + one matmul.
  static Tensor<S> conv3(const Tensor<S>& x, const Conv& c) {
    using namespace numcore;
    const int B = x.dim(0), T = x.dim(1), C = x.dim(2);
    auto zero = Tensor<S>::zeros({B, 1, C});
    auto padded = concat<S>({zero, x, zero}, 1);            // [B, T+2, C]
    auto left = slice(padded, 1, 0, T);
    auto mid = slice(padded, 1, 1, T);
    auto right = slice(padded, 1, 2, T);
    auto windows = concat<S>({left, mid, right}, 2);        // [B, T, 3C]
    return add(matmul(windows, c.w), c.b);
  }

  // Average pooling over timestep pairs via a fixed averaging matrix.
  static Tensor<S> avg_pool2(const Tensor<S>& x) {
    using namespace numcore;
    const int B = x.dim(0), T = x.dim(1), C = x.dim(2);
    Vec<S> avg = Vec<S>::Zero(static_cast<std::int64_t>(2 * C) * C);
    for (int c = 0; c < C; ++c) {
      avg[static_cast<std::int64_t>(c) * C + c] = S(0.5);
      avg[static_cast<std::int64_t>(C + c) * C + c] = S(0.5);
    }
    auto m = Tensor<S>::constant({2 * C, C}, std::move(avg));
    return matmul(reshape(x, {B, T / 2, 2 * C}), m);
  }

  // Nearest-neighbor upsample x2: duplicate each timestep row.
  static Tensor<S> upsample2(const Tensor<S>& x) {
    using namespace numcore;
    const int B = x.dim(0), T = x.dim(1), C = x.dim(2);
    return reshape(concat<S>({x, x}, 2), {B, 2 * T, C});
  }

  StformerConfig cfg_;
  Conv in_, down_, up_, fuse_;
  Tensor<S> emb_dt_w_, emb_dt_b_, out_w_, out_b_;
};

// Dispatch wrapper so the trainer/controller can run either noise model.
// `custom` overrides both (oracle predictors in conformance tests).
template <typename S>
struct NoisePredictor {
  std::shared_ptr<NoiseModel<S>> stf;
  std::shared_ptr<TemporalUNet<S>> unet;
  std::function<Tensor<S>(const std::vector<SampleInput<S>>&)> custom;

  const StformerConfig& config() const { return stf ? stf->config() : unet->config(); }
  Tensor<S> forward(const std::vector<SampleInput<S>>& batch) const {
    if (custom) return custom(batch);
    return stf ? stf->forward(batch) : unet->forward(batch);
  }
};

}  // namespace difflight::stformer
