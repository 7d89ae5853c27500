#pragma once

// The noise model: a data embedding layer (separate MLP embedders for
// diffusion timestep, trajectory timestep, rewards, local trajectory and
// neighbor trajectories, all width D), stacked spatial-temporal encoder
// layers (communication cross-attention over each lane's neighbor feed,
// spatial self-attention across the 12 lanes, temporal self-attention along
// the window) and an MLP output head mapping back to per-cell noise.
//
// Timestep embeddings are added to every attention input; the reward
// embedding is added to the spatial/temporal self-attention inputs.
// Pre-normalization keeps every residual branch an exact identity when its
// value/output projections are zero.

#include <vector>

#include "difflight/numcore/tensor.hpp"
#include "difflight/rng.hpp"

namespace difflight::stformer {

using numcore::ParamStore;
using numcore::Tensor;

struct StformerConfig {
  int width = 64;        // D
  int layers = 2;        // encoder layers
  int heads = 4;
  int window_steps = 8;  // T = C + H
  int lanes = 12;
  int feeder_lanes = 3;  // L'
  int lane_features = 2;

  int mlp_hidden() const { return 2 * width; }
  int ctr_features() const { return 2 * lane_features + 1; }  // x_k, observed value, observed flag
  // neighbor cells are pure zero-pads when missing: indistinguishable from
  // an observed zero, so no flag channel
  int ntr_features() const { return lane_features; }
  int nei_cells() const { return window_steps * feeder_lanes; }

  void validate() const {
    require(width > 0 && width % 2 == 0, "stformer: width must be even");
    require(heads > 0 && width % heads == 0, "stformer: heads must divide width");
    require(layers >= 1 && window_steps >= 1 && lanes >= 1 && feeder_lanes >= 1, "stformer: bad dims");
  }
};

// One window of one intersection, normalized, ready for the noise model.
template <typename S>
struct SampleInput {
  Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> x_k;         // T x (lanes*2)
  Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> obs_values;  // T x (lanes*2), zero where unobserved
  Eigen::Array<bool, Eigen::Dynamic, 1> observed;              // T
  Eigen::Array<S, Eigen::Dynamic, 1> rewards;                  // T, in [0,1]
  Eigen::Array<bool, Eigen::Dynamic, 1> reward_avail;          // T
  bool null_condition = false;                                 // condition = phi for the whole pass
  int k = 1;
  Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> nei_values;  // lanes x (T*L'*2)
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> nei_avail;  // lanes x (T*L')
};

// Sinusoidal position features of width `dim` (half sine, half cosine).
template <typename S>
Vec<S> sinusoidal_features(double position, int dim) {
  Vec<S> out(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    out[2 * i] = static_cast<S>(std::sin(position * freq));
    out[2 * i + 1] = static_cast<S>(std::cos(position * freq));
  }
  return out;
}

namespace detail {

template <typename S>
struct Linear {
  Tensor<S> w, b;
};

template <typename S>
struct LayerNormP {
  Tensor<S> g, b;
};

template <typename S>
struct Embedder {  // 2-layer MLP, GELU between
  Linear<S> l0, l1;
};

template <typename S>
struct AttnBlock {
  LayerNormP<S> ln_q, ln_kv;  // self-attention uses ln_q for everything
  Tensor<S> wq, wk, wv, wo, bo;
};

template <typename S>
struct MlpBlock {
  LayerNormP<S> ln;
  Linear<S> l1, l2;
};

template <typename S>
struct EncoderLayer {
  AttnBlock<S> cca, ssa, tsa;
  MlpBlock<S> mlp;
};

}  // namespace detail

template <typename S>
class NoiseModel {
 public:
  NoiseModel(StformerConfig cfg, ParamStore<S>& store, Rng init_rng) : cfg_(cfg) {
    cfg_.validate();
    const int D = cfg_.width;
    emb_ctr_ = make_embedder(store, "stf.emb.ctr", cfg_.ctr_features(), D, init_rng);
    emb_ntr_ = make_embedder(store, "stf.emb.ntr", cfg_.ntr_features(), D, init_rng);
    emb_r_ = make_embedder(store, "stf.emb.r", 1, D, init_rng);
    emb_dt_ = make_embedder(store, "stf.emb.dt", D, D, init_rng);
    emb_tt_ = make_embedder(store, "stf.emb.tt", D, D, init_rng);
    null_r_ = store.add("stf.null_r", Tensor<S>::param({D}, init_rng.normal_vec<S>(D) * S(0.02)));
    for (int i = 0; i < cfg_.layers; ++i) {
      const std::string p = "stf.L" + std::to_string(i) + ".";
      detail::EncoderLayer<S> layer;
      layer.cca = make_attn(store, p + "cca", D, init_rng, /*cross=*/true);
      layer.ssa = make_attn(store, p + "ssa", D, init_rng, false);
      layer.tsa = make_attn(store, p + "tsa", D, init_rng, false);
      layer.mlp.ln = make_ln(store, p + "mlp.ln", D);
      layer.mlp.l1 = make_linear(store, p + "mlp.w1", p + "mlp.b1", D, cfg_.mlp_hidden(), init_rng);
      layer.mlp.l2 = make_linear(store, p + "mlp.w2", p + "mlp.b2", cfg_.mlp_hidden(), D, init_rng);
      layers_.push_back(std::move(layer));
    }
    head_ln_ = make_ln(store, "stf.head.ln", D);
    head_l0_ = make_linear(store, "stf.head.w0", "stf.head.b0", D, D, init_rng);
    // zero-initialized head: the initial model predicts zero noise
    head_l1_.w = store.add("stf.head.w1", Tensor<S>::zeros({D, cfg_.lane_features}));
    head_l1_.b = store.add("stf.head.b1", Tensor<S>::zeros({cfg_.lane_features}));
  }

  const StformerConfig& config() const { return cfg_; }

  // Batched forward: eps_hat as a [B, T, lanes, 2] tensor on the tape.
  Tensor<S> forward(const std::vector<SampleInput<S>>& batch) const {
    const int B = static_cast<int>(batch.size());
    require(B > 0, "stformer: empty batch");
    const int T = cfg_.window_steps, L = cfg_.lanes, D = cfg_.width;
    const int F = cfg_.lane_features;
    const int NC = cfg_.nei_cells();
    for (const auto& s : batch) {
      require(s.x_k.rows() == T && s.x_k.cols() == L * F, "stformer: x_k must be T x lanes*2");
      require(s.nei_values.rows() == L && s.nei_values.cols() == NC * F, "stformer: bad neighbor feed shape");
      require(s.k >= 1, "stformer: diffusion step must be >= 1");
    }

    // ---- host-side batch assembly ----------------------------------------
    Vec<S> ctr(static_cast<std::int64_t>(B) * T * L * cfg_.ctr_features());
    Vec<S> ntr(static_cast<std::int64_t>(B) * L * NC * cfg_.ntr_features());
    Vec<S> rin(static_cast<std::int64_t>(B) * T);
    Vec<S> dts(static_cast<std::int64_t>(B) * D);
    auto rsel = std::make_shared<std::vector<std::uint8_t>>(static_cast<size_t>(B) * T);
    {
      std::int64_t ci = 0, ni = 0;
      for (int b = 0; b < B; ++b) {
        const auto& s = batch[static_cast<size_t>(b)];
        for (int t = 0; t < T; ++t) {
          const S flag = s.observed[t] ? S(1) : S(0);
          for (int l = 0; l < L; ++l) {
            for (int f = 0; f < F; ++f) ctr[ci++] = s.x_k(t, l * F + f);
            for (int f = 0; f < F; ++f) ctr[ci++] = s.observed[t] ? s.obs_values(t, l * F + f) : S(0);
            ctr[ci++] = flag;
          }
          rin[b * T + t] = s.reward_avail[t] ? s.rewards[t] : S(0);
          (*rsel)[static_cast<size_t>(b * T + t)] = (s.reward_avail[t] && !s.null_condition) ? 1 : 0;
        }
        for (int l = 0; l < L; ++l) {
          for (int c = 0; c < NC; ++c) {
            const bool av = s.nei_avail(l, c);
            for (int f = 0; f < F; ++f) ntr[ni++] = av ? s.nei_values(l, c * F + f) : S(0);
          }
        }
        dts.segment(static_cast<std::int64_t>(b) * D, D) = sinusoidal_features<S>(batch[static_cast<size_t>(b)].k, D);
      }
    }
    Vec<S> tts(static_cast<std::int64_t>(T) * D);
    for (int t = 0; t < T; ++t) tts.segment(static_cast<std::int64_t>(t) * D, D) = sinusoidal_features<S>(t, D);

    // row -> embedding-row index maps for the three layouts
    auto tm_b = std::make_shared<std::vector<int>>();
    auto tm_t = std::make_shared<std::vector<int>>();
    auto tm_bt = std::make_shared<std::vector<int>>();
    auto lm_b = std::make_shared<std::vector<int>>();
    auto lm_t = std::make_shared<std::vector<int>>();
    auto lm_bt = std::make_shared<std::vector<int>>();
    auto nm_b = std::make_shared<std::vector<int>>();
    auto nm_t = std::make_shared<std::vector<int>>();
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t)
        for (int l = 0; l < L; ++l) {
          tm_b->push_back(b);
          tm_t->push_back(t);
          tm_bt->push_back(b * T + t);
        }
    for (int b = 0; b < B; ++b)
      for (int l = 0; l < L; ++l)
        for (int t = 0; t < T; ++t) {
          lm_b->push_back(b);
          lm_t->push_back(t);
          lm_bt->push_back(b * T + t);
        }
    for (int b = 0; b < B; ++b)
      for (int l = 0; l < L; ++l)
        for (int c = 0; c < NC; ++c) {
          nm_b->push_back(b);
          nm_t->push_back(c / cfg_.feeder_lanes);
        }

    using namespace numcore;
    auto ctr_in = Tensor<S>::constant({B * T * L, cfg_.ctr_features()}, std::move(ctr));
    auto ntr_in = Tensor<S>::constant({B * L * NC, cfg_.ntr_features()}, std::move(ntr));
    auto r_in = Tensor<S>::constant({B * T, 1}, std::move(rin));
    auto dt_in = Tensor<S>::constant({B, D}, std::move(dts));
    auto tt_in = Tensor<S>::constant({T, D}, std::move(tts));

    // ---- data embedding layer ---------------------------------------------
    auto e_dt = run_embedder(emb_dt_, dt_in);                       // [B, D]
    auto e_tt = run_embedder(emb_tt_, tt_in);                       // [T, D]
    auto e_r = where_rows(rsel, run_embedder(emb_r_, r_in), null_r_);  // [B*T, D]
    auto e_ntr = run_embedder(emb_ntr_, ntr_in);                    // [B*L*NC, D]
    auto x = reshape(run_embedder(emb_ctr_, ctr_in), {B, T, L, D});

    // neighbor keys/values are constant across layers: bias them once
    auto ntr_biased = reshape(add_rows(add_rows(e_ntr, e_dt, nm_b), e_tt, nm_t), {B * L, NC, D});

    for (const auto& layer : layers_) {
      // CCA: per-lane queries over time attend to that lane's neighbor cells
      auto xl = reshape(swap_mid(x), {B * L, T, D});
      auto q_in = add_rows(add_rows(xl, e_dt, lm_b), e_tt, lm_t);
      auto qn = layer_norm(q_in, layer.cca.ln_q.g, layer.cca.ln_q.b);
      auto kn = layer_norm(ntr_biased, layer.cca.ln_kv.g, layer.cca.ln_kv.b);
      auto att = attention(matmul(qn, layer.cca.wq), matmul(kn, layer.cca.wk), matmul(kn, layer.cca.wv), cfg_.heads);
      auto xl2 = add(xl, add(matmul(att, layer.cca.wo), layer.cca.bo));
      auto x2 = swap_mid(reshape(xl2, {B, L, T, D}));  // e_ctr'

      // SSA across lanes at each timestep
      auto s_in = add_rows(add_rows(add_rows(x2, e_dt, tm_b), e_tt, tm_t), e_r, tm_bt);
      auto sn = reshape(layer_norm(s_in, layer.ssa.ln_q.g, layer.ssa.ln_q.b), {B * T, L, D});
      auto s_att =
          attention(matmul(sn, layer.ssa.wq), matmul(sn, layer.ssa.wk), matmul(sn, layer.ssa.wv), cfg_.heads);
      auto ssa_out = reshape(add(matmul(s_att, layer.ssa.wo), layer.ssa.bo), {B, T, L, D});

      // TSA along the window for each lane
      auto xt = reshape(swap_mid(x2), {B * L, T, D});
      auto t_in = add_rows(add_rows(add_rows(xt, e_dt, lm_b), e_tt, lm_t), e_r, lm_bt);
      auto tn = layer_norm(t_in, layer.tsa.ln_q.g, layer.tsa.ln_q.b);
      auto t_att =
          attention(matmul(tn, layer.tsa.wq), matmul(tn, layer.tsa.wk), matmul(tn, layer.tsa.wv), cfg_.heads);
      auto tsa_out = swap_mid(reshape(add(matmul(t_att, layer.tsa.wo), layer.tsa.bo), {B, L, T, D}));

      // STE combine: MLP over the summed attention outputs, residual to e_ctr'
      auto m_in = layer_norm(add(ssa_out, tsa_out), layer.mlp.ln.g, layer.mlp.ln.b);
      auto h = gelu(add(matmul(reshape(m_in, {B * T * L, D}), layer.mlp.l1.w), layer.mlp.l1.b));
      auto m_out = reshape(add(matmul(h, layer.mlp.l2.w), layer.mlp.l2.b), {B, T, L, D});
      x = add(x2, m_out);
    }

    auto hn = layer_norm(x, head_ln_.g, head_ln_.b);
    auto h0 = gelu(add(matmul(reshape(hn, {B * T * L, D}), head_l0_.w), head_l0_.b));
    auto out = add(matmul(h0, head_l1_.w), head_l1_.b);
    Tensor<S> eps = reshape(out, {B, T, L, F});
    if (!eps.value().allFinite()) throw NumericFault("stformer: non-finite activations in predict_noise");
    return eps;
  }

  // Convenience: single-sample prediction without tape, as a T x (lanes*2)
  // window array.
  Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> predict_noise(const SampleInput<S>& in) const {
    numcore::NoGradGuard ng;
    auto out = forward({in});
    return window_of(out, 0);
  }

  // Slice sample b of a [B, T, lanes, 2] output into a T x (lanes*2) array.
  Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> window_of(const Tensor<S>& out, int b) const {
    const int T = cfg_.window_steps, L = cfg_.lanes, F = cfg_.lane_features;
    Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> w(T, L * F);
    const auto& v = out.value();
    const std::int64_t base = static_cast<std::int64_t>(b) * T * L * F;
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < L * F; ++c) w(t, c) = v[base + static_cast<std::int64_t>(t) * L * F + c];
    return w;
  }

 private:
  static Tensor<S> xavier(ParamStore<S>& store, const std::string& name, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    return store.add(name, Tensor<S>::param({fan_in, fan_out},
                                            rng.uniform_vec<S>(static_cast<std::int64_t>(fan_in) * fan_out, -bound,
                                                               bound)));
  }
  static detail::Linear<S> make_linear(ParamStore<S>& store, const std::string& wname, const std::string& bname,
                                       int in, int out, Rng& rng) {
    detail::Linear<S> l;
    l.w = xavier(store, wname, in, out, rng);
    l.b = store.add(bname, Tensor<S>::zeros({out}));
    return l;
  }
  static detail::LayerNormP<S> make_ln(ParamStore<S>& store, const std::string& prefix, int dim) {
    detail::LayerNormP<S> ln;
    ln.g = store.add(prefix + ".g", Tensor<S>::param({dim}, Vec<S>::Ones(dim)));
    ln.b = store.add(prefix + ".b", Tensor<S>::zeros({dim}));
    return ln;
  }
  static detail::Embedder<S> make_embedder(ParamStore<S>& store, const std::string& prefix, int in, int out,
                                           Rng& rng) {
    detail::Embedder<S> e;
    e.l0 = make_linear(store, prefix + ".w0", prefix + ".b0", in, out, rng);
    e.l1 = make_linear(store, prefix + ".w1", prefix + ".b1", out, out, rng);
    return e;
  }
  static detail::AttnBlock<S> make_attn(ParamStore<S>& store, const std::string& prefix, int D, Rng& rng,
                                        bool cross) {
    detail::AttnBlock<S> a;
    a.ln_q = make_ln(store, prefix + ".lnq", D);
    if (cross) a.ln_kv = make_ln(store, prefix + ".lnkv", D);
    a.wq = xavier(store, prefix + ".wq", D, D, rng);
    a.wk = xavier(store, prefix + ".wk", D, D, rng);
    a.wv = xavier(store, prefix + ".wv", D, D, rng);
    a.wo = xavier(store, prefix + ".wo", D, D, rng);
    a.bo = store.add(prefix + ".bo", Tensor<S>::zeros({D}));
    return a;
  }
  Tensor<S> run_embedder(const detail::Embedder<S>& e, const Tensor<S>& in) const {
    using namespace numcore;
    return add(matmul(gelu(add(matmul(in, e.l0.w), e.l0.b)), e.l1.w), e.l1.b);
  }

  StformerConfig cfg_;
  detail::Embedder<S> emb_ctr_, emb_ntr_, emb_r_, emb_dt_, emb_tt_;
  Tensor<S> null_r_;
  std::vector<detail::EncoderLayer<S>> layers_;
  detail::LayerNormP<S> head_ln_;
  detail::Linear<S> head_l0_, head_l1_;
};

}  // namespace difflight::stformer
