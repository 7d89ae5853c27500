#include "difflight/trainer/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>

#include "difflight/numcore/checkpoint.hpp"

namespace difflight::trainer {

namespace fs = std::filesystem;
using datapipe::WindowSample;
using numcore::ParamStore;
using numcore::Tensor;
using stformer::SampleInput;

void TrainConfig::validate() const {
  require(batch_size >= 1 && lr > 0 && effective_steps() >= 0, "train config: bad optimizer settings");
  require(p_uncond >= 0 && p_uncond < 1, "train config: p_uncond must be in [0,1)");
  require(history == datapipe::kHistory && horizon == datapipe::kHorizon,
          "train config: window lengths are fixed to C=5, H=3 in this build");
  require(diffusion_steps >= 1, "train config: diffusion_steps must be positive");
  model_config().validate();
}

ConditionChoice build_training_condition(const WindowSample& sample, double p_uncond, Rng& rng) {
  ConditionChoice c;
  c.use_null = rng.bernoulli(p_uncond);
  c.masks.m_obs = sample.rewards.available;
  c.masks.m_mis = !sample.rewards.available;
  return c;
}

TrainedModel init_model(const TrainConfig& cfg, const datapipe::Normalization& norm,
                        const std::string& topology_hash) {
  cfg.validate();
  TrainedModel m;
  m.config = cfg;
  m.norm = norm;
  m.topology_hash = topology_hash;
  m.store = std::make_shared<ParamStore<float>>();
  Rng init = Rng(cfg.seed).fork("init");
  if (cfg.noise_model == NoiseModelKind::Stformer) {
    m.predictor.stf = std::make_shared<stformer::NoiseModel<float>>(cfg.model_config(), *m.store, init.fork("stf"));
  } else {
    m.predictor.unet = std::make_shared<stformer::TemporalUNet<float>>(cfg.model_config(), *m.store, init.fork("unet"));
  }
  invdyn::InvDynConfig icfg;
  icfg.hidden = cfg.invdyn_hidden;
  m.inv = std::make_shared<invdyn::InverseDynamics<float>>(icfg, *m.store, init.fork("inv"));
  m.schedule = diffusion::DiffusionSchedule::cosine(cfg.diffusion_steps, cfg.cosine_s);
  m.adam = numcore::AdamState<float>::init(*m.store, cfg.lr);
  return m;
}

namespace {

struct Anchor {
  int episode, intersection, t;
};

std::vector<Anchor> valid_anchors(const datapipe::OfflineDataset& ds) {
  std::vector<Anchor> anchors;
  for (int e = 0; e < static_cast<int>(ds.episodes.size()); ++e)
    for (int i = 0; i < ds.n_intersections(); ++i)
      for (int t = datapipe::kHistory - 1; t + datapipe::kHorizon < ds.n_steps(); ++t)
        anchors.push_back({e, i, t});
  require(!anchors.empty(), "train: dataset has no valid windows");
  return anchors;
}

SampleInput<float> to_model_input(const WindowSample& s, int k,
                                  const diffusion::WindowArray<float>& x_k, bool null_condition) {
  SampleInput<float> in;
  in.x_k = x_k;
  in.obs_values = s.window.values;
  in.observed = s.window.observed;
  in.rewards = s.rewards.values;
  in.reward_avail = s.rewards.available;
  in.null_condition = null_condition;
  in.k = k;
  in.nei_values = s.neighbors.values;
  in.nei_avail = s.neighbors.avail;
  return in;
}

void dump_diagnostic(const std::string& dir, long step, const std::vector<int>& ks,
                     const std::vector<Anchor>& anchors) {
  if (dir.empty()) return;
  fs::create_directories(dir);
  std::ofstream f(fs::path(dir) / "nan_batch_dump.txt");
  f << "step=" << step << "\n";
  for (size_t i = 0; i < ks.size(); ++i)
    f << "sample " << i << ": episode=" << anchors[i].episode << " intersection=" << anchors[i].intersection
      << " t=" << anchors[i].t << " k=" << ks[i] << "\n";
}

}  // namespace

TrainReport train(TrainedModel& model, const datapipe::OfflineDataset& ds, const datapipe::MaskSet& mask,
                  const std::string& checkpoint_dir) {
  const TrainConfig& cfg = model.config;
  cfg.validate();
  ds.validate();
  require(mask.topology_hash == ds.topo_hash, "train: mask and dataset topology differ");
  require(mask.n_steps >= ds.n_steps(), "train: mask does not cover the dataset horizon");
  const int T = cfg.history + cfg.horizon;
  const int cols = trafficsim::kLanes * datapipe::kLaneFeatures;

  const auto anchors = valid_anchors(ds);
  const auto transitions = datapipe::indicator_transitions(ds, mask);

  Rng rng = Rng(cfg.seed).fork("train");
  TrainReport report;
  report.checkpoint_dir = checkpoint_dir;
  long dropout_draws = 0, dropout_hits = 0;
  const auto t_start = std::chrono::steady_clock::now();

  for (long step = 0; step < cfg.effective_steps(); ++step) {
    // --- assemble the diffusion batch ------------------------------------
    std::vector<SampleInput<float>> batch;
    std::vector<Anchor> picked;
    std::vector<int> ks;
    Vec<float> targets(static_cast<std::int64_t>(cfg.batch_size) * T * cols);
    Vec<float> weights = Vec<float>::Zero(static_cast<std::int64_t>(cfg.batch_size) * T * cols);
    int attempts = 0;
    while (static_cast<int>(batch.size()) < cfg.batch_size) {
      require(++attempts <= cfg.batch_size * 64, "train: cannot assemble a batch (no splittable windows)");
      const Anchor a = anchors[static_cast<size_t>(rng.uniform_int64(static_cast<std::int64_t>(anchors.size())))];
      WindowSample s = datapipe::make_window(ds, mask, a.episode, a.intersection, a.t);
      auto split = datapipe::self_supervised_split(s, mask.pattern, rng);
      if (!split.ok) continue;  // nothing observable: skip-sample
      ConditionChoice cond = build_training_condition(s, cfg.p_uncond, rng);
      dropout_draws += 1;
      dropout_hits += cond.use_null ? 1 : 0;
      if (cfg.reward_handling == RewardHandling::ZeroPad && !cond.use_null) {
        // ablation: missing rewards become 0-valued "available" conditions
        s.rewards.available.setConstant(true);
      }

      const int k = 1 + rng.uniform_int(cfg.diffusion_steps);
      diffusion::WindowArray<float> eps(T, cols);
      for (int r = 0; r < T; ++r)
        for (int c = 0; c < cols; ++c) eps(r, c) = static_cast<float>(rng.normal());
      auto x_k = diffusion::forward_noise(s.window.values, k, eps, model.schedule);

      const std::int64_t base = static_cast<std::int64_t>(batch.size()) * T * cols;
      for (int r = 0; r < T; ++r)
        for (int c = 0; c < cols; ++c) {
          targets[base + static_cast<std::int64_t>(r) * cols + c] = eps(r, c);
          const bool counted = cfg.loss_mask_policy == LossMaskPolicy::AllCells || s.cell_known[r];
          if (counted) weights[base + static_cast<std::int64_t>(r) * cols + c] = 1.0f;
        }
      batch.push_back(to_model_input(s, k, x_k, cond.use_null));
      picked.push_back(a);
      ks.push_back(k);
    }

    // --- inverse dynamics batch (indicator-passing transitions) ----------
    Tensor<float> inv_loss = Tensor<float>::scalar_const(0.0f);
    bool have_inv = !transitions.empty();
    if (have_inv) {
      const int nb = std::min<int>(cfg.invdyn_batch, static_cast<int>(transitions.size()));
      Vec<float> pairs(static_cast<std::int64_t>(nb) * 2 * cols);
      auto labels = std::make_shared<std::vector<int>>();
      for (int i = 0; i < nb; ++i) {
        const auto& tr =
            transitions[static_cast<size_t>(rng.uniform_int64(static_cast<std::int64_t>(transitions.size())))];
        const auto& rec0 = ds.episodes[static_cast<size_t>(tr.episode)].at(tr.t, tr.intersection);
        const auto& rec1 = ds.episodes[static_cast<size_t>(tr.episode)].at(tr.t + 1, tr.intersection);
        for (int c = 0; c < cols; ++c)
          pairs[static_cast<std::int64_t>(i) * 2 * cols + c] = model.norm.obs_to_unit(rec0.obs[static_cast<size_t>(c)]);
        for (int c = 0; c < cols; ++c)
          pairs[static_cast<std::int64_t>(i) * 2 * cols + cols + c] =
              model.norm.obs_to_unit(rec1.obs[static_cast<size_t>(c)]);
        labels->push_back(tr.action);
      }
      auto w = std::make_shared<const Vec<float>>(Vec<float>::Ones(nb));
      inv_loss = model.inv->loss(Tensor<float>::constant({static_cast<int>(labels->size()), 2 * cols}, std::move(pairs)),
                                 std::shared_ptr<const std::vector<int>>(labels), w);
    }

    // --- joint step -------------------------------------------------------
    model.store->zero_grads();
    auto eps_hat = model.predictor.forward(batch);
    const int flat = static_cast<int>(targets.size());
    auto diff_loss = numcore::masked_mse(numcore::reshape(eps_hat, {flat}),
                                         std::make_shared<const Vec<float>>(std::move(targets)),
                                         std::make_shared<const Vec<float>>(std::move(weights)));
    auto total = have_inv ? numcore::add(diff_loss, inv_loss) : diff_loss;
    const float dl = diff_loss.item();
    const float il = have_inv ? inv_loss.item() : 0.0f;
    if (!std::isfinite(dl) || !std::isfinite(il)) {
      dump_diagnostic(checkpoint_dir, step, ks, picked);
      throw NumericFault("train: non-finite loss at step " + std::to_string(step) +
                         " (diagnostic dump written to checkpoint dir)");
    }
    total.backward();
    numcore::adam_step(*model.store, model.adam);
    model.trained_steps += 1;
    report.diffusion_loss.push_back(dl);
    report.invdyn_loss.push_back(il);

    if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(checkpoint_dir, model);
  }

  if (!checkpoint_dir.empty()) save_checkpoint(checkpoint_dir, model);
  report.steps = cfg.effective_steps();
  report.condition_dropout_rate =
      dropout_draws > 0 ? static_cast<double>(dropout_hits) / static_cast<double>(dropout_draws) : 0.0;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

void save_checkpoint(const std::string& dir, const TrainedModel& model) {
  fs::create_directories(dir);
  numcore::NamedArrays c;
  for (const auto& [name, t] : model.store->items)
    c.add_f32(name, t.shape(), t.value().data(), t.size());
  for (size_t i = 0; i < model.store->items.size(); ++i) {
    const auto& [name, t] = model.store->items[i];
    c.add_f32("adam.m." + name, t.shape(), model.adam.m[i].data(), t.size());
    c.add_f32("adam.v." + name, t.shape(), model.adam.v[i].data(), t.size());
  }
  numcore::save_container((fs::path(dir) / "params.bin").string(), c);

  std::map<std::string, std::string> kv;
  const TrainConfig& cfg = model.config;
  kv["model"] = cfg.noise_model == NoiseModelKind::Stformer ? "stformer" : "unet-stub";
  kv["width"] = std::to_string(cfg.model_width);
  kv["layers"] = std::to_string(cfg.model_layers);
  kv["heads"] = std::to_string(cfg.model_heads);
  kv["history"] = std::to_string(cfg.history);
  kv["horizon"] = std::to_string(cfg.horizon);
  kv["feeder_lanes"] = std::to_string(datapipe::kFeederLanes);
  kv["diffusion_steps"] = std::to_string(cfg.diffusion_steps);
  kv["schedule"] = "cosine";
  kv["cosine_s"] = std::to_string(cfg.cosine_s);
  kv["invdyn_hidden"] = std::to_string(cfg.invdyn_hidden);
  kv["lr"] = std::to_string(cfg.lr);
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["p_uncond"] = std::to_string(cfg.p_uncond);
  kv["omega"] = std::to_string(cfg.omega);
  kv["seed"] = std::to_string(cfg.seed);
  kv["loss_mask_policy"] = cfg.loss_mask_policy == LossMaskPolicy::KnownCellsOnly ? "known_cells_only" : "all_cells";
  kv["reward_handling"] = cfg.reward_handling == RewardHandling::Prcd ? "prcd" : "zero_pad";
  kv["lane_capacity"] = std::to_string(model.norm.lane_capacity);
  kv["q_max"] = std::to_string(model.norm.q_max);
  kv["topology_hash"] = model.topology_hash;
  kv["trained_steps"] = std::to_string(model.trained_steps);
  numcore::save_manifest((fs::path(dir) / "manifest.txt").string(), kv);
}

TrainedModel load_checkpoint(const std::string& dir) {
  auto kv = numcore::load_manifest((fs::path(dir) / "manifest.txt").string());
  TrainConfig cfg;
  cfg.noise_model = kv.at("model") == "stformer" ? NoiseModelKind::Stformer : NoiseModelKind::UnetStub;
  cfg.model_width = std::stoi(kv.at("width"));
  cfg.model_layers = std::stoi(kv.at("layers"));
  cfg.model_heads = std::stoi(kv.at("heads"));
  cfg.diffusion_steps = std::stoi(kv.at("diffusion_steps"));
  cfg.cosine_s = std::stod(kv.at("cosine_s"));
  cfg.invdyn_hidden = std::stoi(kv.at("invdyn_hidden"));
  cfg.lr = std::stof(kv.at("lr"));
  cfg.batch_size = std::stoi(kv.at("batch_size"));
  cfg.p_uncond = std::stod(kv.at("p_uncond"));
  cfg.omega = std::stof(kv.at("omega"));
  cfg.seed = std::stoull(kv.at("seed"));
  cfg.loss_mask_policy =
      kv.at("loss_mask_policy") == "all_cells" ? LossMaskPolicy::AllCells : LossMaskPolicy::KnownCellsOnly;
  cfg.reward_handling = kv.at("reward_handling") == "zero_pad" ? RewardHandling::ZeroPad : RewardHandling::Prcd;

  datapipe::Normalization norm;
  norm.lane_capacity = std::stoi(kv.at("lane_capacity"));
  norm.q_max = std::stof(kv.at("q_max"));

  TrainedModel model = init_model(cfg, norm, kv.at("topology_hash"));
  model.trained_steps = std::stol(kv.at("trained_steps"));

  auto c = numcore::load_container((fs::path(dir) / "params.bin").string());
  for (size_t i = 0; i < model.store->items.size(); ++i) {
    auto& [name, t] = model.store->items[i];
    const auto& arr = c.at(name);
    require(arr.dtype == numcore::DType::f32 && arr.count() == t.size(),
            "checkpoint: shape mismatch for '" + name + "'");
    std::memcpy(t.mutable_value().data(), arr.bytes.data(), arr.bytes.size());
    const auto& am = c.at("adam.m." + name);
    const auto& av = c.at("adam.v." + name);
    std::memcpy(model.adam.m[i].data(), am.bytes.data(), am.bytes.size());
    std::memcpy(model.adam.v[i].data(), av.bytes.data(), av.bytes.size());
  }
  model.adam.step_count = model.trained_steps;
  return model;
}

}  // namespace difflight::trainer
