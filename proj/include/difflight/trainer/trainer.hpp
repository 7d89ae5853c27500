#pragma once

// Training loop: window sampling over (episode, intersection, anchor),
// artificial self-supervision masking per the mask pattern, Bernoulli(p)
// condition dropout, noise-prediction loss on cells with known ground truth,
// joint inverse-dynamics loss on indicator-passing transitions, Adam.

#include <memory>
#include <optional>
#include <string>

#include "difflight/datapipe/window.hpp"
#include "difflight/diffusion/sampler.hpp"
#include "difflight/invdyn/model.hpp"
#include "difflight/numcore/adam.hpp"
#include "difflight/stformer/unet.hpp"

namespace difflight::trainer {

enum class LossMaskPolicy { KnownCellsOnly, AllCells };
enum class RewardHandling { Prcd, ZeroPad };
enum class NoiseModelKind { Stformer, UnetStub };

struct TrainConfig {
  int batch_size = 64;
  float lr = 2e-4f;
  long train_steps = 20000;  // desk-scale default; paper_scale restores 150000
  bool paper_scale = false;
  double p_uncond = 0.25;
  float omega = 1.2f;
  int history = datapipe::kHistory;  // C
  int horizon = datapipe::kHorizon;  // H
  int diffusion_steps = 100;         // K
  double cosine_s = 0.008;
  std::uint64_t seed = 1;
  LossMaskPolicy loss_mask_policy = LossMaskPolicy::KnownCellsOnly;
  RewardHandling reward_handling = RewardHandling::Prcd;
  NoiseModelKind noise_model = NoiseModelKind::Stformer;
  int model_width = 64;
  int model_layers = 2;
  int model_heads = 4;
  int invdyn_hidden = 128;
  int invdyn_batch = 64;
  long checkpoint_every = 0;  // 0: final only

  long effective_steps() const { return paper_scale ? 150000 : train_steps; }
  stformer::StformerConfig model_config() const {
    stformer::StformerConfig cfg;
    cfg.width = model_width;
    cfg.layers = model_layers;
    cfg.heads = model_heads;
    cfg.window_steps = history + horizon;
    return cfg;
  }
  void validate() const;
};

struct TrainReport {
  std::vector<float> diffusion_loss;  // one entry per step
  std::vector<float> invdyn_loss;
  double wall_seconds = 0;
  double condition_dropout_rate = 0;  // observed frequency of dropped conditions
  long steps = 0;
  std::string checkpoint_dir;
};

// A model bundle: parameters, the noise predictor, inverse dynamics, the
// diffusion schedule and normalization, plus optimizer state.
struct TrainedModel {
  std::shared_ptr<numcore::ParamStore<float>> store;
  stformer::NoisePredictor<float> predictor;
  std::shared_ptr<invdyn::InverseDynamics<float>> inv;
  diffusion::DiffusionSchedule schedule;
  datapipe::Normalization norm;
  TrainConfig config;
  std::string topology_hash;
  numcore::AdamState<float> adam;
  long trained_steps = 0;
};

TrainedModel init_model(const TrainConfig& cfg, const datapipe::Normalization& norm,
                        const std::string& topology_hash);

// Runs cfg.effective_steps() updates, checkpointing into checkpoint_dir
// (final checkpoint always written when the directory is non-empty).
TrainReport train(TrainedModel& model, const datapipe::OfflineDataset& ds, const datapipe::MaskSet& mask,
                  const std::string& checkpoint_dir);

void save_checkpoint(const std::string& dir, const TrainedModel& model);
TrainedModel load_checkpoint(const std::string& dir);

// Condition builder (Eq. 13's (1-beta) r + beta phi with the Eq. 9 masks):
// exposed for the dropout-frequency and mask tests.
struct ConditionChoice {
  bool use_null = false;   // beta = 1
  diffusion::MaskPair masks;
};
ConditionChoice build_training_condition(const datapipe::WindowSample& sample, double p_uncond, Rng& rng);

}  // namespace difflight::trainer
