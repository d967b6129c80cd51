#pragma once

#include <torch/torch.h>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fairtranslate/adam.hpp"
#include "fairtranslate/dataset.hpp"
#include "fairtranslate/losses.hpp"
#include "fairtranslate/networks.hpp"
#include "fairtranslate/pac.hpp"

namespace fairtranslate {

struct TrainConfig {
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 16;
  int epochs = 20;
  int lr_decay_every = 8;       // epochs between decays
  double lr_decay_factor = 0.5; // the interval is fixed; the factor is not
  int critic_steps_per_gen = 5;
  LossWeights weights;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;
  std::string run_id = "run";
  // a_t sampling policy: flip_one (default), random, permute
  std::string attr_policy = "flip_one";
  int log_every = 1;
  int threads = 0;  // 0 = leave torch's default

  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  int tac_hidden = 64;

  void validate() const;
};

// Everything the optimization owns: the four models, their optimizer moments,
// counters, and the RNG. Round-trips bit-exactly through save/load.
struct TrainState {
  Generator gen{nullptr};
  Discriminator disc{nullptr};
  TargetAttributeClassifier tac1{nullptr}, tac2{nullptr};
  std::unique_ptr<Adam> opt_g, opt_d, opt_t1, opt_t2;
  std::int64_t epoch = 0;
  std::int64_t global_step = 0;
  RngStream rng{0};

  static TrainState create(const TrainConfig& config);
  void save(const std::string& path, const TrainConfig& config) const;
  static TrainState load(const std::string& path, const TrainConfig& config);
};

// Draws per-example target attribute vectors from the originals.
torch::Tensor sample_target_attributes(const torch::Tensor& attrs, RngStream& rng,
                                       const std::string& policy = "flip_one");

struct Batch {
  torch::Tensor images;  // (B,3,H,W)
  torch::Tensor attrs;   // (B,K)
};

// One optimization round: critic_steps_per_gen critic updates, one generator
// update, one TAC1 descent and one TAC2 ascent. `pac` must be frozen.
LossReport train_step(TrainState& state, const Batch& batch, PacModel& pac,
                      const FeatureEmbedder& embedder, const TrainConfig& config);

struct TrainResult {
  std::vector<LossReport> reports;
  std::string last_checkpoint;
  std::vector<std::string> epoch_checkpoints;
};

using EpochCallback = std::function<void(int epoch, const LossReport& last)>;

// Full training loop with per-epoch checkpointing and the stepped LR decay.
// Pass `resume_from` to continue a run from one of its checkpoints.
TrainResult train(const TrainConfig& config, const std::vector<DatasetRecord>& records,
                  PacModel& pac, const std::string& resume_from = "",
                  const EpochCallback& on_epoch = nullptr);

void save_train_state(const std::string& path, const TrainState& state, const TrainConfig& config);

// Loads just the generator from a training checkpoint (for translate/eval).
Generator load_generator(const std::string& path);

}  // namespace fairtranslate
