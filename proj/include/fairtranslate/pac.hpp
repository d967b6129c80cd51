#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <vector>

#include "fairtranslate/dataset.hpp"

namespace fairtranslate {

// Identity in the forward pass; multiplies the incoming gradient by -lambda in
// the backward pass. Drives the encoder toward domain-invariant features.
torch::Tensor grad_reverse(const torch::Tensor& x, double lambda);

struct PacConfig {
  int resolution = 64;
  int base_channels = 32;  // conv widths double per block: base, 2x, 4x, 8x
  int gender_classes = 2;
  int age_classes = 6;
  int race_classes = 5;
  double grl_lambda = 1.0;
  bool lambda_ramp = false;  // 2/(1+exp(-10p)) - 1 ramp over training progress
  double lr = 1e-3;
  int batch_size = 128;
  int epochs = 10;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  int feature_dim() const;
  void validate() const;
};

struct PacOutputs {
  torch::Tensor features;  // (B, D)
  torch::Tensor gender;    // (B, gender_classes)
  torch::Tensor age;
  torch::Tensor race;
  torch::Tensor domain;    // (B, 2), computed through the reversal layer
};

class PacModelImpl : public torch::nn::Module {
 public:
  explicit PacModelImpl(const PacConfig& config);

  PacOutputs forward(const torch::Tensor& images);

  // Flattened encoder output; differentiable w.r.t. the input, so the
  // translator can backpropagate through it while the PAC stays frozen.
  torch::Tensor features(const torch::Tensor& images);

  // Per-block activations for the perceptual embedder.
  std::vector<torch::Tensor> block_features(const torch::Tensor& images);

  const PacConfig& config() const { return config_; }
  int feature_dim() const { return config_.feature_dim(); }

  // Reversal strength used by forward(); training may ramp it per step.
  void set_grl_lambda(double lambda) { config_.grl_lambda = lambda; }

  bool is_trained() const { return trained_; }
  void mark_trained(bool trained) { trained_ = trained; }

  // Disables gradients on every parameter; call after training.
  void freeze();

 private:
  void check_resolution(const torch::Tensor& images) const;

  PacConfig config_;
  bool trained_ = false;
  torch::nn::Sequential block1_{nullptr}, block2_{nullptr}, block3_{nullptr}, block4_{nullptr};
  torch::nn::Linear head_gender_{nullptr}, head_age_{nullptr}, head_race_{nullptr},
      head_domain_{nullptr};
};

TORCH_MODULE(PacModel);

// Per-batch labels with availability masks (1 = label present). The domain
// label is always present.
struct PacBatchLabels {
  torch::Tensor gender, age, race;                   // (B,) int64, arbitrary where masked out
  torch::Tensor gender_mask, age_mask, race_mask;    // (B,) bool
  torch::Tensor domain;                              // (B,) int64 in {0,1}

  static PacBatchLabels from_records(const std::vector<DatasetRecord>& records,
                                     const std::vector<std::size_t>& indices);
};

struct PacLoss {
  torch::Tensor objective;                 // backward target (heads + reversed domain term)
  double total = 0.0;                      // ce_gender + ce_age + ce_race - lambda*ce_domain
  std::map<std::string, double> per_term;  // raw CE per head
};

// Masked terms contribute zero; throws ValidationError when every term of the
// batch is masked out.
PacLoss pac_loss(const PacOutputs& outputs, const PacBatchLabels& labels, double lambda);

struct PacEpochStats {
  int epoch = 0;
  double gender_acc = 0.0, age_acc = 0.0, race_acc = 0.0, domain_acc = 0.0;
  double loss_protected = 0.0, loss_domain = 0.0;
};

struct PacTrainHistory {
  std::vector<PacEpochStats> epochs;
  void write_csv(const std::string& path) const;
};

// Trains on labeled source records plus unlabeled target records (domain
// adversarial only) and returns the best-validation checkpointed model.
PacModel train_pac(const PacConfig& config, const std::vector<DatasetRecord>& source,
                   const std::vector<DatasetRecord>& target,
                   PacTrainHistory* history = nullptr);

// Evaluation-mode features: no gradients, deterministic. Throws unless the
// model is trained or `allow_untrained` is set.
torch::Tensor extract_protected_features(PacModel& model, const torch::Tensor& images,
                                         bool allow_untrained = false);

void save_pac(const std::string& path, PacModel& model);
PacModel load_pac(const std::string& path);

}  // namespace fairtranslate
