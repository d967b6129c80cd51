#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fairtranslate/dataset.hpp"
#include "fairtranslate/metrics.hpp"

namespace fairtranslate {

// Small trainable attribute classifier: the desk-scale stand-in for the large
// pretrained backbone behind the same predict-bits interface.
class SmallClassifierImpl : public torch::nn::Module {
 public:
  SmallClassifierImpl(int resolution, int num_attrs, int base_channels = 16);
  torch::Tensor forward(const torch::Tensor& images);  // (B, num_attrs) logits
  int resolution() const { return resolution_; }

 private:
  int resolution_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(SmallClassifier);

class TrainedAttributeClassifier : public AttributeClassifier {
 public:
  explicit TrainedAttributeClassifier(SmallClassifier model) : model_(std::move(model)) {}
  torch::Tensor predict(const torch::Tensor& images) const override;

 private:
  mutable SmallClassifier model_;
};

struct FairClassifyConfig {
  int resolution = 64;
  int base_channels = 16;
  int epochs = 6;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int attr_index = 0;  // the classification target attribute

  void validate() const;
};

struct FairnessReport {
  double accuracy = 0.0;  // percent, on the test set
  ConfusionRates group0, group1;
  double eq_opp = 0.0;
  double odds = 0.0;
  std::size_t train_size = 0, test_size = 0;
  int attr_index = 0;

  nlohmann::json to_json() const;
};

// Trains the small classifier on `train` (possibly augmented) and evaluates
// TPR/FPR per gender group plus the two fairness scores on `test`. Test
// records must carry gender labels.
FairnessReport fair_classify(const FairClassifyConfig& config,
                             const std::vector<DatasetRecord>& train,
                             const std::vector<DatasetRecord>& test);

// Trains the small classifier on every attribute at once; used as the
// target-attribute-accuracy evaluator when a rule-based decoder is not
// applicable.
SmallClassifier train_attribute_classifier(const FairClassifyConfig& config,
                                           const std::vector<DatasetRecord>& train,
                                           int num_attrs);

}  // namespace fairtranslate
