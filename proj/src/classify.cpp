#include "fairtranslate/classify.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fairtranslate/adam.hpp"
#include "fairtranslate/common.hpp"

namespace F = torch::nn::functional;

namespace fairtranslate {

SmallClassifierImpl::SmallClassifierImpl(int resolution, int num_attrs, int base_channels)
    : resolution_(resolution) {
  if (resolution < 8 || resolution % 8 != 0) {
    throw ValidationError("resolution", "must be a positive multiple of 8");
  }
  torch::nn::Sequential trunk;
  int in = 3;
  int out = base_channels;
  for (int i = 0; i < 3; ++i) {
    trunk->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
    trunk->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    in = out;
    out *= 2;
  }
  trunk_ = register_module("trunk", trunk);
  head_ = register_module("head", torch::nn::Linear(in, num_attrs));
}

torch::Tensor SmallClassifierImpl::forward(const torch::Tensor& images) {
  if (images.size(2) != resolution_ || images.size(3) != resolution_) {
    throw ValidationError("images", "resolution mismatch");
  }
  auto h = trunk_->forward(images).mean({2, 3});
  return head_->forward(h);
}

torch::Tensor TrainedAttributeClassifier::predict(const torch::Tensor& images) const {
  torch::NoGradGuard no_grad;
  model_->eval();
  return model_->forward(images).sigmoid().gt(0.5).to(torch::kFloat32);
}

void FairClassifyConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs", "must be positive");
  if (batch_size < 2) throw ValidationError("batch_size", "must be at least 2");
  if (lr <= 0) throw ValidationError("lr", "must be positive");
  if (attr_index < 0) throw ValidationError("attr_index", "must be non-negative");
}

nlohmann::json FairnessReport::to_json() const {
  return nlohmann::json{
      {"accuracy", accuracy},
      {"group0", {{"tpr", group0.tpr}, {"fpr", group0.fpr}}},
      {"group1", {{"tpr", group1.tpr}, {"fpr", group1.fpr}}},
      {"equality_of_opportunity", eq_opp},
      {"equalized_odds", odds},
      {"train_size", train_size},
      {"test_size", test_size},
      {"attr_index", attr_index},
  };
}

namespace {

SmallClassifier train_small(const FairClassifyConfig& config,
                            const std::vector<DatasetRecord>& train,
                            const std::vector<std::int64_t>& attr_columns) {
  config.validate();
  if (train.empty()) throw ValidationError("train", "no records");

  torch::manual_seed(config.seed);
  SmallClassifier model(config.resolution, static_cast<int>(attr_columns.size()),
                        config.base_channels);
  model->train();
  Adam optimizer(model->parameters(), {config.lr, 0.9, 0.999, 1e-8});
  RngStream rng(RngStream::mix(config.seed, 0xC1A55));

  std::vector<std::size_t> indices(train.size());
  std::iota(indices.begin(), indices.end(), 0);
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = indices.size(); i > 1; --i) {
      std::swap(indices[i - 1], indices[rng.uniform_int(static_cast<int>(i))]);
    }
    for (std::size_t start = 0; start < indices.size(); start += bs) {
      const auto end = std::min(indices.size(), start + bs);
      std::vector<std::size_t> batch(indices.begin() + start, indices.begin() + end);
      auto images = stack_images(train, batch);
      auto all_attrs = stack_attrs(train, batch);
      auto cols = torch::from_blob(const_cast<std::int64_t*>(attr_columns.data()),
                                   {static_cast<std::int64_t>(attr_columns.size())},
                                   torch::kInt64)
                      .clone();
      auto targets = all_attrs.index_select(1, cols);

      optimizer.zero_grad();
      auto logits = model->forward(images);
      auto loss = F::binary_cross_entropy_with_logits(logits, targets);
      loss.backward();
      optimizer.step();
    }
  }
  model->eval();
  return model;
}

}  // namespace

FairnessReport fair_classify(const FairClassifyConfig& config,
                             const std::vector<DatasetRecord>& train,
                             const std::vector<DatasetRecord>& test) {
  if (test.empty()) throw ValidationError("test", "no records");
  if (config.attr_index >= train.front().target_attrs.size(0)) {
    throw ValidationError("attr_index", "out of range for this dataset");
  }

  auto model = train_small(config, train, {config.attr_index});

  GroupedPredictions preds;
  std::int64_t correct = 0, counted = 0;
  torch::NoGradGuard no_grad;
  for (const auto& rec : test) {
    if (!rec.protected_labels.gender) continue;
    auto logit = model->forward(rec.image.unsqueeze(0))[0][0];
    const int predicted = logit.item<float>() > 0.0f ? 1 : 0;
    const int label = rec.target_attrs[config.attr_index].item<float>() > 0.5f ? 1 : 0;
    preds.predicted.push_back(predicted);
    preds.label.push_back(label);
    preds.group.push_back(*rec.protected_labels.gender % 2);
    correct += predicted == label;
    ++counted;
  }
  if (counted == 0) {
    throw ValidationError("test", "no records carry gender labels for grouping");
  }

  FairnessReport report;
  report.accuracy = 100.0 * static_cast<double>(correct) / counted;
  report.group0 = confusion_rates(preds, 0);
  report.group1 = confusion_rates(preds, 1);
  report.eq_opp = equality_of_opportunity(preds);
  report.odds = equalized_odds(preds);
  report.train_size = train.size();
  report.test_size = static_cast<std::size_t>(counted);
  report.attr_index = config.attr_index;
  return report;
}

SmallClassifier train_attribute_classifier(const FairClassifyConfig& config,
                                           const std::vector<DatasetRecord>& train,
                                           int num_attrs) {
  std::vector<std::int64_t> cols(num_attrs);
  std::iota(cols.begin(), cols.end(), 0);
  return train_small(config, train, cols);
}

}  // namespace fairtranslate
