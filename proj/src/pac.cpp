#include "fairtranslate/pac.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fairtranslate/adam.hpp"
#include "fairtranslate/checkpoint.hpp"
#include "fairtranslate/common.hpp"

namespace F = torch::nn::functional;

namespace fairtranslate {

namespace {

class GradReverseFunction : public torch::autograd::Function<GradReverseFunction> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& x,
                               double lambda) {
    ctx->saved_data["lambda"] = lambda;
    return x.clone();
  }

  static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                               torch::autograd::tensor_list grad_outputs) {
    const double lambda = ctx->saved_data["lambda"].toDouble();
    return {grad_outputs[0] * (-lambda), torch::Tensor()};
  }
};

torch::nn::Sequential conv_block(int in_channels, int out_channels) {
  return torch::nn::Sequential(
      torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 4).stride(2).padding(1)),
      torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
}

double masked_accuracy(const torch::Tensor& logits, const torch::Tensor& labels,
                       const torch::Tensor& mask, double* count = nullptr) {
  auto idx = mask.nonzero().squeeze(1);
  if (count) *count = static_cast<double>(idx.numel());
  if (idx.numel() == 0) return 0.0;
  auto pred = logits.index_select(0, idx).argmax(1);
  auto gold = labels.index_select(0, idx);
  return pred.eq(gold).to(torch::kFloat32).mean().item<double>();
}

}  // namespace

torch::Tensor grad_reverse(const torch::Tensor& x, double lambda) {
  if (lambda < 0) throw ValidationError("lambda", "must be non-negative");
  return GradReverseFunction::apply(x, lambda);
}

int PacConfig::feature_dim() const {
  const int spatial = resolution / 16;  // four stride-2 blocks
  return 8 * base_channels * spatial * spatial;
}

void PacConfig::validate() const {
  if (resolution < 16 || resolution % 16 != 0) {
    throw ValidationError("resolution", "must be a positive multiple of 16");
  }
  if (base_channels < 1) throw ValidationError("base_channels", "must be positive");
  if (gender_classes < 2 || age_classes < 2 || race_classes < 2) {
    throw ValidationError("cardinalities", "every head needs at least two classes");
  }
  if (grl_lambda < 0) throw ValidationError("grl_lambda", "must be non-negative");
  if (lr <= 0) throw ValidationError("lr", "must be positive");
  if (batch_size < 2) throw ValidationError("batch_size", "must be at least 2");
  if (epochs < 1) throw ValidationError("epochs", "must be positive");
  if (val_fraction <= 0 || val_fraction >= 1) {
    throw ValidationError("val_fraction", "must lie in (0,1)");
  }
}

PacModelImpl::PacModelImpl(const PacConfig& config) : config_(config) {
  config_.validate();
  const int c = config_.base_channels;
  block1_ = register_module("block1", conv_block(3, c));
  block2_ = register_module("block2", conv_block(c, 2 * c));
  block3_ = register_module("block3", conv_block(2 * c, 4 * c));
  block4_ = register_module("block4", conv_block(4 * c, 8 * c));
  const int d = config_.feature_dim();
  head_gender_ = register_module("head_gender", torch::nn::Linear(d, config_.gender_classes));
  head_age_ = register_module("head_age", torch::nn::Linear(d, config_.age_classes));
  head_race_ = register_module("head_race", torch::nn::Linear(d, config_.race_classes));
  head_domain_ = register_module("head_domain", torch::nn::Linear(d, 2));
}

void PacModelImpl::check_resolution(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != config_.resolution ||
      images.size(3) != config_.resolution) {
    throw ValidationError("images", "expected (B,3," + std::to_string(config_.resolution) + "," +
                                        std::to_string(config_.resolution) + ")");
  }
}

PacOutputs PacModelImpl::forward(const torch::Tensor& images) {
  auto h = features(images);
  PacOutputs out;
  out.features = h;
  out.gender = head_gender_->forward(h);
  out.age = head_age_->forward(h);
  out.race = head_race_->forward(h);
  out.domain = head_domain_->forward(grad_reverse(h, config_.grl_lambda));
  return out;
}

torch::Tensor PacModelImpl::features(const torch::Tensor& images) {
  check_resolution(images);
  auto x = block1_->forward(images);
  x = block2_->forward(x);
  x = block3_->forward(x);
  x = block4_->forward(x);
  return x.flatten(1);
}

std::vector<torch::Tensor> PacModelImpl::block_features(const torch::Tensor& images) {
  check_resolution(images);
  auto x1 = block1_->forward(images);
  auto x2 = block2_->forward(x1);
  auto x3 = block3_->forward(x2);
  auto x4 = block4_->forward(x3);
  return {x1, x2, x3, x4};
}

void PacModelImpl::freeze() {
  for (auto& p : parameters()) p.set_requires_grad(false);
  eval();
}

PacBatchLabels PacBatchLabels::from_records(const std::vector<DatasetRecord>& records,
                                            const std::vector<std::size_t>& indices) {
  const auto b = static_cast<std::int64_t>(indices.size());
  PacBatchLabels labels;
  labels.gender = torch::zeros({b}, torch::kInt64);
  labels.age = torch::zeros({b}, torch::kInt64);
  labels.race = torch::zeros({b}, torch::kInt64);
  labels.gender_mask = torch::zeros({b}, torch::kBool);
  labels.age_mask = torch::zeros({b}, torch::kBool);
  labels.race_mask = torch::zeros({b}, torch::kBool);
  labels.domain = torch::zeros({b}, torch::kInt64);
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& rec = records.at(indices[i]);
    if (rec.protected_labels.gender) {
      labels.gender[i] = *rec.protected_labels.gender;
      labels.gender_mask[i] = true;
    }
    if (rec.protected_labels.age) {
      labels.age[i] = *rec.protected_labels.age;
      labels.age_mask[i] = true;
    }
    if (rec.protected_labels.race) {
      labels.race[i] = *rec.protected_labels.race;
      labels.race_mask[i] = true;
    }
    labels.domain[i] = rec.domain_label;
  }
  return labels;
}

PacLoss pac_loss(const PacOutputs& outputs, const PacBatchLabels& labels, double lambda) {
  auto masked_ce = [](const torch::Tensor& logits, const torch::Tensor& gold,
                      const torch::Tensor& mask) -> torch::Tensor {
    auto idx = mask.nonzero().squeeze(1);
    if (idx.numel() == 0) return torch::Tensor();
    return F::cross_entropy(logits.index_select(0, idx), gold.index_select(0, idx));
  };

  auto ce_gender = masked_ce(outputs.gender, labels.gender, labels.gender_mask);
  auto ce_age = masked_ce(outputs.age, labels.age, labels.age_mask);
  auto ce_race = masked_ce(outputs.race, labels.race, labels.race_mask);
  torch::Tensor ce_domain;
  if (labels.domain.defined() && labels.domain.numel() > 0) {
    ce_domain = F::cross_entropy(outputs.domain, labels.domain);
  }

  if (!ce_gender.defined() && !ce_age.defined() && !ce_race.defined() && !ce_domain.defined()) {
    throw ValidationError("labels", "every term of the batch is masked out");
  }

  PacLoss loss;
  auto add_term = [&loss](const char* name, const torch::Tensor& t) -> double {
    const double value = t.defined() ? t.item<double>() : 0.0;
    loss.per_term[name] = value;
    if (t.defined()) {
      loss.objective = loss.objective.defined() ? loss.objective + t : t;
    }
    return value;
  };
  const double g = add_term("gender", ce_gender);
  const double a = add_term("age", ce_age);
  const double r = add_term("race", ce_race);
  // The domain logits already passed through the reversal layer, so adding the
  // plain CE to the objective realizes the minus-lambda coupling in backward.
  const double d = add_term("domain", ce_domain);
  loss.total = g + a + r - lambda * d;
  return loss;
}

void PacTrainHistory::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path);
  os << "epoch,gender_acc,age_acc,race_acc,domain_acc,loss_protected,loss_domain\n";
  for (const auto& e : epochs) {
    os << e.epoch << "," << e.gender_acc << "," << e.age_acc << "," << e.race_acc << ","
       << e.domain_acc << "," << e.loss_protected << "," << e.loss_domain << "\n";
  }
}

PacModel train_pac(const PacConfig& config, const std::vector<DatasetRecord>& source,
                   const std::vector<DatasetRecord>& target, PacTrainHistory* history) {
  config.validate();
  const bool any_labels =
      std::any_of(source.begin(), source.end(),
                  [](const DatasetRecord& r) { return r.protected_labels.any(); });
  if (source.empty() || !any_labels) {
    throw ValidationError("source_data", "needs records with protected labels");
  }

  torch::manual_seed(config.seed);
  PacModel model(config);
  model->train();

  RngStream rng(RngStream::mix(config.seed, 0x9AC));

  // Deterministic train/val split of the source (and a held-out target slice
  // for the domain-accuracy readout).
  std::vector<std::size_t> src_idx(source.size());
  std::iota(src_idx.begin(), src_idx.end(), 0);
  for (std::size_t i = src_idx.size(); i > 1; --i) {
    std::swap(src_idx[i - 1], src_idx[rng.uniform_int(static_cast<int>(i))]);
  }
  const auto val_count = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                      src_idx.size() * config.val_fraction));
  std::vector<std::size_t> val_idx(src_idx.begin(), src_idx.begin() + val_count);
  std::vector<std::size_t> train_idx(src_idx.begin() + val_count, src_idx.end());
  if (train_idx.empty()) throw ValidationError("source_data", "not enough records to train");

  std::vector<std::size_t> tgt_idx(target.size());
  std::iota(tgt_idx.begin(), tgt_idx.end(), 0);

  Adam optimizer(model->parameters(), {config.lr, 0.9, 0.999, 1e-8});

  const std::size_t batches_per_epoch =
      (train_idx.size() + config.batch_size - 1) / config.batch_size;
  const double total_steps = static_cast<double>(batches_per_epoch * config.epochs);

  double best_score = -1.0;
  Checkpoint best;

  std::size_t tgt_cursor = 0;
  std::size_t global_step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = train_idx.size(); i > 1; --i) {
      std::swap(train_idx[i - 1], train_idx[rng.uniform_int(static_cast<int>(i))]);
    }

    double epoch_protected = 0.0, epoch_domain = 0.0;
    std::size_t steps = 0;

    for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size) {
      const auto end = std::min(train_idx.size(), start + config.batch_size);
      std::vector<std::size_t> batch(train_idx.begin() + start, train_idx.begin() + end);

      // Pair every source slice with an equally sized target slice so the
      // domain head sees both classes.
      std::vector<DatasetRecord const*> recs;
      recs.reserve(batch.size() * 2);
      for (auto idx : batch) recs.push_back(&source[idx]);
      if (!tgt_idx.empty()) {
        for (std::size_t j = 0; j < batch.size(); ++j) {
          recs.push_back(&target[tgt_idx[tgt_cursor]]);
          tgt_cursor = (tgt_cursor + 1) % tgt_idx.size();
        }
      }

      std::vector<torch::Tensor> imgs;
      imgs.reserve(recs.size());
      for (auto* r : recs) imgs.push_back(r->image);
      auto images = torch::stack(imgs);

      PacBatchLabels labels;
      const auto b = static_cast<std::int64_t>(recs.size());
      labels.gender = torch::zeros({b}, torch::kInt64);
      labels.age = torch::zeros({b}, torch::kInt64);
      labels.race = torch::zeros({b}, torch::kInt64);
      labels.gender_mask = torch::zeros({b}, torch::kBool);
      labels.age_mask = torch::zeros({b}, torch::kBool);
      labels.race_mask = torch::zeros({b}, torch::kBool);
      labels.domain = torch::zeros({b}, torch::kInt64);
      for (std::int64_t i = 0; i < b; ++i) {
        const auto& pl = recs[i]->protected_labels;
        if (pl.gender) { labels.gender[i] = *pl.gender; labels.gender_mask[i] = true; }
        if (pl.age) { labels.age[i] = *pl.age; labels.age_mask[i] = true; }
        if (pl.race) { labels.race[i] = *pl.race; labels.race_mask[i] = true; }
        labels.domain[i] = recs[i]->domain_label;
      }

      double lambda = config.grl_lambda;
      if (config.lambda_ramp) {
        const double p = static_cast<double>(global_step) / std::max(1.0, total_steps);
        lambda *= 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0;
      }
      // The reversal scale lives inside the forward pass, so sync it.
      model->set_grl_lambda(lambda);

      optimizer.zero_grad();
      auto outputs = model->forward(images);
      auto loss = pac_loss(outputs, labels, lambda);
      loss.objective.backward();
      optimizer.step();

      epoch_protected += loss.per_term["gender"] + loss.per_term["age"] + loss.per_term["race"];
      epoch_domain += loss.per_term["domain"];
      ++steps;
      ++global_step;
    }

    // Validation pass.
    torch::NoGradGuard no_grad;
    model->eval();
    std::vector<DatasetRecord const*> val_recs;
    for (auto idx : val_idx) val_recs.push_back(&source[idx]);
    const std::size_t tgt_val = std::min(tgt_idx.size(), val_idx.size());
    for (std::size_t j = 0; j < tgt_val; ++j) val_recs.push_back(&target[j]);

    PacEpochStats stats;
    stats.epoch = epoch;
    stats.loss_protected = epoch_protected / std::max<std::size_t>(1, steps);
    stats.loss_domain = epoch_domain / std::max<std::size_t>(1, steps);

    if (!val_recs.empty()) {
      std::vector<torch::Tensor> imgs;
      for (auto* r : val_recs) imgs.push_back(r->image);
      auto images = torch::stack(imgs);
      auto outputs = model->forward(images);

      const auto b = static_cast<std::int64_t>(val_recs.size());
      auto gender = torch::zeros({b}, torch::kInt64);
      auto age = torch::zeros({b}, torch::kInt64);
      auto race = torch::zeros({b}, torch::kInt64);
      auto gm = torch::zeros({b}, torch::kBool);
      auto am = torch::zeros({b}, torch::kBool);
      auto rm = torch::zeros({b}, torch::kBool);
      auto dom = torch::zeros({b}, torch::kInt64);
      for (std::int64_t i = 0; i < b; ++i) {
        const auto& pl = val_recs[i]->protected_labels;
        if (pl.gender) { gender[i] = *pl.gender; gm[i] = true; }
        if (pl.age) { age[i] = *pl.age; am[i] = true; }
        if (pl.race) { race[i] = *pl.race; rm[i] = true; }
        dom[i] = val_recs[i]->domain_label;
      }
      stats.gender_acc = masked_accuracy(outputs.gender, gender, gm);
      stats.age_acc = masked_accuracy(outputs.age, age, am);
      stats.race_acc = masked_accuracy(outputs.race, race, rm);
      stats.domain_acc =
          outputs.domain.argmax(1).eq(dom).to(torch::kFloat32).mean().item<double>();

      double score = 0.0;
      double heads = 0.0;
      if (gm.any().item<bool>()) { score += stats.gender_acc; heads += 1; }
      if (am.any().item<bool>()) { score += stats.age_acc; heads += 1; }
      if (rm.any().item<bool>()) { score += stats.race_acc; heads += 1; }
      score = heads > 0 ? score / heads : 0.0;
      // Ties go to the later epoch: the protected heads often saturate early
      // while the domain branch is still settling.
      if (score >= best_score) {
        best_score = score;
        best = Checkpoint{};
        pack_module(best, "pac.", *model);
      }
    }
    model->train();

    if (history) history->epochs.push_back(stats);
  }

  if (!best.tensors.empty()) {
    unpack_module(best, "pac.", *model);
  }
  model->mark_trained(true);
  model->eval();
  return model;
}

torch::Tensor extract_protected_features(PacModel& model, const torch::Tensor& images,
                                         bool allow_untrained) {
  if (!model->is_trained() && !allow_untrained) {
    throw ValidationError("model", "PAC is untrained; pass allow_untrained to override");
  }
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  auto h = model->features(images);
  if (was_training) model->train();
  return h;
}

void save_pac(const std::string& path, PacModel& model) {
  Checkpoint ckpt;
  ckpt.role = "pac";
  const auto& cfg = model->config();
  ckpt.meta["resolution"] = std::to_string(cfg.resolution);
  ckpt.meta["base_channels"] = std::to_string(cfg.base_channels);
  ckpt.meta["gender_classes"] = std::to_string(cfg.gender_classes);
  ckpt.meta["age_classes"] = std::to_string(cfg.age_classes);
  ckpt.meta["race_classes"] = std::to_string(cfg.race_classes);
  ckpt.meta["feature_dim"] = std::to_string(cfg.feature_dim());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", cfg.grl_lambda);
  ckpt.meta["grl_lambda"] = buf;
  ckpt.meta["trained"] = model->is_trained() ? "1" : "0";
  pack_module(ckpt, "pac.", *model);
  save_checkpoint(path, ckpt);
}

PacModel load_pac(const std::string& path) {
  auto ckpt = load_checkpoint(path, "pac");
  PacConfig cfg;
  cfg.resolution = static_cast<int>(ckpt.meta_int("resolution"));
  cfg.base_channels = static_cast<int>(ckpt.meta_int("base_channels"));
  cfg.gender_classes = static_cast<int>(ckpt.meta_int("gender_classes"));
  cfg.age_classes = static_cast<int>(ckpt.meta_int("age_classes"));
  cfg.race_classes = static_cast<int>(ckpt.meta_int("race_classes"));
  cfg.grl_lambda = ckpt.meta_double("grl_lambda");
  PacModel model(cfg);
  unpack_module(ckpt, "pac.", *model);
  model->mark_trained(ckpt.meta_int("trained") != 0);
  model->eval();
  return model;
}

}  // namespace fairtranslate
