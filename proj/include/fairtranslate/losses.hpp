#pragma once

#include <torch/torch.h>

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fairtranslate/networks.hpp"
#include "fairtranslate/pac.hpp"
#include "fairtranslate/rng.hpp"

#include <nlohmann/json_fwd.hpp>

namespace fairtranslate {

struct LossWeights {
  double adv = 1.0;
  double cls = 1.0;
  double rec = 10.0;
  double frl = 1.0;
  double pad = 1.0;
  double percept = 0.1;
  double gp = 10.0;

  void validate() const;  // finite and non-negative
  double weight_for(const std::string& term) const;
};

// Per-step scalar record. `terms` holds unweighted generator terms and
// `total` is the exact weighted sum computed from them; critic-side scalars
// land in `diagnostics`, which stays outside the sum.
struct LossReport {
  std::int64_t step = 0;
  std::map<std::string, double> terms;
  std::map<std::string, double> diagnostics;
  double total = 0.0;

  nlohmann::json to_json() const;
  std::string to_json_line() const;
};

// Sum over attributes of per-attribute binary cross entropy, mean over the
// batch. Target attributes are multi-label, so every "cross entropy" on them
// decomposes per bit.
torch::Tensor binary_attr_nll(const torch::Tensor& logits, const torch::Tensor& targets);

torch::Tensor l1_mean(const torch::Tensor& a, const torch::Tensor& b);

// Gram matrix of (B,C,H,W) features, normalized by C*H*W -> (B,C,C).
torch::Tensor gram_matrix(const torch::Tensor& features);

// E[(||grad_x D(x_hat)||_2 - 1)^2] at x_hat = eps*real + (1-eps)*fake with
// per-sample eps drawn from `rng`. Differentiable w.r.t. critic parameters.
// The callable form exists so analytic critics can stand in for the real one.
using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;  // images -> (B,) scores

torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, RngStream& rng);
torch::Tensor gradient_penalty(Discriminator& disc, const torch::Tensor& real,
                               const torch::Tensor& fake, RngStream& rng);

struct CriticLossParts {
  torch::Tensor total;             // wasserstein + gp_weight*penalty + real_attr_ce
  torch::Tensor wasserstein;       // E[D(fake)] - E[D(real)]
  torch::Tensor penalty;           // gradient penalty (unweighted)
  torch::Tensor real_attr_ce;      // CE of true attributes on real images
};

CriticLossParts critic_loss(Discriminator& disc, const torch::Tensor& real,
                            const torch::Tensor& real_attrs, const torch::Tensor& fake_detached,
                            double gp_weight, RngStream& rng);

struct GeneratorAdvLossParts {
  torch::Tensor total;        // adversarial + attr_ce
  torch::Tensor adversarial;  // -E[D(fake)]
  torch::Tensor attr_ce;      // CE of target attributes on fakes
};

GeneratorAdvLossParts generator_adversarial_loss(Discriminator& disc, const torch::Tensor& fake,
                                                 const torch::Tensor& target_attrs);

struct ReconstructionLossParts {
  torch::Tensor cycle;     // L1(G(x_t, a_i), x_i)
  torch::Tensor identity;  // L1(G(x_i, a_i), x_i)
  torch::Tensor cycled;    // G(x_t, a_i), reused by the perceptual style term
  torch::Tensor identity_images;
};

ReconstructionLossParts reconstruction_loss(Generator& gen, const torch::Tensor& x_i,
                                            const torch::Tensor& a_i, const torch::Tensor& x_t);

struct FairRepresentationLossParts {
  torch::Tensor tac1_nll;     // -log p_tac1(a_t | h_tr); minimized by TAC1 and the encoder
  torch::Tensor tac2_loglik;  // +log p_tac2(a_t | h_tu); ascended by TAC2, descended by encoder
};

FairRepresentationLossParts fair_representation_loss(TargetAttributeClassifier& tac1,
                                                     TargetAttributeClassifier& tac2,
                                                     const LatentPair& latents,
                                                     const torch::Tensor& target_attrs);

// Mean absolute distance between PAC features of inputs and translations.
// The PAC receives no gradient; x_t does.
torch::Tensor protected_attribute_distance_loss(PacModel& pac, const torch::Tensor& x_i,
                                                const torch::Tensor& x_t);

// Images -> list of named feature maps, for perceptual and FID-style use.
class FeatureEmbedder {
 public:
  virtual ~FeatureEmbedder() = default;
  virtual std::vector<torch::Tensor> feature_maps(const torch::Tensor& images) const = 0;
  virtual std::vector<std::size_t> content_layers() const = 0;
  virtual std::vector<std::size_t> style_layers() const = 0;
  virtual std::string id() const = 0;
};

// Desk-scale default: intermediate activations of a trained PAC encoder.
class PacPerceptualEmbedder : public FeatureEmbedder {
 public:
  explicit PacPerceptualEmbedder(PacModel pac);
  std::vector<torch::Tensor> feature_maps(const torch::Tensor& images) const override;
  std::vector<std::size_t> content_layers() const override { return {2}; }
  std::vector<std::size_t> style_layers() const override { return {0, 1}; }
  std::string id() const override { return "pac-encoder"; }

 private:
  mutable PacModel pac_;
};

struct PerceptualLossParts {
  torch::Tensor content;  // feature MSE between x_i and x_t at content layers
  torch::Tensor style;    // Gram MSE between x_i and x_rec at style layers
};

PerceptualLossParts perceptual_loss(const FeatureEmbedder& embedder, const torch::Tensor& x_i,
                                    const torch::Tensor& x_t, const torch::Tensor& x_rec);

// Exact weighted sum of the named terms; throws TrainingDivergence on
// non-finite values, naming the term.
LossReport total_generator_loss(const LossWeights& weights,
                                const std::map<std::string, double>& terms,
                                std::int64_t step = 0);

}  // namespace fairtranslate
