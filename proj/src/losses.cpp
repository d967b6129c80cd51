#include "fairtranslate/losses.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "fairtranslate/common.hpp"

namespace F = torch::nn::functional;

namespace fairtranslate {

namespace {

void require_finite(const torch::Tensor& t, const char* term) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw TrainingDivergence(std::string("non-finite value in term '") + term + "'");
  }
}

// Temporarily strips requires_grad from a module's parameters so a forward
// pass can feed gradients to its inputs without touching the module itself.
class ParamGradGuard {
 public:
  explicit ParamGradGuard(torch::nn::Module& module) {
    for (auto& p : module.parameters()) {
      saved_.emplace_back(p, p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~ParamGradGuard() {
    for (auto& [p, flag] : saved_) p.set_requires_grad(flag);
  }

 private:
  std::vector<std::pair<torch::Tensor, bool>> saved_;
};

}  // namespace

void LossWeights::validate() const {
  const double values[] = {adv, cls, rec, frl, pad, percept, gp};
  const char* names[] = {"adv", "cls", "rec", "frl", "pad", "percept", "gp"};
  for (int i = 0; i < 7; ++i) {
    if (!std::isfinite(values[i]) || values[i] < 0) {
      throw ValidationError(std::string("weights.") + names[i], "must be finite and >= 0");
    }
  }
}

double LossWeights::weight_for(const std::string& term) const {
  if (term == "adv") return adv;
  if (term == "cls") return cls;
  if (term == "cycle" || term == "identity") return rec;
  if (term == "frl_tac1" || term == "frl_tac2") return frl;
  if (term == "padl") return pad;
  if (term == "content" || term == "style") return percept;
  if (term == "gp") return gp;
  throw ValidationError("term", "no weight mapped for '" + term + "'");
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j;
  j["step"] = step;
  j["terms"] = terms;
  j["total"] = total;
  if (!diagnostics.empty()) j["critic"] = diagnostics;
  return j;
}

std::string LossReport::to_json_line() const { return to_json().dump(); }

torch::Tensor binary_attr_nll(const torch::Tensor& logits, const torch::Tensor& targets) {
  if (!logits.sizes().equals(targets.sizes())) {
    throw ValidationError("targets", "shape must match logits");
  }
  auto per_bit = F::binary_cross_entropy_with_logits(
      logits, targets.to(logits.dtype()),
      F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
  return per_bit.sum(1).mean();
}

torch::Tensor l1_mean(const torch::Tensor& a, const torch::Tensor& b) {
  if (!a.sizes().equals(b.sizes())) throw ValidationError("inputs", "shape mismatch");
  return (a - b).abs().mean();
}

torch::Tensor gram_matrix(const torch::Tensor& features) {
  if (features.dim() != 4) throw ValidationError("features", "expected (B,C,H,W)");
  const auto b = features.size(0);
  const auto c = features.size(1);
  const auto hw = features.size(2) * features.size(3);
  auto flat = features.reshape({b, c, hw});
  return flat.matmul(flat.transpose(1, 2)) / static_cast<double>(c * hw);
}

torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, RngStream& rng) {
  if (!real.sizes().equals(fake.sizes())) {
    throw ValidationError("fake", "batch shapes must match");
  }
  const auto b = real.size(0);
  std::vector<float> eps_values(static_cast<std::size_t>(b));
  for (auto& e : eps_values) e = static_cast<float>(rng.uniform());
  auto eps = torch::from_blob(eps_values.data(), {b, 1, 1, 1}, torch::kFloat32)
                 .clone()
                 .to(real.options());

  auto mixed = (eps * real.detach() + (1.0 - eps) * fake.detach()).requires_grad_(true);
  auto score = critic(mixed);
  auto grads = torch::autograd::grad({score.sum()}, {mixed}, /*grad_outputs=*/{},
                                     /*retain_graph=*/true, /*create_graph=*/true);
  if (grads.empty() || !grads[0].defined()) {
    throw TrainingDivergence("gradient penalty: no gradient reached the interpolates");
  }
  auto norms = grads[0].reshape({b, -1}).norm(2, 1);
  return (norms - 1.0).pow(2).mean();
}

torch::Tensor gradient_penalty(Discriminator& disc, const torch::Tensor& real,
                               const torch::Tensor& fake, RngStream& rng) {
  return gradient_penalty([&disc](const torch::Tensor& x) { return disc->forward(x).score; },
                          real, fake, rng);
}

CriticLossParts critic_loss(Discriminator& disc, const torch::Tensor& real,
                            const torch::Tensor& real_attrs, const torch::Tensor& fake_detached,
                            double gp_weight, RngStream& rng) {
  auto real_out = disc->forward(real);
  auto fake_score = disc->forward(fake_detached).score;

  CriticLossParts parts;
  parts.wasserstein = fake_score.mean() - real_out.score.mean();
  require_finite(parts.wasserstein, "wasserstein");
  parts.penalty = gradient_penalty(disc, real, fake_detached, rng);
  require_finite(parts.penalty, "gradient_penalty");
  parts.real_attr_ce = binary_attr_nll(real_out.attr_logits, real_attrs);
  require_finite(parts.real_attr_ce, "real_attr_ce");
  parts.total = parts.wasserstein + gp_weight * parts.penalty + parts.real_attr_ce;
  return parts;
}

GeneratorAdvLossParts generator_adversarial_loss(Discriminator& disc, const torch::Tensor& fake,
                                                 const torch::Tensor& target_attrs) {
  auto out = disc->forward(fake);
  GeneratorAdvLossParts parts;
  parts.adversarial = -out.score.mean();
  parts.attr_ce = binary_attr_nll(out.attr_logits, target_attrs);
  parts.total = parts.adversarial + parts.attr_ce;
  return parts;
}

ReconstructionLossParts reconstruction_loss(Generator& gen, const torch::Tensor& x_i,
                                            const torch::Tensor& a_i, const torch::Tensor& x_t) {
  ReconstructionLossParts parts;
  parts.cycled = gen->translate(x_t, a_i);
  parts.identity_images = gen->translate(x_i, a_i);
  parts.cycle = l1_mean(parts.cycled, x_i);
  parts.identity = l1_mean(parts.identity_images, x_i);
  return parts;
}

FairRepresentationLossParts fair_representation_loss(TargetAttributeClassifier& tac1,
                                                     TargetAttributeClassifier& tac2,
                                                     const LatentPair& latents,
                                                     const torch::Tensor& target_attrs) {
  if (tac1->role() != TacRole::TargetRelevant || tac2->role() != TacRole::TargetUnrelated) {
    throw ValidationError("tac", "classifier roles do not match latent halves");
  }
  FairRepresentationLossParts parts;
  parts.tac1_nll = binary_attr_nll(tac_predict(tac1, latents), target_attrs);
  parts.tac2_loglik = -binary_attr_nll(tac_predict(tac2, latents), target_attrs);
  return parts;
}

torch::Tensor protected_attribute_distance_loss(PacModel& pac, const torch::Tensor& x_i,
                                                const torch::Tensor& x_t) {
  if (x_i.size(2) != pac->config().resolution) {
    throw ValidationError("images", "resolution does not match the PAC");
  }
  torch::Tensor phi_i;
  {
    torch::NoGradGuard no_grad;
    phi_i = pac->features(x_i);
  }
  // Forward the translated batch with gradients flowing to x_t only.
  ParamGradGuard frozen(*pac);
  auto phi_g = pac->features(x_t);
  return l1_mean(phi_i.detach(), phi_g);
}

PacPerceptualEmbedder::PacPerceptualEmbedder(PacModel pac) : pac_(std::move(pac)) {}

std::vector<torch::Tensor> PacPerceptualEmbedder::feature_maps(const torch::Tensor& images) const {
  ParamGradGuard frozen(*pac_);
  return pac_->block_features(images);
}

PerceptualLossParts perceptual_loss(const FeatureEmbedder& embedder, const torch::Tensor& x_i,
                                    const torch::Tensor& x_t, const torch::Tensor& x_rec) {
  auto feats_i = embedder.feature_maps(x_i);
  auto feats_t = embedder.feature_maps(x_t);
  auto feats_rec = embedder.feature_maps(x_rec);
  const auto layers = feats_i.size();
  if (layers < 2) throw ValidationError("embedder", "needs at least two feature layers");

  PerceptualLossParts parts;
  parts.content = torch::zeros({}, x_i.options());
  parts.style = torch::zeros({}, x_i.options());
  for (auto l : embedder.content_layers()) {
    if (l >= layers) throw ValidationError("embedder", "content layer index out of range");
    parts.content = parts.content + F::mse_loss(feats_t[l], feats_i[l].detach());
  }
  for (auto l : embedder.style_layers()) {
    if (l >= layers) throw ValidationError("embedder", "style layer index out of range");
    parts.style = parts.style +
                  F::mse_loss(gram_matrix(feats_rec[l]), gram_matrix(feats_i[l]).detach());
  }
  return parts;
}

LossReport total_generator_loss(const LossWeights& weights,
                                const std::map<std::string, double>& terms, std::int64_t step) {
  weights.validate();
  LossReport report;
  report.step = step;
  report.terms = terms;
  double total = 0.0;
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw TrainingDivergence("non-finite value in term '" + name + "'");
    }
    total += weights.weight_for(name) * value;
  }
  report.total = total;
  return report;
}

}  // namespace fairtranslate
