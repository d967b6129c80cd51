#pragma once

#include <torch/torch.h>

#include <string>

namespace fairtranslate {

// Spatial latent halves produced by the generator encoder: `tr` carries the
// target-attribute information, `tu` everything else.
struct LatentPair {
  torch::Tensor tr;
  torch::Tensor tu;
};

struct GeneratorConfig {
  int resolution = 64;
  int num_attrs = 2;
  int base_channels = 32;
  int res_blocks = 4;
  double tr_fraction = 0.5;  // channel share of the target-relevant half

  int latent_channels() const { return 4 * base_channels; }
  int tr_channels() const;
  int tu_channels() const { return latent_channels() - tr_channels(); }
  int latent_size() const { return resolution / 4; }
  void validate() const;
};

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::InstanceNorm2d norm1_{nullptr}, norm2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Encoder-decoder generator. The condition vector is tiled to constant
// spatial planes and depth-concatenated with the image; the encoder output is
// split channel-wise into the two latent halves, and the decoder consumes
// their concatenation, ending in tanh so outputs stay in [-1,1].
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& config);

  LatentPair encode(const torch::Tensor& images, const torch::Tensor& attrs);
  torch::Tensor decode(const LatentPair& latents);
  torch::Tensor translate(const torch::Tensor& images, const torch::Tensor& attrs);

  const GeneratorConfig& config() const { return config_; }

 private:
  GeneratorConfig config_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(Generator);

struct DiscriminatorConfig {
  int resolution = 64;
  int num_attrs = 2;
  int base_channels = 32;
  int num_layers = 5;  // stride-2 convs, no normalization (gradient penalty)

  void validate() const;
};

struct DiscOutputs {
  torch::Tensor score;        // (B,) unbounded critic value
  torch::Tensor attr_logits;  // (B, K)
};

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const DiscriminatorConfig& config);
  DiscOutputs forward(const torch::Tensor& images);
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Linear critic_head_{nullptr}, attr_head_{nullptr};
};
TORCH_MODULE(Discriminator);

enum class TacRole { TargetRelevant, TargetUnrelated };

std::string tac_role_name(TacRole role);

// Small classifier mapping one latent half to K attribute logits: spatial
// average pooling followed by a two-layer head.
class TargetAttributeClassifierImpl : public torch::nn::Module {
 public:
  TargetAttributeClassifierImpl(TacRole role, int in_channels, int num_attrs, int hidden = 64);
  torch::Tensor forward(const torch::Tensor& latent_half);
  TacRole role() const { return role_; }
  int in_channels() const { return in_channels_; }

 private:
  TacRole role_;
  int in_channels_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(TargetAttributeClassifier);

// Validates that the latent half matches the classifier's role and channel
// count before predicting.
torch::Tensor tac_predict(TargetAttributeClassifier& tac, const LatentPair& latents);

}  // namespace fairtranslate
