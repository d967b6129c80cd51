#include "fairtranslate/networks.hpp"

#include <cmath>

#include "fairtranslate/common.hpp"

namespace fairtranslate {

namespace {

torch::nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

torch::nn::InstanceNorm2d instance_norm(int channels) {
  return torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(channels).affine(true));
}

}  // namespace

int GeneratorConfig::tr_channels() const {
  return static_cast<int>(std::lround(latent_channels() * tr_fraction));
}

void GeneratorConfig::validate() const {
  if (resolution < 8 || resolution % 4 != 0) {
    throw ValidationError("resolution", "must be a multiple of 4 and at least 8");
  }
  if (num_attrs < 1) throw ValidationError("num_attrs", "must be positive");
  if (base_channels < 1) throw ValidationError("base_channels", "must be positive");
  if (res_blocks < 0) throw ValidationError("res_blocks", "must be non-negative");
  if (tr_fraction <= 0.0 || tr_fraction >= 1.0) {
    throw ValidationError("tr_fraction", "must lie strictly inside (0,1)");
  }
  if (tr_channels() < 1 || tu_channels() < 1) {
    throw ValidationError("tr_fraction", "either latent half would be empty");
  }
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  conv1_ = register_module("conv1", conv(channels, channels, 3, 1, 1));
  norm1_ = register_module("norm1", instance_norm(channels));
  conv2_ = register_module("conv2", conv(channels, channels, 3, 1, 1));
  norm2_ = register_module("norm2", instance_norm(channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(norm1_->forward(conv1_->forward(x)));
  y = norm2_->forward(conv2_->forward(y));
  return x + y;
}

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  const int c = config_.base_channels;

  torch::nn::Sequential enc;
  enc->push_back(conv(3 + config_.num_attrs, c, 7, 1, 3));
  enc->push_back(instance_norm(c));
  enc->push_back(torch::nn::ReLU());
  enc->push_back(conv(c, 2 * c, 4, 2, 1));
  enc->push_back(instance_norm(2 * c));
  enc->push_back(torch::nn::ReLU());
  enc->push_back(conv(2 * c, 4 * c, 4, 2, 1));
  enc->push_back(instance_norm(4 * c));
  enc->push_back(torch::nn::ReLU());
  for (int i = 0; i < config_.res_blocks; ++i) enc->push_back(ResidualBlock(4 * c));
  encoder_ = register_module("encoder", enc);

  torch::nn::Sequential dec;
  dec->push_back(torch::nn::ConvTranspose2d(
      torch::nn::ConvTranspose2dOptions(4 * c, 2 * c, 4).stride(2).padding(1)));
  dec->push_back(instance_norm(2 * c));
  dec->push_back(torch::nn::ReLU());
  dec->push_back(torch::nn::ConvTranspose2d(
      torch::nn::ConvTranspose2dOptions(2 * c, c, 4).stride(2).padding(1)));
  dec->push_back(instance_norm(c));
  dec->push_back(torch::nn::ReLU());
  dec->push_back(conv(c, 3, 7, 1, 3));
  dec->push_back(torch::nn::Tanh());
  decoder_ = register_module("decoder", dec);
}

LatentPair GeneratorImpl::encode(const torch::Tensor& images, const torch::Tensor& attrs) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != config_.resolution ||
      images.size(3) != config_.resolution) {
    throw ValidationError("images", "expected (B,3," + std::to_string(config_.resolution) + "," +
                                        std::to_string(config_.resolution) + ")");
  }
  if (attrs.dim() != 2 || attrs.size(0) != images.size(0) ||
      attrs.size(1) != config_.num_attrs) {
    throw ValidationError("attrs", "expected (B," + std::to_string(config_.num_attrs) + ")");
  }
  auto planes = attrs.to(images.dtype())
                    .view({attrs.size(0), attrs.size(1), 1, 1})
                    .expand({-1, -1, images.size(2), images.size(3)});
  auto h = encoder_->forward(torch::cat({images, planes}, 1));
  const int tr = config_.tr_channels();
  return {h.narrow(1, 0, tr), h.narrow(1, tr, config_.tu_channels())};
}

torch::Tensor GeneratorImpl::decode(const LatentPair& latents) {
  if (!latents.tr.defined() || !latents.tu.defined()) {
    throw ValidationError("latents", "both halves must be present");
  }
  if (latents.tr.size(1) != config_.tr_channels() ||
      latents.tu.size(1) != config_.tu_channels()) {
    throw ValidationError("latents", "channel counts do not match the split spec");
  }
  if (latents.tr.size(2) != latents.tu.size(2) || latents.tr.size(3) != latents.tu.size(3)) {
    throw ValidationError("latents", "halves must share spatial dimensions");
  }
  return decoder_->forward(torch::cat({latents.tr, latents.tu}, 1));
}

torch::Tensor GeneratorImpl::translate(const torch::Tensor& images, const torch::Tensor& attrs) {
  return decode(encode(images, attrs));
}

void DiscriminatorConfig::validate() const {
  if (num_layers < 1) throw ValidationError("num_layers", "must be positive");
  if (resolution % (1 << num_layers) != 0) {
    throw ValidationError("resolution", "must be divisible by 2^num_layers = " +
                                            std::to_string(1 << num_layers));
  }
  if (num_attrs < 1) throw ValidationError("num_attrs", "must be positive");
  if (base_channels < 1) throw ValidationError("base_channels", "must be positive");
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& config) : config_(config) {
  config_.validate();
  torch::nn::Sequential trunk;
  int in = 3;
  int out = config_.base_channels;
  for (int i = 0; i < config_.num_layers; ++i) {
    trunk->push_back(conv(in, out, 4, 2, 1));
    trunk->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    in = out;
    out = out * 2;
  }
  trunk_ = register_module("trunk", trunk);
  critic_head_ = register_module("critic_head", torch::nn::Linear(in, 1));
  attr_head_ = register_module("attr_head", torch::nn::Linear(in, config_.num_attrs));
}

DiscOutputs DiscriminatorImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != config_.resolution ||
      images.size(3) != config_.resolution) {
    throw ValidationError("images", "expected (B,3," + std::to_string(config_.resolution) + "," +
                                        std::to_string(config_.resolution) + ")");
  }
  auto h = trunk_->forward(images).mean({2, 3});
  return {critic_head_->forward(h).squeeze(1), attr_head_->forward(h)};
}

std::string tac_role_name(TacRole role) {
  return role == TacRole::TargetRelevant ? "tac1" : "tac2";
}

TargetAttributeClassifierImpl::TargetAttributeClassifierImpl(TacRole role, int in_channels,
                                                             int num_attrs, int hidden)
    : role_(role), in_channels_(in_channels) {
  if (in_channels < 1) throw ValidationError("in_channels", "must be positive");
  if (num_attrs < 1) throw ValidationError("num_attrs", "must be positive");
  fc1_ = register_module("fc1", torch::nn::Linear(in_channels, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, num_attrs));
}

torch::Tensor TargetAttributeClassifierImpl::forward(const torch::Tensor& latent_half) {
  if (latent_half.dim() != 4 || latent_half.size(1) != in_channels_) {
    throw ValidationError("latent_half", "expected (B," + std::to_string(in_channels_) +
                                             ",H,W) for " + tac_role_name(role_));
  }
  auto pooled = latent_half.mean({2, 3});
  return fc2_->forward(torch::relu(fc1_->forward(pooled)));
}

torch::Tensor tac_predict(TargetAttributeClassifier& tac, const LatentPair& latents) {
  const auto& half = tac->role() == TacRole::TargetRelevant ? latents.tr : latents.tu;
  return tac->forward(half);
}

}  // namespace fairtranslate
