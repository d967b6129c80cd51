#include "fairtranslate/adam.hpp"

#include <cmath>
#include <cstdio>

#include "fairtranslate/common.hpp"

namespace fairtranslate {

Adam::Adam(std::vector<torch::Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (options_.lr <= 0) throw ValidationError("lr", "must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(torch::zeros_like(p));
    v_.push_back(torch::zeros_like(p));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
}

void Adam::step() {
  torch::NoGradGuard no_grad;
  ++step_count_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.grad().defined()) continue;
    const auto& g = p.grad();
    m_[i].mul_(options_.beta1).add_(g, 1.0 - options_.beta1);
    v_[i].mul_(options_.beta2).addcmul_(g, g, 1.0 - options_.beta2);
    auto m_hat = m_[i] / bc1;
    auto v_hat = v_[i] / bc2;
    p.add_(m_hat / (v_hat.sqrt() + options_.eps), -options_.lr);
  }
}

void Adam::pack_state(Checkpoint& ckpt, const std::string& prefix) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ckpt.tensors.emplace_back(prefix + "m." + std::to_string(i), m_[i].clone());
    ckpt.tensors.emplace_back(prefix + "v." + std::to_string(i), v_[i].clone());
  }
  ckpt.meta[prefix + "step_count"] = std::to_string(step_count_);
  char lr_buf[32];
  std::snprintf(lr_buf, sizeof(lr_buf), "%.17g", options_.lr);
  ckpt.meta[prefix + "lr"] = lr_buf;
}

void Adam::unpack_state(const Checkpoint& ckpt, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].copy_(ckpt.tensor(prefix + "m." + std::to_string(i)));
    v_[i].copy_(ckpt.tensor(prefix + "v." + std::to_string(i)));
  }
  step_count_ = ckpt.meta_int(prefix + "step_count");
  options_.lr = ckpt.meta_double(prefix + "lr");
}

}  // namespace fairtranslate
