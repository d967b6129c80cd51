#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "fairtranslate/checkpoint.hpp"

namespace fairtranslate {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Implemented in-project so optimizer moments live in the
// versioned checkpoint container and round-trip bit-exactly.
class Adam {
 public:
  Adam(std::vector<torch::Tensor> params, AdamOptions options);

  void zero_grad();
  void step();

  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  std::int64_t step_count() const { return step_count_; }

  void pack_state(Checkpoint& ckpt, const std::string& prefix) const;
  void unpack_state(const Checkpoint& ckpt, const std::string& prefix);

 private:
  std::vector<torch::Tensor> params_, m_, v_;
  AdamOptions options_;
  std::int64_t step_count_ = 0;
};

}  // namespace fairtranslate
