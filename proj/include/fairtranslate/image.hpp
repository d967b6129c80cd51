#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "fairtranslate/rng.hpp"

namespace fairtranslate {

// 8-bit RGB image as decoded from disk, row-major HWC.
struct RawImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3 bytes
};

RawImage read_png(const std::string& path);
void write_png(const std::string& path, const RawImage& image);

// (3,H,W) float tensor in [-1,1] from 8-bit RGB.
torch::Tensor image_to_tensor(const RawImage& image);

// Clamp to [-1,1] and quantize back to 8-bit RGB.
RawImage tensor_to_image(const torch::Tensor& chw);

// Crop to crop x crop (random offset when training, centered otherwise), then
// bilinear-resize to out_size and scale pixels into [-1,1]. `rng` is required
// when training.
torch::Tensor preprocess(const RawImage& image, int crop, int out_size, bool training,
                         RngStream* rng = nullptr);

// Throws unless `t` is a (3,H,W) or (B,3,H,W) tensor with values in [-1,1].
void check_image_range(const torch::Tensor& t);

}  // namespace fairtranslate
