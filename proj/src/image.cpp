#include "fairtranslate/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "fairtranslate/common.hpp"

namespace fairtranslate {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

RawImage read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw FormatError("cannot open " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw FormatError(path + " is not a PNG file");
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw FormatError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw FormatError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("failed to decode " + path);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);

  // Normalize everything to 8-bit RGB.
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  RawImage out;
  out.width = static_cast<int>(width);
  out.height = static_cast<int>(height);
  out.rgb.resize(static_cast<std::size_t>(width) * height * 3);

  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) {
    rows[y] = out.rgb.data() + static_cast<std::size_t>(y) * width * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::string& path, const RawImage& image) {
  if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw ValidationError("image", "rgb buffer size does not match dimensions");
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw FormatError("cannot open " + path + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw FormatError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw FormatError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("failed to encode " + path);
  }

  png_init_io(png, fp.get());
  // Fixed settings keep output bytes reproducible across runs.
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

torch::Tensor image_to_tensor(const RawImage& image) {
  auto hwc = torch::from_blob(const_cast<std::uint8_t*>(image.rgb.data()),
                              {image.height, image.width, 3}, torch::kUInt8)
                 .clone();
  auto chw = hwc.permute({2, 0, 1}).to(torch::kFloat32);
  return chw / 127.5f - 1.0f;
}

RawImage tensor_to_image(const torch::Tensor& chw) {
  if (chw.dim() != 3 || chw.size(0) != 3) {
    throw ValidationError("image", "expected a (3,H,W) tensor");
  }
  auto clamped = ((chw.clamp(-1.0f, 1.0f) + 1.0f) * 127.5f).round().clamp(0, 255);
  auto hwc = clamped.to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  RawImage out;
  out.height = static_cast<int>(chw.size(1));
  out.width = static_cast<int>(chw.size(2));
  out.rgb.assign(hwc.data_ptr<std::uint8_t>(),
                 hwc.data_ptr<std::uint8_t>() + hwc.numel());
  return out;
}

torch::Tensor preprocess(const RawImage& image, int crop, int out_size, bool training,
                         RngStream* rng) {
  if (image.width < crop || image.height < crop) {
    throw ValidationError("crop", "image " + std::to_string(image.width) + "x" +
                                      std::to_string(image.height) +
                                      " is smaller than crop " + std::to_string(crop));
  }
  if (out_size <= 0) throw ValidationError("out_size", "must be positive");
  if (training && rng == nullptr) {
    throw ValidationError("rng", "training preprocess needs a random stream");
  }

  int x0, y0;
  if (training) {
    x0 = rng->uniform_int(image.width - crop + 1);
    y0 = rng->uniform_int(image.height - crop + 1);
  } else {
    x0 = (image.width - crop) / 2;
    y0 = (image.height - crop) / 2;
  }

  auto full = image_to_tensor(image);
  auto cropped = full.index({torch::indexing::Slice(),
                             torch::indexing::Slice(y0, y0 + crop),
                             torch::indexing::Slice(x0, x0 + crop)});
  if (crop == out_size) return cropped.contiguous();

  namespace F = torch::nn::functional;
  auto resized = F::interpolate(cropped.unsqueeze(0),
                                F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{out_size, out_size})
                                    .mode(torch::kBilinear)
                                    .align_corners(false))
                     .squeeze(0);
  return resized.clamp(-1.0f, 1.0f);
}

void check_image_range(const torch::Tensor& t) {
  const bool single = t.dim() == 3 && t.size(0) == 3;
  const bool batch = t.dim() == 4 && t.size(1) == 3;
  if (!single && !batch) throw ValidationError("image", "expected (3,H,W) or (B,3,H,W)");
  const float lo = t.min().item<float>();
  const float hi = t.max().item<float>();
  if (lo < -1.0f - 1e-5f || hi > 1.0f + 1e-5f) {
    throw ValidationError("image", "pixel values outside [-1,1]: min " + std::to_string(lo) +
                                       " max " + std::to_string(hi));
  }
}

}  // namespace fairtranslate
