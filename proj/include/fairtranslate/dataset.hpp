#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fairtranslate/image.hpp"
#include "fairtranslate/rng.hpp"

namespace fairtranslate {

// Gender / age-bucket / race class labels; any of them may be absent
// (target-domain records carry none).
struct ProtectedLabels {
  std::optional<int> gender;
  std::optional<int> age;
  std::optional<int> race;

  bool any() const { return gender || age || race; }
};

struct DatasetRecord {
  torch::Tensor image;         // (3,H,W) in [-1,1]
  torch::Tensor target_attrs;  // (K,) float 0/1
  ProtectedLabels protected_labels;
  int domain_label = 0;  // 0 = source, 1 = target
  std::string filename;
};

// One protected visual factor. Supported kinds:
//   hue    - background hue band, `cardinality` evenly spaced bands
//   frame  - border brightness, `cardinality` gray levels
//   corner - top-left patch brightness, `cardinality` gray levels
struct ProtectedFactorSpec {
  std::string name;
  int cardinality = 2;
  std::string kind = "hue";
};

// One binary target glyph. Supported kinds: square, stripe_h, stripe_v,
// cross, dot. Regions are disjoint from each other and from the protected
// factors so every factor stays independently decodable from the pixels.
struct TargetFactorSpec {
  std::string name;
  std::string kind = "square";
};

struct SyntheticSpec {
  int resolution = 64;
  int num_samples = 2000;
  std::vector<ProtectedFactorSpec> protected_factors{{"gender", 2, "hue"}};
  std::vector<TargetFactorSpec> target_factors{{"glyph", "square"}, {"stripe", "stripe_h"}};
  // Statistical dependence between protected factor 0 (class parity) and
  // target bit 0: P(bit0 == parity) = (1 + correlation) / 2.
  double correlation = 0.0;
  std::uint64_t seed = 0;
  int domain = 0;  // domain 1 renders with a global hue offset

  void validate() const;  // throws ValidationError naming the offending field

  // Plain-text key=value provenance file, written next to generated data.
  void write(const std::string& path) const;
  static SyntheticSpec from_file(const std::string& path);
};

// Deterministic for a fixed seed; per-record streams are derived as
// mix(seed, index) so generation order does not matter.
std::vector<DatasetRecord> generate_synthetic_dataset(const SyntheticSpec& spec);

// Rule-based decoding. The rendering is injective per factor, so these
// recover the labels exactly on generated data; they also serve as the
// desk-scale oracle classifier on translated images.
int decode_protected_class(const torch::Tensor& image, const SyntheticSpec& spec,
                           std::size_t factor_index);
torch::Tensor decode_target_bits(const torch::Tensor& image, const SyntheticSpec& spec);

enum class Split { Train, Val, Test };

struct SplitRatios {
  double train = 0.90;
  double val = 0.05;
  double test = 0.05;
};

// Deterministic hash of the filename; the same name always lands in the same
// split, independent of listing order or runs.
Split split_for_filename(const std::string& filename, const SplitRatios& ratios);

struct LoadOptions {
  SplitRatios ratios;
  std::optional<Split> split;  // absent = all records
  int resolution = 0;          // 0 = keep file resolution; else center-crop+resize
  int domain_label = 0;
};

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t skipped_missing = 0;
  std::vector<std::string> warnings;
  std::vector<std::string> attribute_names;
};

// Reads `<root>/images/*.png` records listed in the annotation CSV. Header:
// filename,attr_1,...,attr_K[,gender,age,race]; attribute cells may use the
// CelebA {-1,1} convention or {0,1}; -1 maps to 0.
std::vector<DatasetRecord> load_annotated_dataset(const std::string& root_dir,
                                                  const std::string& annotation_file,
                                                  const LoadOptions& options = {},
                                                  LoadReport* report = nullptr);

// Writes images/*.png plus annotations.csv in the layout the loader expects.
void write_dataset(const std::string& root_dir, const std::vector<DatasetRecord>& records,
                   const std::vector<std::string>& attribute_names,
                   bool include_protected_columns);

// Stacks records into batch tensors.
torch::Tensor stack_images(const std::vector<DatasetRecord>& records,
                           const std::vector<std::size_t>& indices);
torch::Tensor stack_attrs(const std::vector<DatasetRecord>& records,
                          const std::vector<std::size_t>& indices);

}  // namespace fairtranslate
