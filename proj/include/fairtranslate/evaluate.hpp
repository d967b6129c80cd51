#pragma once

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fairtranslate/dataset.hpp"
#include "fairtranslate/metrics.hpp"
#include "fairtranslate/networks.hpp"
#include "fairtranslate/pac.hpp"

namespace fairtranslate {

inline constexpr int kEvalReportSchemaVersion = 1;

struct EvalOptions {
  int kid_subsets = 100;
  int kid_subset_size = 0;  // 0 = min(1000, N)
  std::uint64_t seed = 0;
  int batch_size = 64;  // translation minibatch
};

// One (group x direction x attribute) translation cell, mirroring the FPAD
// report layout. Cells with fewer than two source images are reported absent
// rather than zero.
struct EvalCell {
  int group = 0;
  std::string direction;  // "-to+" or "+to-"
  std::string attribute;
  bool absent = false;
  double fpad_value = 0.0;
  int count = 0;
};

struct EvaluationReport {
  std::vector<EvalCell> cells;
  std::optional<double> fpad_average;  // over non-absent cells
  double fid_value = 0.0;
  double kid_mean = 0.0;
  double kid_std = 0.0;
  double attribute_acc = 0.0;  // percent
  std::string embedder_id;
  int real_count = 0;
  int generated_count = 0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

// Translates the test set with the given generator and scores it: per-cell
// FPAD, overall FID/KID against the originals, and the share of intended
// target attributes the classifier recovers from the translations.
EvaluationReport evaluate_translation(Generator& gen, PacModel& pac,
                                      const ImageEmbedder& embedder,
                                      const AttributeClassifier& attr_classifier,
                                      const std::vector<DatasetRecord>& test_records,
                                      const std::vector<std::string>& attr_names,
                                      const EvalOptions& options = {});

// Batched helper used by both evaluation and the CLI translate/augment paths.
torch::Tensor translate_batched(Generator& gen, const torch::Tensor& images,
                                const torch::Tensor& attrs, int batch_size = 64);

}  // namespace fairtranslate
