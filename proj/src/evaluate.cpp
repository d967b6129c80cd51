#include "fairtranslate/evaluate.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fairtranslate/common.hpp"
#include "fairtranslate/trainer.hpp"

namespace fairtranslate {

torch::Tensor translate_batched(Generator& gen, const torch::Tensor& images,
                                const torch::Tensor& attrs, int batch_size) {
  torch::NoGradGuard no_grad;
  gen->eval();
  std::vector<torch::Tensor> out;
  const auto n = images.size(0);
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const auto len = std::min<std::int64_t>(batch_size, n - start);
    out.push_back(gen->translate(images.narrow(0, start, len), attrs.narrow(0, start, len)));
  }
  return torch::cat(out);
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const auto& cell : cells) {
    nlohmann::json c{
        {"group", cell.group},
        {"direction", cell.direction},
        {"attribute", cell.attribute},
        {"count", cell.count},
    };
    if (cell.absent) {
      c["fpad"] = nullptr;
      c["absent"] = true;
    } else {
      c["fpad"] = cell.fpad_value;
      c["absent"] = false;
    }
    cells_json.push_back(std::move(c));
  }
  nlohmann::json j{
      {"schema_version", kEvalReportSchemaVersion},
      {"cells", cells_json},
      {"fid", fid_value},
      {"kid_mean", kid_mean},
      {"kid_std", kid_std},
      {"attribute_accuracy", attribute_acc},
      {"embedder", embedder_id},
      {"real_count", real_count},
      {"generated_count", generated_count},
  };
  if (fpad_average) {
    j["fpad_average"] = *fpad_average;
  } else {
    j["fpad_average"] = nullptr;
  }
  return j;
}

std::string EvaluationReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "group  direction  attribute        n     FPAD\n";
  for (const auto& cell : cells) {
    os << std::left << std::setw(7) << cell.group << std::setw(11) << cell.direction
       << std::setw(16) << cell.attribute << std::right << std::setw(5) << cell.count << "  ";
    if (cell.absent) {
      os << "absent";
    } else {
      os << cell.fpad_value;
    }
    os << "\n";
  }
  os << "\n";
  if (fpad_average) os << "FPAD average: " << *fpad_average << "\n";
  os << "FID (" << embedder_id << "): " << fid_value << "\n";
  os << "KID x100: " << kid_mean << " +/- " << kid_std << "\n";
  os << "attribute accuracy: " << attribute_acc << "%\n";
  return os.str();
}

EvaluationReport evaluate_translation(Generator& gen, PacModel& pac,
                                      const ImageEmbedder& embedder,
                                      const AttributeClassifier& attr_classifier,
                                      const std::vector<DatasetRecord>& test_records,
                                      const std::vector<std::string>& attr_names,
                                      const EvalOptions& options) {
  if (test_records.empty()) throw ValidationError("test_records", "no records");
  const auto k = test_records.front().target_attrs.size(0);
  if (static_cast<std::int64_t>(attr_names.size()) != k) {
    throw ValidationError("attr_names", "count does not match the dataset");
  }

  EvaluationReport report;
  report.embedder_id = embedder.id();

  // Per-cell FPAD, Table-4 layout: group x direction x attribute.
  for (int group = 0; group <= 1; ++group) {
    for (int from_value = 0; from_value <= 1; ++from_value) {
      for (std::int64_t attr = 0; attr < k; ++attr) {
        EvalCell cell;
        cell.group = group;
        cell.direction = from_value == 0 ? "-to+" : "+to-";
        cell.attribute = attr_names[attr];

        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < test_records.size(); ++i) {
          const auto& rec = test_records[i];
          if (!rec.protected_labels.gender || *rec.protected_labels.gender % 2 != group) continue;
          const int bit = rec.target_attrs[attr].item<float>() > 0.5f ? 1 : 0;
          if (bit == from_value) members.push_back(i);
        }
        cell.count = static_cast<int>(members.size());
        if (members.size() < 2) {
          cell.absent = true;
          report.cells.push_back(cell);
          continue;
        }

        auto images = stack_images(test_records, members);
        auto attrs = stack_attrs(test_records, members);
        attrs.index_put_({torch::indexing::Slice(), attr},
                         static_cast<float>(1 - from_value));
        auto translated = translate_batched(gen, images, attrs, options.batch_size);
        cell.fpad_value = fpad(pac, images, translated);
        report.cells.push_back(cell);
      }
    }
  }

  double sum = 0.0;
  int present = 0;
  for (const auto& cell : report.cells) {
    if (!cell.absent) {
      sum += cell.fpad_value;
      ++present;
    }
  }
  if (present > 0) report.fpad_average = sum / present;

  // Whole-set translation with the single-bit-flip policy for the realism and
  // accuracy scores.
  std::vector<std::size_t> all(test_records.size());
  std::iota(all.begin(), all.end(), 0);
  auto images = stack_images(test_records, all);
  auto attrs = stack_attrs(test_records, all);
  RngStream rng(RngStream::mix(options.seed, 0xE7A1));
  auto a_t = sample_target_attributes(attrs, rng, "flip_one");
  auto translated = translate_batched(gen, images, a_t, options.batch_size);

  report.real_count = static_cast<int>(images.size(0));
  report.generated_count = static_cast<int>(translated.size(0));
  report.fid_value = fid(embedder, images, translated);
  auto [kid_mean, kid_std] =
      kid(embedder, images, translated, options.kid_subsets, options.kid_subset_size, options.seed);
  report.kid_mean = kid_mean;
  report.kid_std = kid_std;
  report.attribute_acc = 100.0 * attribute_accuracy(attr_classifier, translated, a_t);
  return report;
}

}  // namespace fairtranslate
