#pragma once

#include <torch/torch.h>

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "fairtranslate/losses.hpp"
#include "fairtranslate/pac.hpp"

namespace fairtranslate {

// Mean and covariance of an embedding set, the inputs to Fréchet distances.
struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Unbiased covariance (N-1 divisor), symmetry enforced by (C + C^T)/2.
// Throws for fewer than two rows.
GaussianStats gaussian_stats(const Eigen::MatrixXd& rows);

// ||M_a - M_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^{1/2}). The matrix square root
// comes from an eigendecomposition of the symmetrized product with negative
// eigenvalues clamped to zero; the result is clamped to >= 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Unbiased MMD^2 with polynomial kernel k(x,y) = (x.y/D + 1)^3, the paired
// U-statistic form: sum_{i != j} [k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j)
// - k(x_j,y_i)] / (m(m-1)). Exactly zero on identical aligned sets.
double kid_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

// Mean and std of MMD^2 over `num_subsets` subsets of `subset_size` rows
// drawn without replacement, reported x100. subset_size 0 picks
// min(1000, N). Throws when subset_size exceeds either set.
std::pair<double, double> kid_from_embeddings(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                              int num_subsets = 100, int subset_size = 0,
                                              std::uint64_t seed = 0);

// Images -> flat embeddings, the pluggable backend for FID/KID.
class ImageEmbedder {
 public:
  virtual ~ImageEmbedder() = default;
  virtual torch::Tensor embed(const torch::Tensor& images) const = 0;  // (N,D)
  virtual std::string id() const = 0;
};

// Desk-scale default embedder: protected-attribute features of a trained PAC.
// Not comparable with published Inception-based numbers; the id says so.
class PacImageEmbedder : public ImageEmbedder {
 public:
  explicit PacImageEmbedder(PacModel pac, bool allow_untrained = false);
  torch::Tensor embed(const torch::Tensor& images) const override;
  std::string id() const override { return "pac-features"; }

 private:
  mutable PacModel pac_;
  bool allow_untrained_;
};

Eigen::MatrixXd to_eigen(const torch::Tensor& rows);

double fid(const ImageEmbedder& embedder, const torch::Tensor& real_images,
           const torch::Tensor& generated_images);

std::pair<double, double> kid(const ImageEmbedder& embedder, const torch::Tensor& real_images,
                              const torch::Tensor& generated_images, int num_subsets = 100,
                              int subset_size = 0, std::uint64_t seed = 0);

// Fréchet distance between PAC-feature Gaussians of the two image sets.
// Warns to stderr when a set is smaller than the feature dimension.
double fpad(PacModel& pac, const torch::Tensor& real_images,
            const torch::Tensor& generated_images, bool allow_untrained = false);

// ---------------------------------------------------------------------------
// Group fairness metrics. Rates are percentages, matching how they are
// reported; both metrics are symmetric in the group labels and lie in
// [0, 100] for percentage inputs.

struct GroupedPredictions {
  std::vector<int> predicted;  // {0,1}
  std::vector<int> label;      // {0,1}
  std::vector<int> group;      // {0,1}

  void validate() const;
};

struct ConfusionRates {
  double tpr = 0.0;  // percent
  double fpr = 0.0;  // percent
};

// Rates within one group; throws when the group lacks positive or negative
// ground-truth samples, naming the group and the missing rate.
ConfusionRates confusion_rates(const GroupedPredictions& preds, int group);

double equality_of_opportunity_from_rates(double tpr_a, double tpr_b);
double equalized_odds_from_rates(double tpr_a, double fpr_a, double tpr_b, double fpr_b);

double equality_of_opportunity(const GroupedPredictions& preds);
double equalized_odds(const GroupedPredictions& preds);

// Predicts binary attribute vectors from images; mean per-attribute accuracy.
class AttributeClassifier {
 public:
  virtual ~AttributeClassifier() = default;
  virtual torch::Tensor predict(const torch::Tensor& images) const = 0;  // (B,K) of {0,1}
};

// The synthetic rendering rules as a classifier; exact on generated data.
class RuleBasedAttributeDecoder : public AttributeClassifier {
 public:
  explicit RuleBasedAttributeDecoder(SyntheticSpec spec) : spec_(std::move(spec)) {}
  torch::Tensor predict(const torch::Tensor& images) const override;

 private:
  SyntheticSpec spec_;
};

double attribute_accuracy(const AttributeClassifier& classifier, const torch::Tensor& images,
                          const torch::Tensor& target_labels);

}  // namespace fairtranslate
