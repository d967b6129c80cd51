#include "fairtranslate/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "fairtranslate/common.hpp"
#include "fairtranslate/rng.hpp"

namespace fairtranslate {

namespace {

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  Eigen::VectorXd vals = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return solver.eigenvectors() * vals.asDiagonal() * solver.eigenvectors().transpose();
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

GaussianStats gaussian_stats(const Eigen::MatrixXd& rows) {
  const auto n = rows.rows();
  if (n < 2) throw ValidationError("features", "need at least two rows for covariance");
  GaussianStats stats;
  stats.mean = rows.colwise().mean();
  Eigen::MatrixXd centered = rows.rowwise() - stats.mean.transpose();
  stats.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  stats.cov = (stats.cov + stats.cov.transpose()) / 2.0;
  return stats;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows()) {
    throw ValidationError("stats", "dimension mismatch");
  }
  if (!a.mean.allFinite() || !b.mean.allFinite() || !a.cov.allFinite() || !b.cov.allFinite()) {
    throw ValidationError("stats", "non-finite inputs");
  }

  const double mean_term = (a.mean - b.mean).squaredNorm();

  // Tr((C_a C_b)^{1/2}) via the symmetrized product A C_b A with A = C_a^{1/2};
  // the two share nonzero eigenvalues and the symmetric form keeps the
  // eigendecomposition real and the distance symmetric in its arguments.
  Eigen::MatrixXd root_a = sqrt_psd(a.cov);
  Eigen::MatrixXd product = root_a * b.cov * root_a;
  product = (product + product.transpose()) / 2.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(product);
  const double trace_sqrt = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
  return std::max(d, 0.0);
}

double kid_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) throw ValidationError("sets", "paired estimator needs equal sizes");
  if (x.cols() != y.cols()) throw ValidationError("sets", "dimension mismatch");
  const auto m = x.rows();
  if (m < 2) throw ValidationError("sets", "need at least two vectors");
  const double d = static_cast<double>(x.cols());

  auto kernel = [d](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return ((a * b.transpose()).array() / d + 1.0).cube().matrix();
  };
  Eigen::MatrixXd kxx = kernel(x, x);
  Eigen::MatrixXd kyy = kernel(y, y);
  Eigen::MatrixXd kxy = kernel(x, y);

  double sum = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) continue;
      sum += kxx(i, j) + kyy(i, j) - kxy(i, j) - kxy(j, i);
    }
  }
  return sum / (static_cast<double>(m) * (m - 1));
}

std::pair<double, double> kid_from_embeddings(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                              int num_subsets, int subset_size,
                                              std::uint64_t seed) {
  const int nx = static_cast<int>(x.rows());
  const int ny = static_cast<int>(y.rows());
  if (subset_size == 0) subset_size = std::min({1000, nx, ny});
  if (subset_size > nx || subset_size > ny) {
    throw ValidationError("subset_size", "exceeds one of the embedding sets");
  }
  if (num_subsets < 1) throw ValidationError("num_subsets", "must be positive");

  RngStream rng(RngStream::mix(seed, 0x1D));
  // Subsets are index sets, not sequences: sorting keeps the paired estimator
  // aligned, so identical inputs with full-coverage subsets give exactly zero.
  auto sample_without_replacement = [&rng](int n, int k) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.uniform_int(n - i)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
  };

  std::vector<double> values;
  values.reserve(num_subsets);
  for (int s = 0; s < num_subsets; ++s) {
    auto xi = sample_without_replacement(nx, subset_size);
    auto yi = sample_without_replacement(ny, subset_size);
    values.push_back(100.0 * kid_mmd2(take_rows(x, xi), take_rows(y, yi)));
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double std_dev = values.size() > 1 ? std::sqrt(var / (values.size() - 1)) : 0.0;
  return {mean, std_dev};
}

PacImageEmbedder::PacImageEmbedder(PacModel pac, bool allow_untrained)
    : pac_(std::move(pac)), allow_untrained_(allow_untrained) {}

torch::Tensor PacImageEmbedder::embed(const torch::Tensor& images) const {
  return extract_protected_features(pac_, images, allow_untrained_);
}

Eigen::MatrixXd to_eigen(const torch::Tensor& rows) {
  auto t = rows.detach().to(torch::kFloat64).contiguous().cpu();
  if (t.dim() != 2) throw ValidationError("embeddings", "expected (N,D)");
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> map(
      t.data_ptr<double>(), t.size(0), t.size(1));
  return Eigen::MatrixXd(map);
}

double fid(const ImageEmbedder& embedder, const torch::Tensor& real_images,
           const torch::Tensor& generated_images) {
  auto stats_real = gaussian_stats(to_eigen(embedder.embed(real_images)));
  auto stats_gen = gaussian_stats(to_eigen(embedder.embed(generated_images)));
  return frechet_distance(stats_real, stats_gen);
}

std::pair<double, double> kid(const ImageEmbedder& embedder, const torch::Tensor& real_images,
                              const torch::Tensor& generated_images, int num_subsets,
                              int subset_size, std::uint64_t seed) {
  return kid_from_embeddings(to_eigen(embedder.embed(real_images)),
                             to_eigen(embedder.embed(generated_images)), num_subsets, subset_size,
                             seed);
}

double fpad(PacModel& pac, const torch::Tensor& real_images,
            const torch::Tensor& generated_images, bool allow_untrained) {
  if (real_images.size(0) == 0 || generated_images.size(0) == 0) {
    throw ValidationError("images", "both sets must be nonempty");
  }
  auto phi_real = extract_protected_features(pac, real_images, allow_untrained);
  auto phi_gen = extract_protected_features(pac, generated_images, allow_untrained);
  const auto d = phi_real.size(1);
  if (real_images.size(0) < d || generated_images.size(0) < d) {
    std::cerr << "[fpad] warning: set sizes (" << real_images.size(0) << ", "
              << generated_images.size(0) << ") are below the feature dimension " << d
              << "; covariances are rank-deficient\n";
  }
  return frechet_distance(gaussian_stats(to_eigen(phi_real)), gaussian_stats(to_eigen(phi_gen)));
}

void GroupedPredictions::validate() const {
  if (predicted.size() != label.size() || predicted.size() != group.size()) {
    throw ValidationError("predictions", "arrays must have equal length");
  }
  bool has[2] = {false, false};
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] != 0 && predicted[i] != 1) throw ValidationError("predicted", "must be 0/1");
    if (label[i] != 0 && label[i] != 1) throw ValidationError("label", "must be 0/1");
    if (group[i] != 0 && group[i] != 1) throw ValidationError("group", "must be 0/1");
    has[group[i]] = true;
  }
  if (!has[0] || !has[1]) {
    throw ValidationError("group", "both groups must be nonempty for fairness metrics");
  }
}

ConfusionRates confusion_rates(const GroupedPredictions& preds, int group) {
  if (preds.predicted.size() != preds.label.size() ||
      preds.predicted.size() != preds.group.size()) {
    throw ValidationError("predictions", "arrays must have equal length");
  }
  std::int64_t tp = 0, fn = 0, fp = 0, tn = 0;
  for (std::size_t i = 0; i < preds.predicted.size(); ++i) {
    if (preds.group[i] != group) continue;
    if (preds.label[i] == 1) {
      preds.predicted[i] == 1 ? ++tp : ++fn;
    } else {
      preds.predicted[i] == 1 ? ++fp : ++tn;
    }
  }
  const std::string gname = "group " + std::to_string(group);
  if (tp + fn == 0) throw ValidationError(gname, "no positive samples, TPR undefined");
  if (fp + tn == 0) throw ValidationError(gname, "no negative samples, FPR undefined");
  return {100.0 * tp / (tp + fn), 100.0 * fp / (fp + tn)};
}

double equality_of_opportunity_from_rates(double tpr_a, double tpr_b) {
  return std::fabs(tpr_a - tpr_b);
}

double equalized_odds_from_rates(double tpr_a, double fpr_a, double tpr_b, double fpr_b) {
  return 0.5 * (std::fabs(fpr_a - fpr_b) + std::fabs(tpr_a - tpr_b));
}

double equality_of_opportunity(const GroupedPredictions& preds) {
  preds.validate();
  return equality_of_opportunity_from_rates(confusion_rates(preds, 0).tpr,
                                            confusion_rates(preds, 1).tpr);
}

double equalized_odds(const GroupedPredictions& preds) {
  preds.validate();
  const auto a = confusion_rates(preds, 0);
  const auto b = confusion_rates(preds, 1);
  return equalized_odds_from_rates(a.tpr, a.fpr, b.tpr, b.fpr);
}

torch::Tensor RuleBasedAttributeDecoder::predict(const torch::Tensor& images) const {
  const auto b = images.size(0);
  auto out = torch::zeros({b, static_cast<std::int64_t>(spec_.target_factors.size())},
                          torch::kFloat32);
  for (std::int64_t i = 0; i < b; ++i) {
    out[i] = decode_target_bits(images[i], spec_);
  }
  return out;
}

double attribute_accuracy(const AttributeClassifier& classifier, const torch::Tensor& images,
                          const torch::Tensor& target_labels) {
  auto predicted = classifier.predict(images);
  if (!predicted.sizes().equals(target_labels.sizes())) {
    throw ValidationError("target_labels", "shape must match classifier output");
  }
  auto correct = predicted.gt(0.5).eq(target_labels.gt(0.5)).to(torch::kFloat64);
  // Mean over attributes of per-attribute accuracy equals the grand mean here.
  return correct.mean().item<double>();
}

}  // namespace fairtranslate
