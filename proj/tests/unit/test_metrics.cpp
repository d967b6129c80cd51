#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fairtranslate/dataset.hpp"
#include "fairtranslate/metrics.hpp"
#include "fairtranslate/rng.hpp"

using namespace fairtranslate;

namespace {

// Univariate Frechet distance between N(m1, c1) and N(m2, c2).
double univariate_frechet(double m1, double c1, double m2, double c2) {
  return (m1 - m2) * (m1 - m2) + c1 + c2 - 2.0 * std::sqrt(c1 * c2);
}

GaussianStats diagonal_stats(const std::vector<double>& mean, const std::vector<double>& var) {
  GaussianStats stats;
  const auto d = static_cast<Eigen::Index>(mean.size());
  stats.mean = Eigen::VectorXd(d);
  stats.cov = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    stats.mean(i) = mean[i];
    stats.cov(i, i) = var[i];
  }
  return stats;
}

// The paired U-statistic MMD^2, written as plainly as possible.
double mmd2_nested_loop(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const auto m = x.rows();
  const double d = static_cast<double>(x.cols());
  auto k = [d](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::pow(a.dot(b) / d + 1.0, 3);
  };
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) continue;
      sum += k(x.row(i), x.row(j)) + k(y.row(i), y.row(j)) - k(x.row(i), y.row(j)) -
             k(x.row(j), y.row(i));
    }
  }
  return sum / (static_cast<double>(m) * (m - 1));
}

class FlattenEmbedder : public ImageEmbedder {
 public:
  torch::Tensor embed(const torch::Tensor& images) const override {
    return images.reshape({images.size(0), -1});
  }
  std::string id() const override { return "flatten"; }
};

class FixedClassifier : public AttributeClassifier {
 public:
  explicit FixedClassifier(torch::Tensor output) : output_(std::move(output)) {}
  torch::Tensor predict(const torch::Tensor&) const override { return output_; }

 private:
  torch::Tensor output_;
};

}  // namespace

TEST_CASE("gaussian statistics use the unbiased covariance") {
  SUBCASE("two-point example") {
    Eigen::MatrixXd rows(2, 2);
    rows << 0, 0, 2, 2;
    auto stats = gaussian_stats(rows);
    CHECK(stats.mean(0) == doctest::Approx(1.0));
    CHECK(stats.mean(1) == doctest::Approx(1.0));
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) CHECK(stats.cov(i, j) == doctest::Approx(2.0));
    }
  }

  SUBCASE("identical rows give a zero covariance") {
    Eigen::MatrixXd rows = Eigen::MatrixXd::Ones(5, 3) * 4.2;
    auto stats = gaussian_stats(rows);
    CHECK(stats.cov.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  }

  SUBCASE("matches a two-pass loop within 1e-10") {
    RngStream rng(3);
    Eigen::MatrixXd rows(1000, 4);
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
      for (Eigen::Index j = 0; j < 4; ++j) rows(i, j) = rng.uniform(-2, 2);

    auto stats = gaussian_stats(rows);

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) mean += rows.row(i).transpose();
    mean /= static_cast<double>(rows.rows());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(4, 4);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      Eigen::VectorXd c = rows.row(i).transpose() - mean;
      cov += c * c.transpose();
    }
    cov /= static_cast<double>(rows.rows() - 1);

    CHECK((stats.mean - mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((stats.cov - cov).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("fewer than two rows is an error") {
    CHECK_THROWS_AS(gaussian_stats(Eigen::MatrixXd::Zero(1, 3)), ValidationError);
  }
}

TEST_CASE("frechet distance against analytic cases") {
  SUBCASE("identical stats give zero") {
    RngStream rng(1);
    Eigen::MatrixXd rows(20, 3);
    for (Eigen::Index i = 0; i < 20; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) rows(i, j) = rng.uniform(-1, 1);
    auto stats = gaussian_stats(rows);
    CHECK(frechet_distance(stats, stats) < 1e-6);
  }

  SUBCASE("univariate closed form") {
    auto a = diagonal_stats({0.0}, {1.0});
    auto b = diagonal_stats({3.0}, {4.0});
    CHECK(frechet_distance(a, b) == doctest::Approx(10.0).epsilon(1e-10));
  }

  SUBCASE("diagonal case reduces to per-axis sums") {
    auto a = diagonal_stats({0.0, 0.0}, {1.0, 1.0});
    auto b = diagonal_stats({1.0, 0.0}, {4.0, 1.0});
    CHECK(frechet_distance(a, b) == doctest::Approx(2.0).epsilon(1e-10));
  }

  SUBCASE("twenty randomized diagonal cases match the analytic formula to 1e-8") {
    RngStream rng(17);
    for (int trial = 0; trial < 20; ++trial) {
      const int d = 1 + rng.uniform_int(6);
      std::vector<double> m1(d), m2(d), v1(d), v2(d);
      double expected = 0.0;
      for (int i = 0; i < d; ++i) {
        m1[i] = rng.uniform(-3, 3);
        m2[i] = rng.uniform(-3, 3);
        v1[i] = rng.uniform(0.1, 5.0);
        v2[i] = rng.uniform(0.1, 5.0);
        expected += univariate_frechet(m1[i], v1[i], m2[i], v2[i]);
      }
      const double actual = frechet_distance(diagonal_stats(m1, v1), diagonal_stats(m2, v2));
      CHECK(std::fabs(actual - expected) < 1e-8);
    }
  }

  SUBCASE("symmetric in its arguments") {
    RngStream rng(23);
    for (int trial = 0; trial < 10; ++trial) {
      Eigen::MatrixXd xa(30, 4), xb(30, 4);
      for (Eigen::Index i = 0; i < 30; ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) {
          xa(i, j) = rng.uniform(-2, 2);
          xb(i, j) = rng.uniform(-1, 3);
        }
      }
      auto a = gaussian_stats(xa);
      auto b = gaussian_stats(xb);
      CHECK(std::fabs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-8);
    }
  }

  SUBCASE("dimension mismatches and non-finite inputs are rejected") {
    auto a = diagonal_stats({0.0}, {1.0});
    auto b = diagonal_stats({0.0, 0.0}, {1.0, 1.0});
    CHECK_THROWS_AS(frechet_distance(a, b), ValidationError);
    auto bad = diagonal_stats({std::nan("")}, {1.0});
    CHECK_THROWS_AS(frechet_distance(bad, a), ValidationError);
  }
}

TEST_CASE("kernel MMD estimator") {
  SUBCASE("identical aligned sets give exactly zero") {
    RngStream rng(5);
    Eigen::MatrixXd x(8, 3);
    for (Eigen::Index i = 0; i < 8; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.uniform(-1, 1);
    CHECK(kid_mmd2(x, x) == 0.0);
    auto [mean, stddev] = kid_from_embeddings(x, x, 4, 8, 0);
    CHECK(std::fabs(mean) < 1e-6);
  }

  SUBCASE("matches the nested-loop oracle within 1e-10 on small sets") {
    RngStream rng(6);
    for (int trial = 0; trial < 5; ++trial) {
      const int n = 3 + rng.uniform_int(8);
      Eigen::MatrixXd x(n, 2), y(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < 2; ++j) {
          x(i, j) = rng.uniform(-2, 2);
          y(i, j) = rng.uniform(-2, 2);
        }
      }
      CHECK(std::fabs(kid_mmd2(x, y) - mmd2_nested_loop(x, y)) < 1e-10);
    }
  }

  SUBCASE("invariant to a joint permutation of both sets") {
    RngStream rng(7);
    const int n = 12;
    Eigen::MatrixXd x(n, 3), y(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < 3; ++j) {
        x(i, j) = rng.uniform(-2, 2);
        y(i, j) = rng.uniform(-2, 2);
      }
    }
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.uniform_int(static_cast<int>(i))]);
    }
    Eigen::MatrixXd xp(n, 3), yp(n, 3);
    for (int i = 0; i < n; ++i) {
      xp.row(i) = x.row(perm[i]);
      yp.row(i) = y.row(perm[i]);
    }
    auto [m1, s1] = kid_from_embeddings(x, y, 3, n, 99);
    auto [m2, s2] = kid_from_embeddings(xp, yp, 3, n, 99);
    CHECK(std::fabs(m1 - m2) < 1e-10);
  }

  SUBCASE("oversized subsets are rejected") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 2);
    CHECK_THROWS_AS(kid_from_embeddings(x, x, 2, 10, 0), ValidationError);
  }
}

TEST_CASE("confusion rates per group") {
  SUBCASE("all-correct predictions") {
    GroupedPredictions preds;
    preds.predicted = {1, 0, 1, 0};
    preds.label = {1, 0, 1, 0};
    preds.group = {0, 0, 1, 1};
    auto rates = confusion_rates(preds, 0);
    CHECK(rates.tpr == 100.0);
    CHECK(rates.fpr == 0.0);
  }

  SUBCASE("inverted predictions") {
    GroupedPredictions preds;
    preds.predicted = {0, 1, 0, 1};
    preds.label = {1, 0, 1, 0};
    preds.group = {0, 0, 1, 1};
    auto rates = confusion_rates(preds, 1);
    CHECK(rates.tpr == 0.0);
    CHECK(rates.fpr == 100.0);
  }

  SUBCASE("ten-sample hand count") {
    GroupedPredictions preds;
    //           TP FN TP FP TN | group 1 ---------------
    preds.predicted = {1, 0, 1, 1, 0, 1, 1, 0, 0, 1};
    preds.label =     {1, 1, 1, 0, 0, 1, 0, 1, 0, 1};
    preds.group =     {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    auto g0 = confusion_rates(preds, 0);
    CHECK(g0.tpr == doctest::Approx(100.0 * 2 / 3));
    CHECK(g0.fpr == doctest::Approx(100.0 * 1 / 2));
    auto g1 = confusion_rates(preds, 1);
    CHECK(g1.tpr == doctest::Approx(100.0 * 2 / 3));
    CHECK(g1.fpr == doctest::Approx(100.0 * 1 / 2));
  }

  SUBCASE("undefined rates name the group") {
    GroupedPredictions preds;
    preds.predicted = {1, 1};
    preds.label = {1, 1};
    preds.group = {0, 0};
    CHECK_THROWS_WITH_AS(confusion_rates(preds, 0), doctest::Contains("group 0"),
                         ValidationError);
  }
}

TEST_CASE("fairness scores reproduce the published arithmetic") {
  // Row O.
  CHECK(equality_of_opportunity_from_rates(64.10, 86.36) == doctest::Approx(22.26).epsilon(1e-9));
  CHECK(equalized_odds_from_rates(64.10, 18.40, 86.36, 49.00) ==
        doctest::Approx(26.43).epsilon(1e-9));
  // Row O + G_ours(O).
  CHECK(equality_of_opportunity_from_rates(74.36, 85.35) == doctest::Approx(10.99).epsilon(1e-9));
  CHECK(equalized_odds_from_rates(74.36, 22.70, 85.35, 45.00) ==
        doctest::Approx(16.65).epsilon(1e-3));

  SUBCASE("equal rates give zero") {
    CHECK(equality_of_opportunity_from_rates(50.0, 50.0) == 0.0);
    CHECK(equalized_odds_from_rates(50.0, 10.0, 50.0, 10.0) == 0.0);
  }

  SUBCASE("invariant under swapping the groups, bounded by [0, 100]") {
    RngStream rng(8);
    for (int i = 0; i < 50; ++i) {
      const double ta = rng.uniform(0, 100), fa = rng.uniform(0, 100);
      const double tb = rng.uniform(0, 100), fb = rng.uniform(0, 100);
      CHECK(equality_of_opportunity_from_rates(ta, tb) ==
            equality_of_opportunity_from_rates(tb, ta));
      const double odds = equalized_odds_from_rates(ta, fa, tb, fb);
      CHECK(odds == equalized_odds_from_rates(tb, fb, ta, fa));
      CHECK(odds >= 0.0);
      CHECK(odds <= 100.0);
      CHECK(equality_of_opportunity_from_rates(ta, tb) <= 100.0);
    }
  }

  SUBCASE("grouped-prediction forms agree with the rate forms") {
    GroupedPredictions preds;
    preds.predicted = {1, 0, 1, 1, 0, 1, 1, 0, 0, 1};
    preds.label =     {1, 1, 1, 0, 0, 1, 0, 1, 0, 1};
    preds.group =     {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    auto g0 = confusion_rates(preds, 0);
    auto g1 = confusion_rates(preds, 1);
    CHECK(equality_of_opportunity(preds) ==
          doctest::Approx(equality_of_opportunity_from_rates(g0.tpr, g1.tpr)));
    CHECK(equalized_odds(preds) ==
          doctest::Approx(equalized_odds_from_rates(g0.tpr, g0.fpr, g1.tpr, g1.fpr)));
  }

  SUBCASE("an empty group is rejected up front") {
    GroupedPredictions preds;
    preds.predicted = {1, 0};
    preds.label = {1, 0};
    preds.group = {0, 0};
    CHECK_THROWS_AS(equality_of_opportunity(preds), ValidationError);
  }
}

TEST_CASE("fid is the frechet distance over the pluggable embedder") {
  torch::manual_seed(9);
  auto real = torch::rand({24, 3, 8, 8});
  auto generated = torch::rand({24, 3, 8, 8}) * 0.5f + 0.25f;

  FlattenEmbedder embedder;
  const double direct = fid(embedder, real, generated);
  const double via_stats =
      frechet_distance(gaussian_stats(to_eigen(real.reshape({24, -1}))),
                       gaussian_stats(to_eigen(generated.reshape({24, -1}))));
  CHECK(direct == doctest::Approx(via_stats).epsilon(1e-12));
  CHECK(fid(embedder, real, real) < 1e-6);
}

TEST_CASE("fpad uses PAC features and vanishes on identical sets") {
  PacConfig config;
  config.resolution = 32;
  config.base_channels = 2;
  torch::manual_seed(10);
  PacModel pac(config);
  pac->mark_trained(true);

  auto images = torch::rand({12, 3, 32, 32}) * 2 - 1;
  CHECK(fpad(pac, images, images.clone()) < 1e-6);
  CHECK_THROWS_AS(fpad(pac, torch::empty({0, 3, 32, 32}), images), ValidationError);

  PacModel untrained(config);
  CHECK_THROWS_AS(fpad(untrained, images, images), ValidationError);
  CHECK(fpad(untrained, images, images.clone(), /*allow_untrained=*/true) < 1e-6);
}

TEST_CASE("attribute accuracy averages per-attribute hits") {
  auto labels = torch::tensor({{1.0f, 0.0f}, {0.0f, 0.0f}, {1.0f, 1.0f}, {0.0f, 1.0f}});
  auto images = torch::zeros({4, 3, 8, 8});

  SUBCASE("a perfect classifier scores 1") {
    FixedClassifier perfect(labels.clone());
    CHECK(attribute_accuracy(perfect, images, labels) == doctest::Approx(1.0));
  }

  SUBCASE("hand-built four-image two-attribute case") {
    auto predicted = torch::tensor({{1.0f, 1.0f}, {0.0f, 0.0f}, {0.0f, 1.0f}, {0.0f, 1.0f}});
    // attr 0: rows 0,1,3 correct -> 3/4; attr 1: rows 1,2,3 correct -> 3/4.
    FixedClassifier classifier(predicted);
    CHECK(attribute_accuracy(classifier, images, labels) == doctest::Approx(0.75));
  }

  SUBCASE("the rule-based decoder is exact on synthetic data") {
    SyntheticSpec spec;
    spec.resolution = 32;
    spec.num_samples = 40;
    spec.seed = 12;
    auto records = generate_synthetic_dataset(spec);
    std::vector<std::size_t> all(records.size());
    std::iota(all.begin(), all.end(), 0);
    RuleBasedAttributeDecoder decoder(spec);
    CHECK(attribute_accuracy(decoder, stack_images(records, all), stack_attrs(records, all)) ==
          doctest::Approx(1.0));
  }
}
