#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fairtranslate/checkpoint.hpp"
#include "fairtranslate/dataset.hpp"
#include "fairtranslate/pac.hpp"
#include "test_helpers.hpp"

using namespace fairtranslate;

namespace {

PacConfig tiny_config() {
  PacConfig config;
  config.resolution = 32;
  config.base_channels = 4;
  config.seed = 1;
  return config;
}

PacBatchLabels make_labels(const std::vector<std::int64_t>& gender,
                           const std::vector<std::int64_t>& domain) {
  PacBatchLabels labels;
  labels.gender = torch::tensor(gender, torch::kInt64);
  const auto b = labels.gender.size(0);
  labels.age = torch::zeros({b}, torch::kInt64);
  labels.race = torch::zeros({b}, torch::kInt64);
  labels.gender_mask = torch::ones({b}, torch::kBool);
  labels.age_mask = torch::zeros({b}, torch::kBool);
  labels.race_mask = torch::zeros({b}, torch::kBool);
  labels.domain = torch::tensor(domain, torch::kInt64);
  return labels;
}

}  // namespace

TEST_CASE("gradient reversal is the identity forward and negates backward") {
  auto x = torch::randn({3, 4}, torch::requires_grad());

  auto y = grad_reverse(x, 1.0);
  CHECK(torch::equal(y, x));

  auto upstream = torch::randn({3, 4});
  y.backward(upstream);
  CHECK(torch::allclose(x.grad(), -upstream));

  x.mutable_grad() = torch::Tensor();
  grad_reverse(x, 2.5).sum().backward();
  CHECK(torch::allclose(x.grad(), torch::full({3, 4}, -2.5f)));

  x.mutable_grad() = torch::Tensor();
  grad_reverse(x, 0.0).sum().backward();
  CHECK(torch::allclose(x.grad(), torch::zeros({3, 4})));

  CHECK_THROWS_AS(grad_reverse(x, -1.0), ValidationError);
}

TEST_CASE("pac forward produces head-shaped outputs from the shared feature") {
  torch::manual_seed(0);
  PacModel model(tiny_config());
  model->eval();
  auto images = torch::rand({4, 3, 32, 32}) * 2 - 1;
  auto out = model->forward(images);

  CHECK(out.features.sizes() == torch::IntArrayRef({4, model->feature_dim()}));
  CHECK(out.gender.sizes() == torch::IntArrayRef({4, 2}));
  CHECK(out.age.sizes() == torch::IntArrayRef({4, 6}));
  CHECK(out.race.sizes() == torch::IntArrayRef({4, 5}));
  CHECK(out.domain.sizes() == torch::IntArrayRef({4, 2}));

  CHECK_THROWS_AS(model->forward(torch::rand({2, 3, 16, 16})), ValidationError);
}

TEST_CASE("identical images in one eval batch give identical feature rows") {
  torch::manual_seed(3);
  PacModel model(tiny_config());
  model->eval();
  auto one = torch::rand({1, 3, 32, 32}) * 2 - 1;
  auto batch = torch::cat({one, torch::rand({2, 3, 32, 32}) * 2 - 1, one});
  auto h = model->forward(batch).features;
  CHECK(torch::equal(h[0], h[3]));
}

TEST_CASE("an untrained domain head sits near chance on balanced batches") {
  // Monte Carlo over random initializations.
  double accuracy_sum = 0.0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    torch::manual_seed(100 + t);
    PacModel model(tiny_config());
    model->eval();
    auto images = torch::rand({16, 3, 32, 32}) * 2 - 1;
    auto domain = torch::cat({torch::zeros({8}, torch::kInt64), torch::ones({8}, torch::kInt64)});
    auto pred = model->forward(images).domain.argmax(1);
    accuracy_sum += pred.eq(domain).to(torch::kFloat32).mean().item<double>();
  }
  const double mean_accuracy = accuracy_sum / trials;
  CHECK(mean_accuracy > 0.35);
  CHECK(mean_accuracy < 0.65);
}

TEST_CASE("pac loss matches hand-computed cross entropies") {
  PacOutputs outputs;
  const int b = 2;
  // Perfectly confident, correct gender predictions.
  outputs.gender = torch::tensor({{100.0f, -100.0f}, {-100.0f, 100.0f}});
  outputs.age = torch::zeros({b, 6});
  outputs.race = torch::zeros({b, 5});
  outputs.domain = torch::zeros({b, 2});
  outputs.features = torch::zeros({b, 8});

  auto labels = make_labels({0, 1}, {0, 1});

  SUBCASE("confident correct heads contribute zero") {
    auto loss = pac_loss(outputs, labels, 1.0);
    CHECK(loss.per_term["gender"] == doctest::Approx(0.0).epsilon(1e-6));
  }

  SUBCASE("uniform logits give ln 2") {
    outputs.gender = torch::zeros({b, 2});
    auto loss = pac_loss(outputs, labels, 1.0);
    CHECK(loss.per_term["gender"] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(loss.per_term["domain"] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }

  SUBCASE("reported total is the exact term composition") {
    outputs.gender = torch::randn({b, 2});
    outputs.age = torch::randn({b, 6});
    outputs.race = torch::randn({b, 5});
    labels.age_mask = torch::ones({b}, torch::kBool);
    labels.race_mask = torch::ones({b}, torch::kBool);
    const double lambda = 0.7;
    auto loss = pac_loss(outputs, labels, lambda);
    const double expected = loss.per_term["gender"] + loss.per_term["age"] +
                            loss.per_term["race"] - lambda * loss.per_term["domain"];
    CHECK(loss.total == expected);
  }
}

TEST_CASE("masked records contribute nothing to the protected terms") {
  torch::manual_seed(5);
  PacModel model(tiny_config());
  model->eval();

  // Source-only batch.
  auto src_images = torch::rand({4, 3, 32, 32}) * 2 - 1;
  auto src_out = model->forward(src_images);
  auto src_labels = make_labels({0, 1, 0, 1}, {0, 0, 0, 0});
  auto src_loss = pac_loss(src_out, src_labels, 1.0);

  // Mixed batch: same source rows plus unlabeled target rows.
  auto tgt_images = torch::rand({4, 3, 32, 32}) * 2 - 1;
  auto mixed = torch::cat({src_images, tgt_images});
  auto mixed_out = model->forward(mixed);
  PacBatchLabels mixed_labels;
  mixed_labels.gender = torch::tensor({0L, 1L, 0L, 1L, 0L, 0L, 0L, 0L});
  mixed_labels.age = torch::zeros({8}, torch::kInt64);
  mixed_labels.race = torch::zeros({8}, torch::kInt64);
  mixed_labels.gender_mask =
      torch::tensor({true, true, true, true, false, false, false, false});
  mixed_labels.age_mask = torch::zeros({8}, torch::kBool);
  mixed_labels.race_mask = torch::zeros({8}, torch::kBool);
  mixed_labels.domain = torch::tensor({0L, 0L, 0L, 0L, 1L, 1L, 1L, 1L});
  auto mixed_loss = pac_loss(mixed_out, mixed_labels, 1.0);

  CHECK(mixed_loss.per_term["gender"] ==
        doctest::Approx(src_loss.per_term["gender"]).epsilon(1e-6));
  CHECK(mixed_loss.per_term["age"] == 0.0);
  CHECK(mixed_loss.per_term["race"] == 0.0);
}

TEST_CASE("a batch with every term masked is rejected") {
  PacOutputs outputs;
  outputs.gender = torch::zeros({2, 2});
  outputs.age = torch::zeros({2, 6});
  outputs.race = torch::zeros({2, 5});
  outputs.domain = torch::zeros({2, 2});

  PacBatchLabels labels;
  labels.gender = torch::zeros({2}, torch::kInt64);
  labels.age = torch::zeros({2}, torch::kInt64);
  labels.race = torch::zeros({2}, torch::kInt64);
  labels.gender_mask = torch::zeros({2}, torch::kBool);
  labels.age_mask = torch::zeros({2}, torch::kBool);
  labels.race_mask = torch::zeros({2}, torch::kBool);
  labels.domain = torch::Tensor();

  CHECK_THROWS_AS(pac_loss(outputs, labels, 1.0), ValidationError);
}

TEST_CASE("reversal gradient equals minus lambda times the unreversed gradient") {
  // Finite differences on a double-precision model.
  PacConfig config;
  config.resolution = 16;
  config.base_channels = 1;
  PacModel model(config);
  model->to(torch::kFloat64);
  model->eval();

  auto images = (torch::rand({2, 3, 16, 16}, torch::kFloat64) * 2 - 1);
  auto domain = torch::tensor({0L, 1L});
  const double lambda = 1.7;

  // Analytic gradient through the reversal layer.
  model->set_grl_lambda(lambda);
  auto ce = torch::nn::functional::cross_entropy(model->forward(images).domain, domain);
  model->zero_grad();
  ce.backward();
  auto encoder_param = model->named_parameters()["block1.0.weight"];
  auto reversed_grad = encoder_param.grad().clone().view({-1});

  // Central finite difference of the domain CE itself; forward values do not
  // depend on lambda, so this is the gradient with the reversal removed.
  auto param_data = encoder_param.detach().view({-1});
  const double h = 1e-5;
  for (int idx : {0, 3, 17}) {
    const double original = param_data[idx].item<double>();
    auto eval_ce = [&](double value) {
      torch::NoGradGuard no_grad;
      param_data[idx] = value;
      const double result =
          torch::nn::functional::cross_entropy(model->forward(images).domain, domain)
              .item<double>();
      param_data[idx] = original;
      return result;
    };
    const double fd = (eval_ce(original + h) - eval_ce(original - h)) / (2 * h);
    const double reversed_value = reversed_grad[idx].item<double>();
    CHECK(reversed_value == doctest::Approx(-lambda * fd).epsilon(1e-4));
  }
}

TEST_CASE("feature extraction is pure and version-checked on disk") {
  testutil::TempDir tmp("pac_ckpt");
  torch::manual_seed(2);
  PacModel model(tiny_config());

  auto images = torch::rand({3, 3, 32, 32}) * 2 - 1;
  CHECK_THROWS_AS(extract_protected_features(model, images), ValidationError);

  const auto before = parameter_fingerprint(*model);
  auto h1 = extract_protected_features(model, images, /*allow_untrained=*/true);
  auto h2 = extract_protected_features(model, images, /*allow_untrained=*/true);
  CHECK(torch::equal(h1, h2));
  CHECK(parameter_fingerprint(*model) == before);
  CHECK(h1.sizes() == torch::IntArrayRef({3, model->feature_dim()}));

  model->mark_trained(true);
  const auto path = (tmp.path() / "pac.ckpt").string();
  save_pac(path, model);
  auto loaded = load_pac(path);
  CHECK(loaded->is_trained());
  CHECK(parameter_fingerprint(*loaded) == before);
  auto h3 = extract_protected_features(loaded, images);
  CHECK(torch::allclose(h1, h3));
}

TEST_CASE("pac training runs, logs history, and needs labeled sources") {
  SyntheticSpec spec;
  spec.resolution = 32;
  spec.num_samples = 64;
  spec.seed = 13;
  auto source = generate_synthetic_dataset(spec);
  spec.domain = 1;
  spec.seed = 14;
  auto target = generate_synthetic_dataset(spec);

  PacConfig config = tiny_config();
  config.epochs = 1;
  config.batch_size = 16;

  PacTrainHistory history;
  auto model = train_pac(config, source, target, &history);
  CHECK(model->is_trained());
  CHECK(history.epochs.size() == 1);

  testutil::TempDir tmp("pac_hist");
  const auto csv = (tmp.path() / "history.csv").string();
  history.write_csv(csv);
  std::ifstream is(csv);
  std::string header;
  std::getline(is, header);
  CHECK(header == "epoch,gender_acc,age_acc,race_acc,domain_acc,loss_protected,loss_domain");

  for (auto& rec : source) rec.protected_labels = {};
  CHECK_THROWS_AS(train_pac(config, source, target, nullptr), ValidationError);
}
