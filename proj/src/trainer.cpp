#include "fairtranslate/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fairtranslate/checkpoint.hpp"
#include "fairtranslate/common.hpp"

namespace fs = std::filesystem;

namespace fairtranslate {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void pack_config_meta(Checkpoint& ckpt, const TrainConfig& config) {
  ckpt.meta["gen.resolution"] = std::to_string(config.generator.resolution);
  ckpt.meta["gen.num_attrs"] = std::to_string(config.generator.num_attrs);
  ckpt.meta["gen.base_channels"] = std::to_string(config.generator.base_channels);
  ckpt.meta["gen.res_blocks"] = std::to_string(config.generator.res_blocks);
  ckpt.meta["gen.tr_fraction"] = format_double(config.generator.tr_fraction);
  ckpt.meta["disc.base_channels"] = std::to_string(config.discriminator.base_channels);
  ckpt.meta["disc.num_layers"] = std::to_string(config.discriminator.num_layers);
  ckpt.meta["tac_hidden"] = std::to_string(config.tac_hidden);
}

GeneratorConfig generator_config_from_meta(const Checkpoint& ckpt) {
  GeneratorConfig gc;
  gc.resolution = static_cast<int>(ckpt.meta_int("gen.resolution"));
  gc.num_attrs = static_cast<int>(ckpt.meta_int("gen.num_attrs"));
  gc.base_channels = static_cast<int>(ckpt.meta_int("gen.base_channels"));
  gc.res_blocks = static_cast<int>(ckpt.meta_int("gen.res_blocks"));
  gc.tr_fraction = ckpt.meta_double("gen.tr_fraction");
  return gc;
}

}  // namespace

void TrainConfig::validate() const {
  if (lr_g <= 0 || lr_d <= 0) throw ValidationError("lr", "learning rates must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw ValidationError("betas", "must lie in [0,1)");
  }
  if (batch_size < 2) throw ValidationError("batch_size", "must be at least 2");
  if (epochs < 1) throw ValidationError("epochs", "must be positive");
  if (lr_decay_every < 1) throw ValidationError("lr_decay_every", "must be positive");
  if (lr_decay_factor <= 0 || lr_decay_factor > 1) {
    throw ValidationError("lr_decay_factor", "must lie in (0,1]");
  }
  if (critic_steps_per_gen < 1) throw ValidationError("critic_steps_per_gen", "must be >= 1");
  if (attr_policy != "flip_one" && attr_policy != "random" && attr_policy != "permute") {
    throw ValidationError("attr_policy", "must be flip_one, random, or permute");
  }
  weights.validate();
  generator.validate();
  discriminator.validate();
  if (generator.resolution != discriminator.resolution) {
    throw ValidationError("resolution", "generator and discriminator disagree");
  }
  if (generator.num_attrs != discriminator.num_attrs) {
    throw ValidationError("num_attrs", "generator and discriminator disagree");
  }
}

TrainState TrainState::create(const TrainConfig& config) {
  config.validate();
  torch::manual_seed(config.seed);

  TrainState state;
  state.gen = Generator(config.generator);
  state.disc = Discriminator(config.discriminator);
  state.tac1 = TargetAttributeClassifier(TacRole::TargetRelevant, config.generator.tr_channels(),
                                         config.generator.num_attrs, config.tac_hidden);
  state.tac2 = TargetAttributeClassifier(TacRole::TargetUnrelated, config.generator.tu_channels(),
                                         config.generator.num_attrs, config.tac_hidden);
  state.opt_g = std::make_unique<Adam>(state.gen->parameters(),
                                       AdamOptions{config.lr_g, config.beta1, config.beta2, 1e-8});
  state.opt_d = std::make_unique<Adam>(state.disc->parameters(),
                                       AdamOptions{config.lr_d, config.beta1, config.beta2, 1e-8});
  state.opt_t1 = std::make_unique<Adam>(state.tac1->parameters(),
                                        AdamOptions{config.lr_g, config.beta1, config.beta2, 1e-8});
  state.opt_t2 = std::make_unique<Adam>(state.tac2->parameters(),
                                        AdamOptions{config.lr_g, config.beta1, config.beta2, 1e-8});
  state.rng = RngStream(RngStream::mix(config.seed, 0x7EA1));
  return state;
}

void TrainState::save(const std::string& path, const TrainConfig& config) const {
  Checkpoint ckpt;
  ckpt.role = "train_state";
  pack_config_meta(ckpt, config);
  ckpt.meta["epoch"] = std::to_string(epoch);
  ckpt.meta["global_step"] = std::to_string(global_step);
  ckpt.meta["rng"] = rng.serialize();
  pack_module(ckpt, "gen.", *gen);
  pack_module(ckpt, "disc.", *disc);
  pack_module(ckpt, "tac1.", *tac1);
  pack_module(ckpt, "tac2.", *tac2);
  opt_g->pack_state(ckpt, "adam_g.");
  opt_d->pack_state(ckpt, "adam_d.");
  opt_t1->pack_state(ckpt, "adam_t1.");
  opt_t2->pack_state(ckpt, "adam_t2.");
  save_checkpoint(path, ckpt);
}

TrainState TrainState::load(const std::string& path, const TrainConfig& config) {
  auto ckpt = load_checkpoint(path, "train_state");
  const auto saved = generator_config_from_meta(ckpt);
  if (saved.resolution != config.generator.resolution ||
      saved.num_attrs != config.generator.num_attrs ||
      saved.base_channels != config.generator.base_channels ||
      saved.res_blocks != config.generator.res_blocks) {
    throw FormatError("checkpoint " + path + " was produced with a different model config");
  }

  auto state = create(config);
  unpack_module(ckpt, "gen.", *state.gen);
  unpack_module(ckpt, "disc.", *state.disc);
  unpack_module(ckpt, "tac1.", *state.tac1);
  unpack_module(ckpt, "tac2.", *state.tac2);
  state.opt_g->unpack_state(ckpt, "adam_g.");
  state.opt_d->unpack_state(ckpt, "adam_d.");
  state.opt_t1->unpack_state(ckpt, "adam_t1.");
  state.opt_t2->unpack_state(ckpt, "adam_t2.");
  state.epoch = ckpt.meta_int("epoch");
  state.global_step = ckpt.meta_int("global_step");
  state.rng.deserialize(ckpt.meta_str("rng"));
  return state;
}

torch::Tensor sample_target_attributes(const torch::Tensor& attrs, RngStream& rng,
                                       const std::string& policy) {
  if (attrs.dim() != 2) throw ValidationError("attrs", "expected (B,K)");
  const auto b = attrs.size(0);
  const auto k = attrs.size(1);
  auto out = attrs.clone();

  if (policy == "flip_one") {
    for (std::int64_t i = 0; i < b; ++i) {
      const int j = rng.uniform_int(static_cast<int>(k));
      out[i][j] = 1.0f - out[i][j].item<float>();
    }
  } else if (policy == "random") {
    for (std::int64_t i = 0; i < b; ++i) {
      for (std::int64_t j = 0; j < k; ++j) out[i][j] = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    }
  } else if (policy == "permute") {
    std::vector<std::int64_t> perm(b);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.uniform_int(static_cast<int>(i))]);
    }
    auto idx = torch::from_blob(perm.data(), {b}, torch::kInt64).clone();
    out = attrs.index_select(0, idx);
  } else {
    throw ValidationError("attr_policy", "unknown policy '" + policy + "'");
  }
  return out;
}

LossReport train_step(TrainState& state, const Batch& batch, PacModel& pac,
                      const FeatureEmbedder& embedder, const TrainConfig& config) {
  const auto& w = config.weights;
  const auto x = batch.images;
  const auto a_i = batch.attrs;

  auto a_t = sample_target_attributes(a_i, state.rng, config.attr_policy);

  // Fake batch for the critic updates; the generator is untouched while the
  // critic trains, so one forward suffices.
  torch::Tensor x_fake;
  {
    torch::NoGradGuard no_grad;
    x_fake = state.gen->translate(x, a_t);
  }

  std::map<std::string, double> diagnostics;
  for (int c = 0; c < config.critic_steps_per_gen; ++c) {
    state.opt_d->zero_grad();
    auto parts = critic_loss(state.disc, x, a_i, x_fake, w.gp, state.rng);
    parts.total.backward();
    state.opt_d->step();
    if (c + 1 == config.critic_steps_per_gen) {
      diagnostics["wasserstein"] = parts.wasserstein.item<double>();
      diagnostics["gp"] = parts.penalty.item<double>();
      diagnostics["d_attr_ce"] = parts.real_attr_ce.item<double>();
      diagnostics["d_total"] = parts.total.item<double>();
    }
  }

  // Generator update.
  state.opt_g->zero_grad();
  auto latents = state.gen->encode(x, a_t);
  auto x_t = state.gen->decode(latents);

  auto adv = generator_adversarial_loss(state.disc, x_t, a_t);
  auto rec = reconstruction_loss(state.gen, x, a_i, x_t);
  auto frl = fair_representation_loss(state.tac1, state.tac2, latents, a_t);

  auto zero = torch::zeros({}, x.options());
  auto padl = w.pad > 0 ? protected_attribute_distance_loss(pac, x, x_t) : zero;
  PerceptualLossParts perc{zero, zero};
  if (w.percept > 0) perc = perceptual_loss(embedder, x, x_t, rec.cycled);

  auto generator_total = w.adv * adv.adversarial + w.cls * adv.attr_ce +
                         w.rec * (rec.cycle + rec.identity) +
                         w.frl * (frl.tac1_nll + frl.tac2_loglik) + w.pad * padl +
                         w.percept * (perc.content + perc.style);

  std::map<std::string, double> terms{
      {"adv", adv.adversarial.item<double>()},
      {"cls", adv.attr_ce.item<double>()},
      {"cycle", rec.cycle.item<double>()},
      {"identity", rec.identity.item<double>()},
      {"frl_tac1", frl.tac1_nll.item<double>()},
      {"frl_tac2", frl.tac2_loglik.item<double>()},
      {"padl", padl.item<double>()},
      {"content", perc.content.item<double>()},
      {"style", perc.style.item<double>()},
  };
  // Throws TrainingDivergence on non-finite terms before any state is stepped.
  auto report = total_generator_loss(w, terms, state.global_step);
  report.diagnostics = std::move(diagnostics);

  generator_total.backward();
  state.opt_g->step();

  // TAC updates on detached latents: TAC1 descends its NLL, TAC2 ascends its
  // log-likelihood (equivalently descends NLL on its own parameters).
  LatentPair detached{latents.tr.detach(), latents.tu.detach()};
  state.opt_t1->zero_grad();
  binary_attr_nll(tac_predict(state.tac1, detached), a_t).backward();
  state.opt_t1->step();

  state.opt_t2->zero_grad();
  binary_attr_nll(tac_predict(state.tac2, detached), a_t).backward();
  state.opt_t2->step();

  ++state.global_step;
  return report;
}

TrainResult train(const TrainConfig& config, const std::vector<DatasetRecord>& records,
                  PacModel& pac, const std::string& resume_from, const EpochCallback& on_epoch) {
  config.validate();
  if (records.empty()) throw ValidationError("dataset", "no records to train on");
  if (records.front().target_attrs.size(0) != config.generator.num_attrs) {
    throw ValidationError("num_attrs", "dataset attribute count does not match the model");
  }
  if (config.threads > 0) torch::set_num_threads(config.threads);

  pac->freeze();
  PacPerceptualEmbedder embedder(pac);

  auto state = resume_from.empty() ? TrainState::create(config)
                                   : TrainState::load(resume_from, config);

  const auto run_dir = fs::path(config.checkpoint_dir) / config.run_id;
  fs::create_directories(run_dir);
  std::ofstream log_file(run_dir / "training_log.jsonl", std::ios::app);
  std::ofstream epochs_csv;
  const auto epochs_csv_path = run_dir / "epochs.csv";
  const bool fresh_csv = !fs::exists(epochs_csv_path) || resume_from.empty();
  epochs_csv.open(epochs_csv_path, fresh_csv ? std::ios::trunc : std::ios::app);
  if (fresh_csv) {
    epochs_csv << "epoch,total,adv,cls,cycle,identity,frl_tac1,frl_tac2,padl,content,style\n";
  }

  TrainResult result;
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (std::int64_t epoch = state.epoch; epoch < config.epochs; ++epoch) {
    // The order is a function of the rng state alone, so resumed runs shuffle
    // exactly like uninterrupted ones.
    std::vector<std::size_t> indices(records.size());
    std::iota(indices.begin(), indices.end(), 0);
    for (std::size_t i = indices.size(); i > 1; --i) {
      std::swap(indices[i - 1], indices[state.rng.uniform_int(static_cast<int>(i))]);
    }

    std::map<std::string, double> sums;
    double total_sum = 0.0;
    std::size_t steps = 0;

    for (std::size_t start = 0; start < indices.size(); start += bs) {
      const auto end = std::min(indices.size(), start + bs);
      std::vector<std::size_t> batch_idx(indices.begin() + start, indices.begin() + end);
      Batch batch{stack_images(records, batch_idx), stack_attrs(records, batch_idx)};

      auto report = train_step(state, batch, pac, embedder, config);
      if (state.global_step % std::max(1, config.log_every) == 0) {
        log_file << report.to_json_line() << "\n";
      }
      for (const auto& [k, v] : report.terms) sums[k] += v;
      total_sum += report.total;
      ++steps;
      result.reports.push_back(std::move(report));
    }

    state.epoch = epoch + 1;

    epochs_csv << state.epoch << "," << total_sum / std::max<std::size_t>(1, steps);
    for (const char* key : {"adv", "cls", "cycle", "identity", "frl_tac1", "frl_tac2", "padl",
                            "content", "style"}) {
      epochs_csv << "," << sums[key] / std::max<std::size_t>(1, steps);
    }
    epochs_csv << "\n";
    epochs_csv.flush();
    log_file.flush();

    // Stepped decay: the interval comes from the optimization recipe, the
    // factor is configurable.
    if (state.epoch % config.lr_decay_every == 0) {
      state.opt_g->set_lr(state.opt_g->lr() * config.lr_decay_factor);
      state.opt_d->set_lr(state.opt_d->lr() * config.lr_decay_factor);
      state.opt_t1->set_lr(state.opt_t1->lr() * config.lr_decay_factor);
      state.opt_t2->set_lr(state.opt_t2->lr() * config.lr_decay_factor);
    }

    const auto ckpt_path = run_dir / ("epoch_" + std::to_string(state.epoch) + ".ckpt");
    state.save(ckpt_path.string(), config);
    std::ofstream latest(run_dir / "latest");
    latest << ckpt_path.filename().string() << "\n";
    result.epoch_checkpoints.push_back(ckpt_path.string());
    result.last_checkpoint = ckpt_path.string();

    if (on_epoch && !result.reports.empty()) on_epoch(static_cast<int>(state.epoch), result.reports.back());
  }
  return result;
}

void save_train_state(const std::string& path, const TrainState& state,
                      const TrainConfig& config) {
  state.save(path, config);
}

Generator load_generator(const std::string& path) {
  auto ckpt = load_checkpoint(path, "train_state");
  Generator gen(generator_config_from_meta(ckpt));
  unpack_module(ckpt, "gen.", *gen);
  gen->eval();
  return gen;
}

}  // namespace fairtranslate
