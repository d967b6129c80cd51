#include <torch/torch.h>

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>

#include <nlohmann/json.hpp>

#include "fairtranslate/classify.hpp"
#include "fairtranslate/common.hpp"
#include "fairtranslate/config.hpp"
#include "fairtranslate/dataset.hpp"
#include "fairtranslate/evaluate.hpp"
#include "fairtranslate/metrics.hpp"
#include "fairtranslate/pac.hpp"
#include "fairtranslate/trainer.hpp"

namespace fs = std::filesystem;
using namespace fairtranslate;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string device = "cpu";
  int threads = 0;
};

RunConfig load_config(const GlobalArgs& args) {
  RunConfig config;
  if (!args.config_path.empty()) config = RunConfig::from_file(args.config_path);
  if (args.seed) config.set("general", "seed", std::to_string(*args.seed));
  return config;
}

std::uint64_t resolved_seed(const RunConfig& config, const std::string& section) {
  if (config.has(section, "seed")) return config.get_u64(section, "seed", 0);
  return config.get_u64("general", "seed", 0);
}

void apply_device(const GlobalArgs& args) {
  if (args.device != "cpu") {
    throw ValidationError("device", "'" + args.device + "' is not available in this build; use cpu");
  }
  if (args.threads > 0) torch::set_num_threads(args.threads);
}

void write_resolved(const RunConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  config.write((fs::path(out_dir) / "resolved_config.cfg").string());
}

SyntheticSpec synthetic_spec_from_config(const RunConfig& config) {
  SyntheticSpec spec;
  spec.resolution = config.get_int("data", "resolution", spec.resolution);
  spec.num_samples = config.get_int("data", "num_samples", spec.num_samples);
  spec.correlation = config.get_double("data", "correlation", spec.correlation);
  spec.domain = config.get_int("data", "domain", spec.domain);
  spec.seed = resolved_seed(config, "data");

  auto parse_list = [](const std::string& csv) {
    std::vector<std::string> items;
    std::string item;
    std::istringstream ss(csv);
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) items.push_back(item);
    }
    return items;
  };
  if (config.has("data", "protected_factors")) {
    spec.protected_factors.clear();
    for (const auto& item : parse_list(config.get_str("data", "protected_factors", ""))) {
      auto c1 = item.find(':');
      auto c2 = item.find(':', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos) {
        throw ValidationError("data.protected_factors", "expected name:cardinality:kind");
      }
      spec.protected_factors.push_back(
          {item.substr(0, c1), std::stoi(item.substr(c1 + 1, c2 - c1 - 1)), item.substr(c2 + 1)});
    }
  }
  if (config.has("data", "target_factors")) {
    spec.target_factors.clear();
    for (const auto& item : parse_list(config.get_str("data", "target_factors", ""))) {
      auto c1 = item.find(':');
      if (c1 == std::string::npos) {
        throw ValidationError("data.target_factors", "expected name:kind");
      }
      spec.target_factors.push_back({item.substr(0, c1), item.substr(c1 + 1)});
    }
  }
  return spec;
}

PacConfig pac_config_from_config(const RunConfig& config) {
  PacConfig pc;
  pc.resolution = config.get_int("pac", "resolution", pc.resolution);
  pc.base_channels = config.get_int("pac", "base_channels", pc.base_channels);
  pc.gender_classes = config.get_int("pac", "gender_classes", pc.gender_classes);
  pc.age_classes = config.get_int("pac", "age_classes", pc.age_classes);
  pc.race_classes = config.get_int("pac", "race_classes", pc.race_classes);
  pc.grl_lambda = config.get_double("pac", "grl_lambda", pc.grl_lambda);
  pc.lambda_ramp = config.get_bool("pac", "lambda_ramp", pc.lambda_ramp);
  pc.lr = config.get_double("pac", "lr", pc.lr);
  pc.batch_size = config.get_int("pac", "batch_size", pc.batch_size);
  pc.epochs = config.get_int("pac", "epochs", pc.epochs);
  pc.val_fraction = config.get_double("pac", "val_fraction", pc.val_fraction);
  pc.seed = resolved_seed(config, "pac");
  return pc;
}

TrainConfig train_config_from_config(const RunConfig& config, int num_attrs, int resolution) {
  TrainConfig tc;
  tc.lr_g = config.get_double("gan", "lr_g", tc.lr_g);
  tc.lr_d = config.get_double("gan", "lr_d", tc.lr_d);
  tc.beta1 = config.get_double("gan", "beta1", tc.beta1);
  tc.beta2 = config.get_double("gan", "beta2", tc.beta2);
  tc.batch_size = config.get_int("gan", "batch_size", tc.batch_size);
  tc.epochs = config.get_int("gan", "epochs", tc.epochs);
  tc.lr_decay_every = config.get_int("gan", "lr_decay_every", tc.lr_decay_every);
  tc.lr_decay_factor = config.get_double("gan", "lr_decay_factor", tc.lr_decay_factor);
  tc.critic_steps_per_gen = config.get_int("gan", "critic_steps_per_gen", tc.critic_steps_per_gen);
  tc.weights.adv = config.get_double("gan", "w_adv", tc.weights.adv);
  tc.weights.cls = config.get_double("gan", "w_cls", tc.weights.cls);
  tc.weights.rec = config.get_double("gan", "w_rec", tc.weights.rec);
  tc.weights.frl = config.get_double("gan", "w_frl", tc.weights.frl);
  tc.weights.pad = config.get_double("gan", "w_pad", tc.weights.pad);
  tc.weights.percept = config.get_double("gan", "w_percept", tc.weights.percept);
  tc.weights.gp = config.get_double("gan", "w_gp", tc.weights.gp);
  tc.seed = resolved_seed(config, "gan");
  tc.attr_policy = config.get_str("gan", "attr_policy", tc.attr_policy);
  tc.log_every = config.get_int("gan", "log_every", tc.log_every);
  tc.threads = config.get_int("gan", "threads", tc.threads);
  tc.run_id = config.get_str("gan", "run_id", tc.run_id);
  tc.tac_hidden = config.get_int("gan", "tac_hidden", tc.tac_hidden);

  tc.generator.resolution = resolution;
  tc.generator.num_attrs = num_attrs;
  tc.generator.base_channels = config.get_int("gan", "g_base_channels", tc.generator.base_channels);
  tc.generator.res_blocks = config.get_int("gan", "res_blocks", tc.generator.res_blocks);
  tc.generator.tr_fraction = config.get_double("gan", "tr_fraction", tc.generator.tr_fraction);
  tc.discriminator.resolution = resolution;
  tc.discriminator.num_attrs = num_attrs;
  tc.discriminator.base_channels =
      config.get_int("gan", "d_base_channels", tc.discriminator.base_channels);
  tc.discriminator.num_layers = config.get_int("gan", "d_layers", tc.discriminator.num_layers);
  return tc;
}

std::string cache_dir() {
  if (const char* env = std::getenv("FAIRTRANSLATE_CACHE")) return env;
  return "";
}

std::vector<DatasetRecord> load_dir(const std::string& dir, std::optional<Split> split,
                                    int resolution, int domain, LoadReport* report = nullptr) {
  LoadOptions options;
  options.split = split;
  options.resolution = resolution;
  options.domain_label = domain;
  return load_annotated_dataset(dir, (fs::path(dir) / "annotations.csv").string(), options,
                                report);
}

std::vector<std::string> annotation_names(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "annotations.csv");
  if (!is) throw FormatError("cannot open annotations.csv under " + dir);
  std::string header;
  std::getline(is, header);
  std::vector<std::string> names;
  std::istringstream ss(header);
  std::string cell;
  while (std::getline(ss, cell, ',')) names.push_back(cell);
  if (names.empty() || names[0] != "filename") {
    throw FormatError("annotations.csv under " + dir + " is missing its header");
  }
  names.erase(names.begin());
  while (!names.empty() &&
         (names.back() == "gender" || names.back() == "age" || names.back() == "race")) {
    names.pop_back();
  }
  return names;
}

int cmd_synth_data(const GlobalArgs& args, int n, int resolution, double correlation,
                   int domain) {
  auto config = load_config(args);
  if (n > 0) config.set("data", "num_samples", std::to_string(n));
  if (resolution > 0) config.set("data", "resolution", std::to_string(resolution));
  if (correlation >= 0) config.set("data", "correlation", std::to_string(correlation));
  if (domain >= 0) config.set("data", "domain", std::to_string(domain));

  auto spec = synthetic_spec_from_config(config);
  spec.validate();

  auto records = generate_synthetic_dataset(spec);
  std::vector<std::string> attr_names;
  for (const auto& f : spec.target_factors) attr_names.push_back(f.name);
  write_dataset(args.out_dir, records, attr_names, /*include_protected_columns=*/true);
  spec.write((fs::path(args.out_dir) / "synthetic_spec.cfg").string());
  write_resolved(config, args.out_dir);
  std::cout << "wrote " << records.size() << " records to " << args.out_dir << "\n";
  return kExitOk;
}

int cmd_train_pac(const GlobalArgs& args, const std::string& source_dir,
                  const std::string& target_dir) {
  auto config = load_config(args);
  auto pc = pac_config_from_config(config);

  auto source = load_dir(source_dir, std::nullopt, pc.resolution, 0);
  std::vector<DatasetRecord> target;
  if (!target_dir.empty()) target = load_dir(target_dir, std::nullopt, pc.resolution, 1);

  PacTrainHistory history;
  auto model = train_pac(pc, source, target, &history);

  fs::create_directories(args.out_dir);
  save_pac((fs::path(args.out_dir) / "pac.ckpt").string(), model);
  history.write_csv((fs::path(args.out_dir) / "pac_history.csv").string());
  write_resolved(config, args.out_dir);

  if (!history.epochs.empty()) {
    const auto& last = history.epochs.back();
    std::cout << "final val accuracy: gender " << last.gender_acc << " age " << last.age_acc
              << " race " << last.race_acc << " domain " << last.domain_acc << "\n";
  }
  std::cout << "wrote " << (fs::path(args.out_dir) / "pac.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_train_gan(const GlobalArgs& args, const std::string& data_dir,
                  const std::string& pac_path_arg, bool resume) {
  auto config = load_config(args);

  std::string pac_path = pac_path_arg;
  if (pac_path.empty()) {
    const auto cache = cache_dir();
    if (!cache.empty() && fs::exists(fs::path(cache) / "pac.ckpt")) {
      pac_path = (fs::path(cache) / "pac.ckpt").string();
    } else {
      throw ValidationError("pac",
                            "no PAC checkpoint given; train one with `fairtranslate train-pac` "
                            "and pass it via --pac (or place pac.ckpt in $FAIRTRANSLATE_CACHE)");
    }
  }
  if (!fs::exists(pac_path)) {
    throw ValidationError("pac", pac_path + " does not exist; train one with "
                                            "`fairtranslate train-pac` first");
  }
  auto pac = load_pac(pac_path);

  const int resolution = pac->config().resolution;
  auto records = load_dir(data_dir, Split::Train, resolution, 1);
  if (records.empty()) throw ValidationError("data", "no training records under " + data_dir);
  const int num_attrs = static_cast<int>(records.front().target_attrs.size(0));

  auto tc = train_config_from_config(config, num_attrs, resolution);
  tc.checkpoint_dir = args.out_dir;

  std::string resume_from;
  if (resume) {
    const auto latest = fs::path(args.out_dir) / tc.run_id / "latest";
    if (!fs::exists(latest)) {
      throw ValidationError("resume", "no `latest` pointer under " + args.out_dir);
    }
    std::ifstream is(latest);
    std::string name;
    std::getline(is, name);
    resume_from = (fs::path(args.out_dir) / tc.run_id / name).string();
  }

  write_resolved(config, args.out_dir);
  auto result = train(tc, records, pac, resume_from, [](int epoch, const LossReport& last) {
    std::cout << "epoch " << epoch << " total " << last.total << "\n";
  });
  std::cout << "last checkpoint: " << result.last_checkpoint << "\n";
  return kExitOk;
}

torch::Tensor apply_edits(const torch::Tensor& attrs, const std::vector<std::string>& edits,
                          const std::vector<std::string>& attr_names) {
  auto a_t = attrs.clone();
  for (const auto& edit : edits) {
    if (edit.size() < 2 || (edit[0] != '+' && edit[0] != '-')) {
      throw ValidationError("edit", "'" + edit + "' must look like +name or -name");
    }
    const auto name = edit.substr(1);
    auto it = std::find(attr_names.begin(), attr_names.end(), name);
    if (it == attr_names.end()) {
      std::string valid;
      for (const auto& n : attr_names) valid += (valid.empty() ? "" : ", ") + n;
      throw ValidationError("edit", "unknown attribute '" + name + "'; valid names: " + valid);
    }
    const auto idx = static_cast<std::int64_t>(it - attr_names.begin());
    a_t.index_put_({torch::indexing::Slice(), idx}, edit[0] == '+' ? 1.0f : 0.0f);
  }
  return a_t;
}

std::string edit_suffix(const std::vector<std::string>& edits) {
  std::string suffix;
  for (const auto& e : edits) suffix += e;
  return suffix;
}

int cmd_translate(const GlobalArgs& args, const std::string& checkpoint,
                  const std::string& input_dir, const std::vector<std::string>& edits) {
  auto config = load_config(args);
  auto gen = load_generator(checkpoint);
  const int resolution = gen->config().resolution;

  auto attr_names = annotation_names(input_dir);
  auto records = load_dir(input_dir, std::nullopt, resolution, 0);
  if (records.empty()) throw ValidationError("input", "no records under " + input_dir);

  std::vector<std::size_t> all(records.size());
  std::iota(all.begin(), all.end(), 0);
  auto images = stack_images(records, all);
  auto attrs = stack_attrs(records, all);
  auto a_t = apply_edits(attrs, edits, attr_names);
  auto translated = translate_batched(gen, images, a_t);

  const auto image_dir = fs::path(args.out_dir) / "images";
  fs::create_directories(image_dir);
  std::vector<DatasetRecord> out_records;
  const auto suffix = edit_suffix(edits);
  for (std::size_t i = 0; i < records.size(); ++i) {
    DatasetRecord rec;
    rec.image = translated[static_cast<std::int64_t>(i)];
    rec.target_attrs = a_t[static_cast<std::int64_t>(i)];
    rec.protected_labels = records[i].protected_labels;
    auto stem = fs::path(records[i].filename).stem().string();
    rec.filename = stem + "__" + suffix + ".png";
    out_records.push_back(std::move(rec));
  }
  write_dataset(args.out_dir, out_records, attr_names, /*include_protected_columns=*/true);
  write_resolved(config, args.out_dir);
  std::cout << "translated " << out_records.size() << " images to " << args.out_dir << "\n";
  return kExitOk;
}

int cmd_evaluate(const GlobalArgs& args, const std::string& data_dir,
                 const std::string& checkpoint, const std::string& pac_path) {
  auto config = load_config(args);
  auto gen = load_generator(checkpoint);
  auto pac = load_pac(pac_path);
  const int resolution = pac->config().resolution;

  auto attr_names = annotation_names(data_dir);
  auto records = load_dir(data_dir, Split::Test, resolution, 0);
  if (records.size() < 4) {
    throw ValidationError("data", "test split under " + data_dir + " is too small");
  }

  EvalOptions options;
  options.kid_subsets = config.get_int("eval", "kid_subsets", options.kid_subsets);
  options.kid_subset_size = config.get_int("eval", "kid_subset_size", options.kid_subset_size);
  options.batch_size = config.get_int("eval", "batch_size", options.batch_size);
  options.seed = resolved_seed(config, "eval");

  // Synthetic datasets ship their rendering rules; use them as the oracle
  // attribute classifier. Otherwise train the small classifier on the train
  // split.
  std::unique_ptr<AttributeClassifier> classifier;
  const auto spec_path = fs::path(data_dir) / "synthetic_spec.cfg";
  if (fs::exists(spec_path)) {
    auto spec = SyntheticSpec::from_file(spec_path.string());
    spec.resolution = resolution;
    classifier = std::make_unique<RuleBasedAttributeDecoder>(spec);
  } else {
    FairClassifyConfig fc;
    fc.resolution = resolution;
    fc.seed = options.seed;
    auto train_records = load_dir(data_dir, Split::Train, resolution, 0);
    classifier = std::make_unique<TrainedAttributeClassifier>(
        train_attribute_classifier(fc, train_records, static_cast<int>(attr_names.size())));
  }

  PacImageEmbedder embedder(pac);
  auto report = evaluate_translation(gen, pac, embedder, *classifier, records, attr_names, options);

  fs::create_directories(args.out_dir);
  std::ofstream js(fs::path(args.out_dir) / "eval_report.json");
  js << report.to_json().dump(2) << "\n";
  write_resolved(config, args.out_dir);
  std::cout << report.to_table();
  return kExitOk;
}

int cmd_augment(const GlobalArgs& args, const std::string& checkpoint, const std::string& data_dir,
                const std::string& policy, const std::string& attr_name) {
  auto config = load_config(args);
  auto gen = load_generator(checkpoint);
  const int resolution = gen->config().resolution;

  auto attr_names = annotation_names(data_dir);
  auto records = load_dir(data_dir, std::nullopt, resolution, 0);
  if (records.empty()) throw ValidationError("data", "no records under " + data_dir);

  std::int64_t attr_index = 0;
  if (!attr_name.empty()) {
    auto it = std::find(attr_names.begin(), attr_names.end(), attr_name);
    if (it == attr_names.end()) {
      throw ValidationError("attr", "unknown attribute '" + attr_name + "'");
    }
    attr_index = it - attr_names.begin();
  }

  std::vector<std::size_t> all(records.size());
  std::iota(all.begin(), all.end(), 0);
  auto images = stack_images(records, all);
  auto attrs = stack_attrs(records, all);
  auto a_t = attrs.clone();
  a_t.index_put_({torch::indexing::Slice(), attr_index},
                 1.0f - a_t.index({torch::indexing::Slice(), attr_index}));
  auto translated = translate_batched(gen, images, a_t);

  std::vector<DatasetRecord> out_records;
  if (policy == "union") {
    out_records = records;
  } else if (policy != "generated-only") {
    throw ValidationError("policy", "must be union or generated-only");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    DatasetRecord rec;
    rec.image = translated[static_cast<std::int64_t>(i)];
    rec.target_attrs = a_t[static_cast<std::int64_t>(i)];
    rec.protected_labels = records[i].protected_labels;
    rec.filename = "gen_" + records[i].filename;
    out_records.push_back(std::move(rec));
  }
  write_dataset(args.out_dir, out_records, attr_names, /*include_protected_columns=*/true);
  write_resolved(config, args.out_dir);
  std::cout << "wrote " << out_records.size() << " records (" << policy << ") to "
            << args.out_dir << "\n";
  return kExitOk;
}

int cmd_fair_classify(const GlobalArgs& args, const std::string& data_dir,
                      const std::string& test_dir, const std::string& attr_name,
                      const std::vector<double>& rates) {
  auto config = load_config(args);

  if (!rates.empty()) {
    if (rates.size() != 4) {
      throw ValidationError("rates", "expected tpr_a,fpr_a,tpr_b,fpr_b");
    }
    const double eq_opp = equality_of_opportunity_from_rates(rates[0], rates[2]);
    const double odds = equalized_odds_from_rates(rates[0], rates[1], rates[2], rates[3]);
    nlohmann::json j{{"equality_of_opportunity", eq_opp}, {"equalized_odds", odds}};
    std::cout << j.dump(2) << "\n";
    if (!args.out_dir.empty()) {
      fs::create_directories(args.out_dir);
      std::ofstream os(fs::path(args.out_dir) / "fairness_report.json");
      os << j.dump(2) << "\n";
    }
    return kExitOk;
  }

  if (data_dir.empty() || test_dir.empty()) {
    throw ValidationError("data", "--data and --test are required unless --rates is given");
  }

  auto attr_names = annotation_names(data_dir);
  FairClassifyConfig fc;
  fc.resolution = config.get_int("fair", "resolution", 64);
  fc.base_channels = config.get_int("fair", "base_channels", fc.base_channels);
  fc.epochs = config.get_int("fair", "epochs", fc.epochs);
  fc.batch_size = config.get_int("fair", "batch_size", fc.batch_size);
  fc.lr = config.get_double("fair", "lr", fc.lr);
  fc.seed = resolved_seed(config, "fair");
  if (!attr_name.empty()) {
    auto it = std::find(attr_names.begin(), attr_names.end(), attr_name);
    if (it == attr_names.end()) {
      throw ValidationError("attr", "unknown attribute '" + attr_name + "'");
    }
    fc.attr_index = static_cast<int>(it - attr_names.begin());
  }

  auto train_records = load_dir(data_dir, std::nullopt, fc.resolution, 0);
  auto test_records = load_dir(test_dir, Split::Test, fc.resolution, 0);
  if (test_records.empty()) test_records = load_dir(test_dir, std::nullopt, fc.resolution, 0);

  auto report = fair_classify(fc, train_records, test_records);
  std::cout << report.to_json().dump(2) << "\n";
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    std::ofstream os(fs::path(args.out_dir) / "fairness_report.json");
    os << report.to_json().dump(2) << "\n";
    write_resolved(config, args.out_dir);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairness-aware image-to-image translation toolkit"};
  app.require_subcommand(1);

  GlobalArgs args;
  app.add_option("--config", args.config_path, "config file (key = value sections)");
  app.add_option("--seed", args.seed, "override the seed");
  app.add_option("--device", args.device, "compute device (cpu)");
  app.add_option("--threads", args.threads, "torch intra-op threads");

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset");
  synth->add_option("--out", args.out_dir, "output directory")->required();
  int synth_n = 0, synth_res = 0;
  double synth_corr = -1.0;
  int synth_domain = -1;
  synth->add_option("--n", synth_n, "number of samples");
  synth->add_option("--resolution", synth_res, "image resolution");
  synth->add_option("--correlation", synth_corr, "protected/target correlation in [0,1]");
  synth->add_option("--domain", synth_domain, "domain label (0 or 1)");

  auto* tpac = app.add_subcommand("train-pac", "train the protected attribute classifier");
  std::string src_dir, tgt_dir;
  tpac->add_option("--source", src_dir, "labeled source dataset dir")->required();
  tpac->add_option("--target", tgt_dir, "unlabeled target dataset dir");
  tpac->add_option("--out", args.out_dir, "output directory")->required();

  auto* tgan = app.add_subcommand("train-gan", "train the translation model");
  std::string gan_data, pac_path;
  bool resume = false;
  tgan->add_option("--data", gan_data, "training dataset dir")->required();
  tgan->add_option("--pac", pac_path, "trained PAC checkpoint");
  tgan->add_option("--out", args.out_dir, "checkpoint directory")->required();
  tgan->add_flag("--resume", resume, "continue from the latest checkpoint");

  auto* trans = app.add_subcommand("translate", "translate a directory of images");
  std::string ckpt, input_dir;
  std::vector<std::string> edits;
  trans->add_option("--checkpoint", ckpt, "training checkpoint")->required();
  trans->add_option("--input-dir", input_dir, "annotated input dir")->required();
  trans->add_option("--edit", edits, "attribute edits, e.g. +glyph or -stripe")->required();
  trans->add_option("--out", args.out_dir, "output directory")->required();

  auto* eval = app.add_subcommand("evaluate", "score a trained model");
  std::string eval_data, eval_ckpt, eval_pac;
  eval->add_option("--data", eval_data, "dataset dir (test split is used)")->required();
  eval->add_option("--checkpoint", eval_ckpt, "training checkpoint")->required();
  eval->add_option("--pac", eval_pac, "trained PAC checkpoint")->required();
  eval->add_option("--out", args.out_dir, "report directory")->required();

  auto* aug = app.add_subcommand("augment", "build a translated copy of a dataset");
  std::string aug_ckpt, aug_data, aug_policy = "union", aug_attr;
  aug->add_option("--checkpoint", aug_ckpt, "training checkpoint")->required();
  aug->add_option("--data", aug_data, "dataset dir to augment")->required();
  aug->add_option("--policy", aug_policy, "union (O + G(O)) or generated-only");
  aug->add_option("--attr", aug_attr, "attribute to flip (default: first)");
  aug->add_option("--out", args.out_dir, "output directory")->required();

  auto* fair = app.add_subcommand("fair-classify", "fairness scores for a classification task");
  std::string fair_data, fair_test, fair_attr;
  std::vector<double> fair_rates;
  fair->add_option("--data", fair_data, "training dataset dir");
  fair->add_option("--test", fair_test, "held-out test dataset dir");
  fair->add_option("--attr", fair_attr, "classification target attribute");
  fair->add_option("--rates", fair_rates,
                   "compute the scores from given rates: tpr_a fpr_a tpr_b fpr_b")
      ->expected(4);
  fair->add_option("--out", args.out_dir, "report directory");

  // Let global flags (--seed, --config, ...) appear after the subcommand too.
  for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    apply_device(args);

    if (synth->parsed()) return cmd_synth_data(args, synth_n, synth_res, synth_corr, synth_domain);
    if (tpac->parsed()) return cmd_train_pac(args, src_dir, tgt_dir);
    if (tgan->parsed()) return cmd_train_gan(args, gan_data, pac_path, resume);
    if (trans->parsed()) return cmd_translate(args, ckpt, input_dir, edits);
    if (eval->parsed()) return cmd_evaluate(args, eval_data, eval_ckpt, eval_pac);
    if (aug->parsed()) return cmd_augment(args, aug_ckpt, aug_data, aug_policy, aug_attr);
    if (fair->parsed()) return cmd_fair_classify(args, fair_data, fair_test, fair_attr, fair_rates);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}
