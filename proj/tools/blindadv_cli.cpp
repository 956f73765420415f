//
// Copyright 2026 The blindadv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// blindadv: synth | train | attack train | eval | defend | transfer | sweep | run
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "blindadv/defenses.hpp"
#include "blindadv/experiment.hpp"
#include "blindadv/generator.hpp"
#include "blindadv/metrics.hpp"
#include "blindadv/models.hpp"
#include "blindadv/traffic.hpp"

namespace {

using namespace blindadv;
using nlohmann::json;

struct PairFlags {
  DataParams data;
  void add(CLI::App* app) {
    app->add_option("--pair-length", data.pair_length, "Flow-pair length (pair_cnn)");
    app->add_option("--train-negatives", data.train_negatives, "Negatives per training flow");
    app->add_option("--eval-negatives", data.eval_negatives, "Negatives per evaluation flow");
    app->add_option("--pair-seed", data.pair_seed, "Seed for negative pairing");
  }
};

struct AttackFlags {
  std::string config;
  std::optional<std::string> mode;
  std::vector<int> sources;
  int target = -1;
  std::vector<std::string> channels;
  std::optional<std::size_t> alpha;
  std::optional<double> mu, sigma, total, per_packet, cell, laplace_scale, weight;
  std::optional<int> epochs;
  std::optional<std::size_t> trigger_dim;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--attack-config", config, "Attack config JSON (flags override it)");
    app->add_option("--mode", mode, "SU-DU (default), SU-DT, ST-DU or ST-DT");
    app->add_option("--source", sources, "Source classes for ST");
    app->add_option("--target", target, "Target class for DT");
    app->add_option("--channel", channels,
                    "timing, size, direction-injection, timing-injection, size-injection");
    app->add_option("--alpha", alpha, "Packets to inject");
    app->add_option("--mu", mu, "Max mean added delay, seconds");
    app->add_option("--sigma", sigma, "Max std of added delay, seconds");
    app->add_option("--N", total, "Max added bytes per flow");
    app->add_option("--n", per_packet, "Max added bytes per packet");
    app->add_option("--s", cell, "Cell size, bytes");
    app->add_option("--laplace-scale", laplace_scale, "Enable the Laplace regularizer with scale b");
    app->add_option("--reg-weight", weight, "Regularizer weight");
    app->add_option("--attack-epochs", epochs, "Generator training epochs");
    app->add_option("--trigger-dim", trigger_dim, "Trigger size");
    app->add_option("--attack-seed", seed, "Attack seed");
  }

  AttackConfig build() const {
    AttackConfig c;
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) throw ConfigError("cannot open " + config);
      try {
        c = attack_config_from_json(json::parse(in));
      } catch (const json::parse_error& e) {
        throw ConfigError(config + ": " + e.what());
      }
    }
    if (mode) {
      const std::string& m = *mode;
      if (m.size() != 5 || m[2] != '-') throw ConfigError("bad mode '" + m + "'");
      const std::string src = m.substr(0, 2), dst = m.substr(3);
      if ((src != "SU" && src != "ST") || (dst != "DU" && dst != "DT")) {
        throw ConfigError("bad mode '" + m + "'");
      }
      c.source_mode = src == "ST" ? SourceMode::kTargeted : SourceMode::kUntargeted;
      c.dest_mode = dst == "DT" ? DestMode::kTargeted : DestMode::kUntargeted;
    }
    if (!sources.empty()) c.source_classes = sources;
    if (target >= 0) c.target_class = target;
    if (!channels.empty()) {
      c.channels.clear();
      for (const auto& ch : channels) c.channels.push_back(channel_from_string(ch));
    }
    if (alpha) c.insert_count = *alpha;
    if (mu) c.timing.mu = *mu;
    if (sigma) c.timing.sigma = *sigma;
    if (total) c.size.total = *total;
    if (per_packet) c.size.per_packet = *per_packet;
    if (cell) c.size.cell = *cell;
    if (laplace_scale) {
      c.invisibility = true;
      c.laplace = {0.0, *laplace_scale};
    }
    if (weight) c.regularizer_weight = *weight;
    if (epochs) c.epochs = *epochs;
    if (trigger_dim) c.trigger_dim = *trigger_dim;
    if (seed) c.seed = *seed;
    if (c.channels.empty()) throw ConfigError("no attack channel given");
    return c;
  }
};

Features load_features(const std::string& corpus, Arch arch, const DataParams& data) {
  return prepare_features(load_corpus(corpus), arch, data);
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << content;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad sweep value '" + item + "'");
    }
  }
  return out;
}

// Applies "a.b.c=value" overrides to a config document.
void apply_overrides(json& doc, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    std::string key = s.substr(0, eq);
    std::replace(key.begin(), key.end(), '.', '/');
    json value;
    try {
      value = json::parse(s.substr(eq + 1));
    } catch (const json::parse_error&) {
      value = s.substr(eq + 1);
    }
    doc[json::json_pointer("/" + key)] = value;
  }
}

ExperimentConfig read_config(const std::string& path, const std::vector<std::string>& sets,
                             const std::optional<std::uint64_t>& seed,
                             const std::string& output_dir) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (seed) doc["seed"] = *seed;
  if (!output_dir.empty()) doc["output_dir"] = output_dir;
  apply_overrides(doc, sets);
  return parse_experiment(doc);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Blind adversarial perturbations against traffic classifiers"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  SynthOptions so;
  double train_fraction = 0.7, validation_fraction = 0.1;
  std::uint64_t split_seed = 2;
  std::string synth_out;
  synth->add_option("--classes", so.class_count, "Class count");
  synth->add_option("--per-class", so.per_class, "Flows per class");
  synth->add_option("--min-length", so.min_length, "Shortest trace");
  synth->add_option("--max-length", so.max_length, "Longest trace");
  synth->add_option("--fixed-length", so.fixed_length, "Model input length");
  synth->add_option("--seed", so.seed, "Corpus seed");
  synth->add_option("--train-fraction", train_fraction, "Train share");
  synth->add_option("--validation-fraction", validation_fraction, "Validation share");
  synth->add_option("--split-seed", split_seed, "Split seed");
  synth->add_option("--out", synth_out, "Corpus directory")->required();
  synth->callback([&] {
    const DatasetSplits s =
        split_dataset(synth_corpus(so), train_fraction, validation_fraction, split_seed);
    save_corpus(synth_out, s);
    std::cout << "wrote " << s.train.size() << "/" << s.validation.size() << "/"
              << s.test.size() << " flows to " << synth_out << "\n";
  });

  // train
  auto* train = app.add_subcommand("train", "Train a target classifier");
  std::string corpus, arch_name = "direction_cnn", model_out;
  TrainConfig tc;
  PairFlags train_pairs;
  train->add_option("--corpus", corpus, "Corpus directory")->required();
  train->add_option("--arch", arch_name, "direction_cnn, twobranch or pair_cnn");
  train->add_option("--epochs", tc.epochs, "Epochs");
  train->add_option("--batch-size", tc.batch_size, "Batch size");
  train->add_option("--lr", tc.learning_rate, "Learning rate");
  train->add_option("--seed", tc.seed, "Seed");
  train->add_option("--target-fp", tc.target_fp, "FP rate for the pair_cnn threshold");
  train->add_option("--filters1", tc.arch.filters1, "First conv width");
  train->add_option("--filters2", tc.arch.filters2, "Second conv width");
  train->add_option("--kernel", tc.arch.kernel, "Kernel size");
  train->add_option("--hidden", tc.arch.hidden, "Dense width");
  train->add_option("--out", model_out, "Model checkpoint")->required();
  train_pairs.add(train);
  train->callback([&] {
    const Arch arch = arch_from_string(arch_name);
    const FitResult fit = train_target(arch, load_features(corpus, arch, train_pairs.data), tc);
    save_classifier(model_out, fit.model);
    std::cout << to_string(arch) << " train " << fit.report.train_accuracy << " test "
              << fit.report.test_accuracy << "\n";
  });

  // attack train
  auto* attack = app.add_subcommand("attack", "Blind perturbation generator");
  attack->require_subcommand(1);
  auto* attack_train = attack->add_subcommand("train", "Train a generator against a model");
  std::string model_path, gen_out, log_out;
  AttackFlags af;
  PairFlags attack_pairs;
  attack_train->add_option("--model", model_path, "Target model checkpoint")->required();
  attack_train->add_option("--corpus", corpus, "Corpus directory")->required();
  attack_train->add_option("--out", gen_out, "Generator checkpoint")->required();
  attack_train->add_option("--log", log_out, "Per-epoch CSV log");
  af.add(attack_train);
  attack_pairs.add(attack_train);
  attack_train->callback([&] {
    const Classifier model = load_classifier(model_path);
    const AttackConfig cfg = af.build();
    const Features f = load_features(corpus, model.arch(), attack_pairs.data);
    TrainingLog log;
    const PerturbationGenerator gen = train_blind_perturbation(model, f.train, cfg, &log);
    save_generator(gen_out, gen);
    std::ostringstream csv;
    csv << "epoch,objective,regularizer,discriminator_accuracy\n";
    for (std::size_t e = 0; e < log.epochs.size(); ++e) {
      csv << e + 1 << "," << log.epochs[e].objective << "," << log.epochs[e].regularizer << ","
          << log.epochs[e].discriminator_accuracy << "\n";
    }
    if (!log_out.empty()) emit(log_out, csv.str());
    std::cout << cfg.mode_name() << " final objective " << log.epochs.back().objective << "\n";
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a generator against a model");
  std::string gen_path, format = "txt", eval_out, fp_text = "0.01";
  EvalParams ep;
  PairFlags eval_pairs;
  std::string original_path;
  eval->add_option("--model", model_path, "Target model checkpoint")->required();
  eval->add_option("--generator", gen_path, "Generator checkpoint")->required();
  eval->add_option("--corpus", corpus, "Corpus directory")->required();
  eval->add_option("--sample-seed", ep.sample_seed, "Trigger seed");
  eval->add_option("--fp", fp_text, "Comma-separated FP grid (pair_cnn)");
  eval->add_flag("--targeted-sweep", ep.targeted_sweep, "Train every target class (DT)");
  eval->add_option("--original", original_path, "Original model for transferability");
  eval->add_option("--format", format, "txt, json or csv")
      ->check(CLI::IsMember({"txt", "json", "csv"}));
  eval->add_option("--out", eval_out, "Output file (default stdout)");
  eval_pairs.add(eval);
  eval->callback([&] {
    const Classifier model = load_classifier(model_path);
    const PerturbationGenerator gen = load_generator(gen_path);
    if (gen.arch() != model.arch()) throw ConfigError("generator was trained for another model");
    ep.fp_grid = parse_values(fp_text);
    if (!original_path.empty()) ep.original_model = original_path;
    const AttackReport r =
        evaluate_attack(model, gen, load_features(corpus, model.arch(), eval_pairs.data), ep);
    std::ostringstream out;
    if (format == "json") {
      out << report_to_json(r).dump(2) << "\n";
    } else if (format == "csv") {
      write_sweep_csv(out, "run", {0.0}, {r});
    } else {
      write_report_text(out, r);
    }
    emit(eval_out, out.str());
  });

  // defend
  auto* defend = app.add_subcommand("defend", "Train a defended model and measure robustness");
  DefenseConfig dc;
  std::string kind = "tailored_advtrain", defended_out, report_out;
  std::optional<std::size_t> radius, flip_count;
  TrainConfig dtc;
  AttackFlags daf;
  PairFlags defend_pairs;
  defend->add_option("--corpus", corpus, "Corpus directory")->required();
  defend->add_option("--arch", arch_name, "Model architecture");
  defend->add_option("--kind", kind,
                     "tailored_advtrain, flip_advtrain, input_gradient_reg, region_classification");
  defend->add_option("--lambda", dc.lambda, "Gradient penalty weight");
  defend->add_option("--radius", radius, "Region classification flips");
  defend->add_option("--votes", dc.votes, "Region classification votes");
  defend->add_option("--flip-count", flip_count, "Flips per augmented sample");
  defend->add_option("--epochs", dc.epochs, "Training epochs");
  defend->add_option("--grid-attack-epochs", dc.attack_epochs, "Attack epochs per grid cell");
  defend->add_option("--extend-fraction", dc.extend_fraction, "Share of flows perturbed per cell");
  defend->add_option("--seed", dtc.seed, "Model seed");
  defend->add_option("--out", defended_out, "Defended model checkpoint")->required();
  defend->add_option("--report", report_out, "JSON report path (default stdout)");
  daf.add(defend);
  defend_pairs.add(defend);
  defend->callback([&] {
    const Arch arch = arch_from_string(arch_name);
    dc.kind = defense_from_string(kind);
    dc.radius = radius;
    dc.flip_count = flip_count;
    dc.seed = dtc.seed;
    const AttackConfig ac = daf.build();
    const Features f = load_features(corpus, arch, defend_pairs.data);
    const DefendedModel d = train_defended(arch, f.train, dc, dtc, ac);
    save_classifier(defended_out, d.model);
    const RobustReport r = robust_accuracy(d, f.train, f.test, ac);
    const json rep = {{"defense", r.defense},
                      {"clean_accuracy", r.clean_accuracy},
                      {"robust_accuracy", r.robust_accuracy},
                      {"config", defense_config_to_json(dc)},
                      {"attack", attack_config_to_json(ac)}};
    emit(report_out, rep.dump(2) + "\n");
  });

  // transfer
  auto* transfer = app.add_subcommand("transfer", "Transferability of a surrogate's perturbation");
  std::string original, surrogate;
  std::uint64_t transfer_seed = 0;
  PairFlags transfer_pairs;
  transfer->add_option("--original", original, "Original (blackbox) model")->required();
  transfer->add_option("--surrogate", surrogate, "Surrogate model the generator attacked")->required();
  transfer->add_option("--generator", gen_path, "Generator checkpoint")->required();
  transfer->add_option("--corpus", corpus, "Corpus directory")->required();
  transfer->add_option("--sample-seed", transfer_seed, "Trigger seed");
  transfer_pairs.add(transfer);
  transfer->callback([&] {
    const Classifier orig = load_classifier(original);
    const Classifier sur = load_classifier(surrogate);
    const PerturbationGenerator gen = load_generator(gen_path);
    const Features f = load_features(corpus, sur.arch(), transfer_pairs.data);
    const TransferResult t = transferability(orig, sur, sample_remapped(gen, transfer_seed), f.test);
    json j = {{"eligible", t.eligible},
              {"original_fooled", t.original_fooled},
              {"surrogate_fooled", t.surrogate_fooled}};
    j["ratio"] = t.ratio ? json(*t.ratio) : json(nullptr);
    if (!t.ratio) j["note"] = "no surrogate misclassifications";
    std::cout << j.dump(2) << "\n";
  });

  // run / sweep
  std::string config_path, run_dir, axis, values_text;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> run_seed;
  auto* run = app.add_subcommand("run", "Run a pipeline config");
  run->add_option("--config", config_path, "Experiment config JSON")->required();
  run->add_option("--output-dir", run_dir, "Override output_dir");
  run->add_option("--seed", run_seed, "Override the global seed");
  run->add_option("--set", sets, "Override a field: key.path=value");
  run->callback([&] {
    const RunResult r = run_experiment(read_config(config_path, sets, run_seed, run_dir));
    if (r.report) write_report_text(std::cout, *r.report);
  });
  auto* sweep = app.add_subcommand("sweep", "Sweep one numeric config field");
  sweep->add_option("--config", config_path, "Experiment config JSON")->required();
  sweep->add_option("--axis", axis, "Field path or alias (alpha, sigma, mu, N, n, s)")->required();
  sweep->add_option("--values", values_text, "Comma-separated values")->required();
  sweep->add_option("--output-dir", run_dir, "Override output_dir");
  sweep->add_option("--seed", run_seed, "Override the global seed");
  sweep->add_option("--set", sets, "Override a field: key.path=value");
  sweep->callback([&] {
    const SweepResult s = run_sweep(read_config(config_path, sets, run_seed, run_dir), axis,
                                    parse_values(values_text));
    write_sweep_table(std::cout, s.axis, s.values, s.reports);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const blindadv::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const blindadv::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const blindadv::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}
