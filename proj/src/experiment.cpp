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

#include "blindadv/experiment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace blindadv {

namespace {

using nlohmann::json;

constexpr std::array<std::pair<Stage, const char*>, 5> kStageNames = {{
    {Stage::kData, "data"},
    {Stage::kModel, "model"},
    {Stage::kAttack, "attack"},
    {Stage::kEval, "eval"},
    {Stage::kDefense, "defense"},
}};

void note(const std::string& msg) { std::cerr << "[blindadv] " << msg << std::endl; }

void check_keys(const json& j, const std::string& block, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError(block + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError(block + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void require(const std::filesystem::path& path, const std::string& what) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("missing upstream artifact: " + what + " (" + path.string() + ")");
  }
}

bool has_stage(const ExperimentConfig& cfg, Stage s) {
  return std::find(cfg.stages.begin(), cfg.stages.end(), s) != cfg.stages.end();
}

std::string roc_csv(const std::vector<RocPoint>& roc) {
  std::ostringstream s;
  s << "fp,threshold,clean_tp,tp\n";
  for (const auto& pt : roc) s << pt.fp << "," << pt.threshold << "," << pt.clean_tp << "," << pt.tp << "\n";
  return s.str();
}

std::string per_class_csv(const AttackReport& r) {
  std::ostringstream s;
  s << "label,count,success\n";
  for (const auto& c : r.per_class) s << c.label << "," << c.count << "," << c.success << "\n";
  return s.str();
}

json robust_to_json(const RobustReport& r) {
  return {{"defense", r.defense},
          {"clean_accuracy", r.clean_accuracy},
          {"robust_accuracy", r.robust_accuracy}};
}

json train_to_json(Arch arch, const TrainConfig& t) {
  return {{"arch", to_string(arch)},       {"epochs", t.epochs},
          {"batch_size", t.batch_size},    {"learning_rate", t.learning_rate},
          {"seed", t.seed},                {"target_fp", t.target_fp},
          {"filters1", t.arch.filters1},   {"filters2", t.arch.filters2},
          {"kernel", t.arch.kernel},       {"pool", t.arch.pool},
          {"hidden", t.arch.hidden}};
}

}  // namespace

std::string to_string(Stage stage) {
  for (const auto& [s, name] : kStageNames) {
    if (s == stage) return name;
  }
  return "unknown";
}

Stage stage_from_string(const std::string& name) {
  for (const auto& [s, n] : kStageNames) {
    if (name == n) return s;
  }
  throw ConfigError("unknown stage '" + name + "'");
}

ExperimentConfig parse_experiment(const json& j) {
  ExperimentConfig c;
  check_keys(j, "config",
             {"version", "seed", "output_dir", "upstream", "stages", "data", "model", "attack",
              "eval", "defense"});
  try {
    c.version = j.value("version", 0);
    if (c.version != kExperimentVersion) {
      throw ConfigError("unsupported config version " + std::to_string(c.version));
    }
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir.string());
    if (j.contains("upstream") && !j["upstream"].is_null()) {
      c.upstream = j["upstream"].get<std::string>();
    }

    if (!j.contains("stages") || !j["stages"].is_array() || j["stages"].empty()) {
      throw ConfigError("stages must be a non-empty list");
    }
    int last = -1;
    for (const auto& s : j["stages"]) {
      const Stage st = stage_from_string(s.get<std::string>());
      if (static_cast<int>(st) <= last) {
        throw ConfigError("stages must follow data -> model -> attack -> eval -> defense");
      }
      last = static_cast<int>(st);
      c.stages.push_back(st);
    }

    const json data = j.value("data", json::object());
    check_keys(data, "data",
               {"class_count", "per_class", "min_length", "max_length", "fixed_length", "seed",
                "egress_jitter", "egress_latency", "egress_reframe", "class_spread", "corpus",
                "train_fraction", "validation_fraction", "split_seed", "pair_length",
                "train_negatives", "eval_negatives", "pair_seed"});
    auto& d = c.data;
    d.synth.seed = c.seed;
    d.split_seed = derive_seed(c.seed, 1);
    d.pair_seed = derive_seed(c.seed, 2);
    read(data, "class_count", d.synth.class_count);
    read(data, "per_class", d.synth.per_class);
    read(data, "min_length", d.synth.min_length);
    read(data, "max_length", d.synth.max_length);
    read(data, "fixed_length", d.synth.fixed_length);
    read(data, "seed", d.synth.seed);
    read(data, "egress_jitter", d.synth.egress_jitter);
    read(data, "egress_latency", d.synth.egress_latency);
    read(data, "egress_reframe", d.synth.egress_reframe);
    read(data, "class_spread", d.synth.class_spread);
    if (data.contains("corpus") && !data["corpus"].is_null()) {
      d.corpus = data["corpus"].get<std::string>();
    }
    read(data, "train_fraction", d.train_fraction);
    read(data, "validation_fraction", d.validation_fraction);
    read(data, "split_seed", d.split_seed);
    read(data, "pair_length", d.pair_length);
    read(data, "train_negatives", d.train_negatives);
    read(data, "eval_negatives", d.eval_negatives);
    read(data, "pair_seed", d.pair_seed);
    if (!(d.train_fraction > 0 && d.validation_fraction >= 0 &&
          d.train_fraction + d.validation_fraction < 1)) {
      throw ConfigError("data: split fractions must leave a test split");
    }

    const json model = j.value("model", json::object());
    check_keys(model, "model",
               {"arch", "epochs", "batch_size", "learning_rate", "seed", "target_fp", "filters1",
                "filters2", "kernel", "pool", "hidden"});
    c.arch = arch_from_string(model.value("arch", std::string("direction_cnn")));
    c.train.seed = derive_seed(c.seed, 3);
    read(model, "epochs", c.train.epochs);
    read(model, "batch_size", c.train.batch_size);
    read(model, "learning_rate", c.train.learning_rate);
    read(model, "seed", c.train.seed);
    read(model, "target_fp", c.train.target_fp);
    read(model, "filters1", c.train.arch.filters1);
    read(model, "filters2", c.train.arch.filters2);
    read(model, "kernel", c.train.arch.kernel);
    read(model, "pool", c.train.arch.pool);
    read(model, "hidden", c.train.arch.hidden);
    if (c.train.epochs < 0) throw ConfigError("model: epochs must be >= 0");

    if (j.contains("attack")) {
      c.attack = attack_config_from_json(j["attack"]);
      if (!j["attack"].contains("seed")) c.attack.seed = derive_seed(c.seed, 4);
    } else if (has_stage(c, Stage::kAttack) || has_stage(c, Stage::kEval) ||
               has_stage(c, Stage::kDefense)) {
      throw ConfigError("attack block required by the requested stages");
    }

    const json eval = j.value("eval", json::object());
    check_keys(eval, "eval",
               {"sample_seed", "fp_grid", "targeted_sweep", "laplace_baseline", "original_model"});
    c.eval.sample_seed = derive_seed(c.seed, 6);
    read(eval, "sample_seed", c.eval.sample_seed);
    read(eval, "fp_grid", c.eval.fp_grid);
    read(eval, "targeted_sweep", c.eval.targeted_sweep);
    read(eval, "laplace_baseline", c.eval.laplace_baseline);
    if (eval.contains("original_model") && !eval["original_model"].is_null()) {
      c.eval.original_model = eval["original_model"].get<std::string>();
    }

    if (j.contains("defense")) {
      c.defense = defense_config_from_json(j["defense"]);
      if (!j["defense"].contains("seed")) c.defense.seed = derive_seed(c.seed, 5);
    } else if (has_stage(c, Stage::kDefense)) {
      throw ConfigError("defense block required by the defense stage");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (has_stage(c, Stage::kAttack) || has_stage(c, Stage::kEval)) {
    if (c.attack.channels.empty()) throw ConfigError("attack: no channels");
    const FeatureLayout layout = layout_for(c.arch);
    const int classes = c.arch == Arch::kPairCnn ? 2 : c.data.synth.class_count;
    validate_attack(c.attack, layout, classes);
  }
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_experiment(j);
}

json experiment_to_json(const ExperimentConfig& c) {
  json stages = json::array();
  for (Stage s : c.stages) stages.push_back(to_string(s));
  const auto& d = c.data;
  json data = {{"class_count", d.synth.class_count},
               {"per_class", d.synth.per_class},
               {"min_length", d.synth.min_length},
               {"max_length", d.synth.max_length},
               {"fixed_length", d.synth.fixed_length},
               {"seed", d.synth.seed},
               {"egress_jitter", d.synth.egress_jitter},
               {"egress_latency", d.synth.egress_latency},
               {"egress_reframe", d.synth.egress_reframe},
               {"class_spread", d.synth.class_spread},
               {"train_fraction", d.train_fraction},
               {"validation_fraction", d.validation_fraction},
               {"split_seed", d.split_seed},
               {"pair_length", d.pair_length},
               {"train_negatives", d.train_negatives},
               {"eval_negatives", d.eval_negatives},
               {"pair_seed", d.pair_seed}};
  data["corpus"] = d.corpus ? json(d.corpus->string()) : json(nullptr);
  json eval = {{"sample_seed", c.eval.sample_seed},
               {"fp_grid", c.eval.fp_grid},
               {"targeted_sweep", c.eval.targeted_sweep},
               {"laplace_baseline", c.eval.laplace_baseline}};
  eval["original_model"] =
      c.eval.original_model ? json(c.eval.original_model->string()) : json(nullptr);
  return {{"version", c.version},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"upstream", c.upstream ? json(c.upstream->string()) : json(nullptr)},
          {"stages", stages},
          {"data", data},
          {"model", train_to_json(c.arch, c.train)},
          {"attack", attack_config_to_json(c.attack)},
          {"eval", eval},
          {"defense", defense_config_to_json(c.defense)}};
}

std::filesystem::path resolve_output(const std::filesystem::path& dir) {
  if (dir.is_absolute()) return dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) {
    return std::filesystem::path(root) / dir;
  }
  return dir;
}

Features prepare_features(const DatasetSplits& splits, Arch arch, const DataParams& params) {
  Features f;
  if (arch == Arch::kPairCnn) {
    if (!splits.train.has_egress()) throw ConfigError("pair_cnn needs a corpus with egress flows");
    f.train = make_features(make_pairs(splits.train, params.train_negatives,
                                       derive_seed(params.pair_seed, 0), params.pair_length));
    f.validation = make_features(make_pairs(splits.validation, params.eval_negatives,
                                            derive_seed(params.pair_seed, 1), params.pair_length));
    f.test = make_features(make_pairs(splits.test, params.eval_negatives,
                                      derive_seed(params.pair_seed, 2), params.pair_length));
  } else {
    f.train = make_features(arch, splits.train);
    f.validation = make_features(arch, splits.validation);
    f.test = make_features(arch, splits.test);
  }
  return f;
}

FitResult train_target(Arch arch, const Features& features, const TrainConfig& config) {
  if (arch != Arch::kPairCnn) return fit_classifier(arch, features.train, features.test, config);
  FitResult fit = fit_classifier(arch, features.train, FeatureSet{}, config);
  std::vector<double> negatives, positives;
  for (std::size_t i = 0; i < features.validation.size(); ++i) {
    if (features.validation.labels[i] == 0) {
      negatives.push_back(fit.model.score(features.validation.inputs[i]));
    }
  }
  if (!negatives.empty()) fit.model.set_threshold(threshold_for_fp(negatives, config.target_fp));
  for (std::size_t i = 0; i < features.test.size(); ++i) {
    if (features.test.labels[i] == 1) positives.push_back(fit.model.score(features.test.inputs[i]));
  }
  fit.report.train_accuracy = accuracy(fit.model, features.train);
  fit.report.test_accuracy = true_positive_rate(positives, fit.model.threshold());
  return fit;
}

AttackReport evaluate_attack(const Classifier& model, const PerturbationGenerator& gen,
                             const Features& features, const EvalParams& eval) {
  const Perturbation p = sample_remapped(gen, eval.sample_seed);
  AttackReport r = attack_success(model, p, features.test, gen.config());
  if (model.is_pair_model()) r.roc = correlation_roc(model, p, features.test, eval.fp_grid);
  if (eval.targeted_sweep && gen.config().dest_mode == DestMode::kTargeted) {
    std::vector<double> per(static_cast<std::size_t>(model.class_count()),
                            std::numeric_limits<double>::quiet_NaN());
    for (int t = 0; t < model.class_count(); ++t) {
      AttackConfig cfg = gen.config();
      cfg.target_class = t;
      cfg.seed = derive_seed(gen.config().seed, static_cast<std::uint64_t>(t) + 100);
      note("targeted sweep: target " + std::to_string(t));
      const PerturbationGenerator g = train_blind_perturbation(model, features.train, cfg);
      per[static_cast<std::size_t>(t)] =
          attack_success(model, sample_remapped(g, eval.sample_seed), features.test, cfg).success;
    }
    r.targeted = summarize_targeted(per);
  }
  if (eval.original_model) {
    const Classifier original = load_classifier(*eval.original_model);
    r.transfer = transferability(original, model, p, features.test);
  }
  return r;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  RunPaths paths{resolve_output(cfg.output_dir), std::nullopt};
  if (cfg.upstream) paths.upstream = resolve_output(*cfg.upstream);
  std::filesystem::create_directories(paths.root);
  write_file(paths.root / "config.json", dump(experiment_to_json(cfg)));
  RunResult result;

  std::optional<Features> features;
  auto get_features = [&]() -> const Features& {
    if (!features) {
      std::filesystem::path dir = paths.corpus();
      if (!has_stage(cfg, Stage::kData) && cfg.data.corpus && !cfg.upstream) dir = *cfg.data.corpus;
      require(dir / "manifest.json", "corpus");
      features = prepare_features(load_corpus(dir), cfg.arch, cfg.data);
    }
    return *features;
  };
  auto get_model = [&]() {
    require(paths.model(), "target model");
    Classifier m = load_classifier(paths.model());
    if (m.arch() != cfg.arch) throw ConfigError("model checkpoint has a different architecture");
    return m;
  };

  for (Stage stage : cfg.stages) {
    note("stage " + to_string(stage));
    switch (stage) {
      case Stage::kData: {
        DatasetSplits splits;
        if (cfg.data.corpus) {
          require(*cfg.data.corpus / "manifest.json", "input corpus");
          splits = load_corpus(*cfg.data.corpus);
        } else {
          splits = split_dataset(synth_corpus(cfg.data.synth), cfg.data.train_fraction,
                                 cfg.data.validation_fraction, cfg.data.split_seed);
        }
        save_corpus(paths.corpus(), splits);
        break;
      }
      case Stage::kModel: {
        const FitResult fit = train_target(cfg.arch, get_features(), cfg.train);
        save_classifier(paths.model(), fit.model);
        json rep = train_to_json(cfg.arch, cfg.train);
        rep["train_accuracy"] = fit.report.train_accuracy;
        rep["test_accuracy"] = fit.report.test_accuracy;
        write_file(paths.root / "model_report.json", dump(rep));
        note("model test " + std::string(cfg.arch == Arch::kPairCnn ? "TP" : "accuracy") + " " +
             std::to_string(fit.report.test_accuracy));
        break;
      }
      case Stage::kAttack: {
        const Classifier model = get_model();
        TrainingLog log;
        const PerturbationGenerator gen =
            train_blind_perturbation(model, get_features().train, cfg.attack, &log);
        save_generator(paths.generator(), gen);
        std::ostringstream csv;
        csv << "epoch,objective,regularizer,discriminator_accuracy\n";
        for (std::size_t e = 0; e < log.epochs.size(); ++e) {
          const auto& s = log.epochs[e];
          csv << e + 1 << "," << s.objective << "," << s.regularizer << ","
              << s.discriminator_accuracy << "\n";
        }
        write_file(paths.attack_log(), csv.str());
        break;
      }
      case Stage::kEval: {
        const Classifier model = get_model();
        require(paths.generator(), "generator");
        const PerturbationGenerator gen = load_generator(paths.generator(), cfg.attack, cfg.arch);
        const AttackReport r = evaluate_attack(model, gen, get_features(), cfg.eval);
        validate_report_json(report_to_json(r));
        write_file(paths.report("json"), dump(report_to_json(r)));
        std::ostringstream txt;
        write_report_text(txt, r);
        write_file(paths.report("txt"), txt.str());
        write_file(paths.report("csv"), per_class_csv(r));
        if (model.is_pair_model() && cfg.eval.laplace_baseline && cfg.attack.has(Channel::kTiming)) {
          const Perturbation jitter =
              laplace_jitter(model.layout(), model.input_length(), cfg.attack.timing.mu,
                             cfg.attack.timing.sigma, derive_seed(cfg.eval.sample_seed, 9));
          write_file(paths.baseline_roc(),
                     roc_csv(correlation_roc(model, jitter, get_features().test, cfg.eval.fp_grid)));
        }
        note("attack success " + std::to_string(r.success));
        result.report = r;
        break;
      }
      case Stage::kDefense: {
        const Features& f = get_features();
        const DefendedModel defended = train_defended(cfg.arch, f.train, cfg.defense, cfg.train, cfg.attack);
        save_classifier(paths.defended(), defended.model);
        result.defense = robust_accuracy(defended, f.train, f.test, cfg.attack);
        DefendedModel plain{std::filesystem::exists(paths.model())
                                ? get_model()
                                : train_target(cfg.arch, f, cfg.train).model,
                            DefenseConfig{}};
        result.undefended = robust_accuracy(plain, f.train, f.test, cfg.attack);
        json rep = {{"attack", attack_config_to_json(cfg.attack)},
                    {"config", defense_config_to_json(cfg.defense)},
                    {"defended", robust_to_json(*result.defense)},
                    {"undefended", robust_to_json(*result.undefended)}};
        write_file(paths.defense_report("json"), dump(rep));
        std::ostringstream txt;
        txt << "defense              clean(%)  robust(%)\n";
        for (const RobustReport* r : {&*result.undefended, &*result.defense}) {
          txt << std::left << std::setw(22) << r->defense << std::right << std::fixed
              << std::setprecision(2) << std::setw(8) << 100.0 * r->clean_accuracy
              << std::setw(11) << 100.0 * r->robust_accuracy << "\n";
        }
        write_file(paths.defense_report("txt"), txt.str());
        break;
      }
    }
  }
  return result;
}

std::string canonical_axis(const std::string& axis) {
  static const std::map<std::string, std::string> aliases = {
      {"alpha", "attack.alpha"},     {"sigma", "attack.timing.sigma"},
      {"mu", "attack.timing.mu"},    {"N", "attack.size.N"},
      {"n", "attack.size.n"},        {"s", "attack.size.s"},
  };
  const auto it = aliases.find(axis);
  return it == aliases.end() ? axis : it->second;
}

SweepResult run_sweep(const ExperimentConfig& cfg, const std::string& axis,
                      const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("sweep: no values");
  const std::string path = canonical_axis(axis);
  const json base = experiment_to_json(cfg);
  const json::json_pointer ptr("/" + [&] {
    std::string p = path;
    std::replace(p.begin(), p.end(), '.', '/');
    return p;
  }());
  if (!base.contains(ptr) || !base.at(ptr).is_number()) {
    throw ConfigError("sweep: axis '" + axis + "' is not a numeric config field");
  }
  const bool integral = base.at(ptr).is_number_integer();
  const bool shared = path.rfind("attack.", 0) == 0 || path.rfind("eval.", 0) == 0;

  const std::filesystem::path root = resolve_output(cfg.output_dir);
  std::filesystem::create_directories(root);
  if (shared) {
    ExperimentConfig up = cfg;
    up.output_dir = root;
    up.stages.clear();
    for (Stage s : cfg.stages) {
      if (s == Stage::kData || s == Stage::kModel) up.stages.push_back(s);
    }
    if (!up.stages.empty()) run_experiment(up);
  }

  SweepResult sweep{axis, values, {}};
  json records = json::array();
  for (double v : values) {
    json doc = base;
    if (integral) {
      if (v != std::floor(v) || v < 0) throw ConfigError("sweep: axis '" + axis + "' needs integers");
      doc[ptr] = static_cast<std::uint64_t>(v);
    } else {
      doc[ptr] = v;
    }
    std::ostringstream name;
    name << path.substr(path.rfind('.') + 1) << "=" << v;
    doc["output_dir"] = (root / name.str()).string();
    if (shared) {
      json stages = json::array();
      for (Stage s : cfg.stages) {
        if (s != Stage::kData && s != Stage::kModel) stages.push_back(to_string(s));
      }
      doc["stages"] = stages;
    }
    ExperimentConfig point = parse_experiment(doc);
    if (shared) point.upstream = root;
    if (!has_stage(point, Stage::kEval)) throw ConfigError("sweep: stages must include eval");
    note("sweep " + axis + " = " + name.str().substr(name.str().find('=') + 1));
    const RunResult r = run_experiment(point);
    sweep.reports.push_back(*r.report);
    records.push_back({{"value", v}, {"report", report_to_json(*r.report)}});
  }
  std::ostringstream txt, csv;
  write_sweep_table(txt, axis, values, sweep.reports);
  write_sweep_csv(csv, axis, values, sweep.reports);
  write_file(root / "sweep.txt", txt.str());
  write_file(root / "sweep.csv", csv.str());
  write_file(root / "sweep.json", dump({{"axis", axis}, {"path", path}, {"points", records}}));
  return sweep;
}

}  // namespace blindadv
