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

// Config-driven pipelines: data -> model -> attack -> eval -> defense.
//
// A run directory holds
//
//   corpus/            manifest.json + per-split trace files
//   model.ckpt         target classifier
//   generator.ckpt     trained perturbation generator
//   attack_log.csv     per-epoch objective
//   report.{json,txt,csv}
//   baseline_roc.csv   Laplace jitter ROC (pair models, timing attacks)
//   defended.ckpt, defense_report.{json,txt}
//
// Relative output directories resolve against $BLINDADV_OUTPUT_ROOT when set.

#ifndef BLINDADV_EXPERIMENT_HPP_
#define BLINDADV_EXPERIMENT_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindadv/defenses.hpp"
#include "blindadv/generator.hpp"
#include "blindadv/metrics.hpp"
#include "blindadv/models.hpp"
#include "blindadv/traffic.hpp"

namespace blindadv {

inline constexpr int kExperimentVersion = 1;
inline constexpr const char* kOutputRootEnv = "BLINDADV_OUTPUT_ROOT";

enum class Stage { kData, kModel, kAttack, kEval, kDefense };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

struct DataParams {
  SynthOptions synth;
  // Load this corpus directory instead of synthesizing one.
  std::optional<std::filesystem::path> corpus;
  double train_fraction = 0.7;
  double validation_fraction = 0.1;
  std::uint64_t split_seed = 0;
  // Flow-pair view for pair_cnn.
  std::size_t pair_length = 100;
  std::size_t train_negatives = 3;
  std::size_t eval_negatives = 9;
  std::uint64_t pair_seed = 0;
};

struct EvalParams {
  std::uint64_t sample_seed = 0;
  std::vector<double> fp_grid{1e-2};
  // Train one generator per target class and report min/max (DT only).
  bool targeted_sweep = false;
  // Pair models under timing attack: also score Laplace jitter of equal std.
  bool laplace_baseline = true;
  // Original model for a transferability measurement, if any.
  std::optional<std::filesystem::path> original_model;
};

struct ExperimentConfig {
  int version = kExperimentVersion;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "run";
  std::vector<Stage> stages;
  DataParams data;
  Arch arch = Arch::kDirectionCnn;
  TrainConfig train;
  AttackConfig attack;
  EvalParams eval;
  DefenseConfig defense;
  // Run directory holding a shared corpus and model, if any.
  std::optional<std::filesystem::path> upstream;
};

// Parses and validates; per-stage seeds not given explicitly are derived
// from the global seed. Throws ConfigError.
ExperimentConfig parse_experiment(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);

std::filesystem::path resolve_output(const std::filesystem::path& dir);

struct RunPaths {
  std::filesystem::path root;
  // Where corpus/ and model.ckpt live when they are shared (sweeps).
  std::optional<std::filesystem::path> upstream;

  std::filesystem::path corpus() const { return upstream.value_or(root) / "corpus"; }
  std::filesystem::path model() const { return upstream.value_or(root) / "model.ckpt"; }
  std::filesystem::path generator() const { return root / "generator.ckpt"; }
  std::filesystem::path attack_log() const { return root / "attack_log.csv"; }
  std::filesystem::path report(const std::string& ext) const { return root / ("report." + ext); }
  std::filesystem::path baseline_roc() const { return root / "baseline_roc.csv"; }
  std::filesystem::path defended() const { return root / "defended.ckpt"; }
  std::filesystem::path defense_report(const std::string& ext) const {
    return root / ("defense_report." + ext);
  }
};

struct Features {
  FeatureSet train, validation, test;
};

// Model-ready features for `arch`; pair_cnn gets flow pairs built from the
// corpus egress observations.
Features prepare_features(const DatasetSplits& splits, Arch arch, const DataParams& params);

// Trains a classifier; pair models get their threshold from validation
// negatives at config.target_fp.
FitResult train_target(Arch arch, const Features& features, const TrainConfig& config);

// Evaluates `gen` on `features.test` according to `eval`.
AttackReport evaluate_attack(const Classifier& model, const PerturbationGenerator& gen,
                             const Features& features, const EvalParams& eval);

struct RunResult {
  std::optional<AttackReport> report;
  std::optional<RobustReport> defense;
  std::optional<RobustReport> undefended;
};

// Runs the configured stages in order, writing artifacts under
// resolve_output(cfg.output_dir). Missing upstream artifacts throw
// ConfigError.
RunResult run_experiment(const ExperimentConfig& cfg);

// Dotted path into the config document, e.g. "attack.timing.sigma".
// Short aliases: alpha, sigma, mu, N, n, s.
std::string canonical_axis(const std::string& axis);

struct SweepResult {
  std::string axis;
  std::vector<double> values;
  std::vector<AttackReport> reports;
};

// One attack + eval per value; data and model are shared when the axis only
// touches the attack or eval blocks. Writes sweep.{txt,csv,json}.
SweepResult run_sweep(const ExperimentConfig& cfg, const std::string& axis,
                      const std::vector<double>& values);

}  // namespace blindadv

#endif  // BLINDADV_EXPERIMENT_HPP_
