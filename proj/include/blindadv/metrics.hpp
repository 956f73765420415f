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

// Attack success, overhead accounting, correlation ROC, transferability and
// report rendering.

#ifndef BLINDADV_METRICS_HPP_
#define BLINDADV_METRICS_HPP_

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindadv/common.hpp"
#include "blindadv/generator.hpp"
#include "blindadv/models.hpp"

namespace blindadv {

struct ClassSuccess {
  int label = 0;
  std::size_t count = 0;
  double success = 0.0;
};

struct OverheadStats {
  // Injected packets over original packets, percent, truncated to 2 decimals.
  double bandwidth_percent = 0.0;
  // Added bytes over original bytes.
  double size_ratio = 0.0;
  // Added delay pooled over every timing entry of every flow, seconds.
  double latency_mean = 0.0;
  double latency_std = 0.0;
};

struct RocPoint {
  double fp = 0.0;
  double threshold = 0.0;
  double clean_tp = 0.0;
  double tp = 0.0;
};

// Min/max over the targets of a targeted sweep. Ties go to the lowest class.
struct TargetedSummary {
  std::vector<double> per_target;  // NaN for targets that were not run
  int min_target = -1;
  double min = 0.0;
  int max_target = -1;
  double max = 0.0;
};

struct TransferResult {
  std::size_t eligible = 0;  // correctly classified by both models, clean
  std::size_t original_fooled = 0;
  std::size_t surrogate_fooled = 0;
  // Empty when the surrogate was never fooled.
  std::optional<double> ratio;
};

struct AttackReport {
  std::string mode;  // e.g. "SU-DU"
  nlohmann::json config;
  double success = 0.0;  // A
  std::size_t evaluated = 0;
  double clean_accuracy = 0.0;
  double perturbed_accuracy = 0.0;
  OverheadStats overhead;
  std::vector<ClassSuccess> per_class;
  std::vector<RocPoint> roc;  // pair_cnn only
  std::optional<TargetedSummary> targeted;
  std::optional<TransferResult> transfer;
};

// A for one remapped perturbation. DU counts f(M(x)) != y, DT counts
// f(M(x)) == target over flows whose label is not the target; ST first keeps
// only the source classes. Throws ValidationError if nothing is left.
AttackReport attack_success(const Classifier& model, const Perturbation& p,
                            const FeatureSet& testset, const AttackConfig& cfg);
// Same, for the perturbation sampled from `gen` with `seed`.
AttackReport attack_success(const Classifier& model, const PerturbationGenerator& gen,
                            const FeatureSet& testset, std::uint64_t seed = 0);

// Accuracy of `model` on `set` with `p` applied to every input.
double perturbed_accuracy(const Classifier& model, const Perturbation& p,
                          const FeatureSet& set);

TargetedSummary summarize_targeted(const std::vector<double>& per_target);

// alpha / (length - alpha) * 100, truncated to 2 decimals.
double injection_overhead_percent(std::size_t alpha, std::size_t length);
// Truncation toward zero at 2 decimals, robust to representation error.
double truncate2(double value);

OverheadStats overhead(const FeatureSet& set, const Perturbation& p, const AttackConfig& cfg,
                       const FeatureLayout& layout);

// iid Laplace delays with the given mean and std on every timing row.
Perturbation laplace_jitter(const FeatureLayout& layout, Index length, double mean,
                            double stddev, std::uint64_t seed);

// Thresholds from clean negatives per FP; TP of perturbed positives. Throws
// ValidationError when an FP needs more negatives than `pairs` holds.
std::vector<RocPoint> correlation_roc(const Classifier& model, const Perturbation& p,
                                      const FeatureSet& pairs, const std::vector<double>& fp_grid);

// Both models must consume the same feature representation.
TransferResult transferability(const Classifier& original, const Classifier& surrogate,
                               const Perturbation& p, const FeatureSet& testset);

nlohmann::json report_to_json(const AttackReport& report);
AttackReport report_from_json(const nlohmann::json& j);
// Throws ValidationError if `j` is not a well-formed report record.
void validate_report_json(const nlohmann::json& j);

void write_report_text(std::ostream& out, const AttackReport& report);
// One row per report keyed by `axis`, Table-1 style columns.
void write_sweep_table(std::ostream& out, const std::string& axis,
                       const std::vector<double>& values, const std::vector<AttackReport>& reports);
void write_sweep_csv(std::ostream& out, const std::string& axis,
                     const std::vector<double>& values, const std::vector<AttackReport>& reports);

}  // namespace blindadv

#endif  // BLINDADV_METRICS_HPP_
