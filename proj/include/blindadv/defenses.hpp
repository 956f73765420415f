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

// Countermeasures against blind perturbations and the robust-accuracy
// harness that re-trains the attack against each defended model.
//
//   tailored_advtrain      adversarial training on our own blind attacks
//   flip_advtrain          training on randomly direction-flipped copies
//   input_gradient_reg     penalizes the squared input-gradient norm
//   region_classification  majority vote over randomly flipped neighbours

#ifndef BLINDADV_DEFENSES_HPP_
#define BLINDADV_DEFENSES_HPP_

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindadv/common.hpp"
#include "blindadv/generator.hpp"
#include "blindadv/models.hpp"

namespace blindadv {

enum class DefenseKind { kNone, kTailored, kFlip, kGradientReg, kRegion };

std::string to_string(DefenseKind kind);
DefenseKind defense_from_string(const std::string& name);

struct DefenseConfig {
  DefenseKind kind = DefenseKind::kNone;
  double lambda = 10.0;  // input_gradient_reg weight
  // Flips per region-classification sample; default ceil(0.025 L).
  std::optional<std::size_t> radius;
  std::size_t votes = 25;
  // Flips per augmented sample in flip_advtrain; default ceil(0.025 L).
  std::optional<std::size_t> flip_count;
  int epochs = 10;
  // tailored_advtrain: attack epochs per grid cell and the fraction of the
  // training flows perturbed by each cell when the set is extended.
  int attack_epochs = 2;
  double extend_fraction = 1.0;
  std::uint64_t seed = 0;

  std::size_t radius_for(Index length) const;
  std::size_t flip_count_for(Index length) const;
  void validate(Index length) const;
};

std::size_t default_radius(Index length);

// SU-DU plus SU-DT toward every class, all sharing `base`'s channels and
// budget.
std::vector<AttackConfig> full_attack_grid(const AttackConfig& base, int class_count);

// Train one epoch, attack the current model with every grid cell, append the
// perturbed flows (true labels) to the training set; repeat.
Classifier tailored_adversarial_training(Arch arch, const FeatureSet& train,
                                         const std::vector<AttackConfig>& grid,
                                         const TrainConfig& config, int attack_epochs = 2,
                                         double extend_fraction = 1.0);

// Copy of `x` with `count` distinct non-pad direction entries sign-flipped.
Matrix flip_directions(const Matrix& x, const FeatureLayout& layout, std::size_t count, Rng& rng);

// Every sample is trained on together with one flipped copy (1:1).
Classifier flip_adversarial_training(Arch arch, const FeatureSet& train, std::size_t flip_count,
                                     const TrainConfig& config);

// Cross-entropy plus lambda * ||d loss / d x||^2 for one sample; accumulates
// `weight` times the parameter gradient. The penalty's parameter gradient
// uses a finite difference of parameter gradients along the input gradient.
double gradient_regularized_loss(const Classifier& model, const Matrix& x, int label,
                                 double lambda, double weight,
                                 std::vector<nn::Gradients<double>>* grads);

Classifier gradient_regularized_training(Arch arch, const FeatureSet& train, double lambda,
                                         const TrainConfig& config);

double mean_input_gradient_norm(const Classifier& model, const FeatureSet& set);

// Majority class over `votes` copies of `x`, each with `radius` non-pad
// directions flipped. Ties go to the lowest class.
int region_classify(const Classifier& model, const Matrix& x, std::size_t radius,
                    std::size_t votes, std::uint64_t seed);

struct DefendedModel {
  Classifier model;
  DefenseConfig config;
};

// Trains `train` under `defense`; `attack` is the strength used for the
// tailored grid.
DefendedModel train_defended(Arch arch, const FeatureSet& train, const DefenseConfig& defense,
                             const TrainConfig& config, const AttackConfig& attack);

// Prediction through the defense (region classification votes, others plain).
int defended_predict(const DefendedModel& d, const Matrix& x, std::uint64_t seed);
double defended_accuracy(const DefendedModel& d, const FeatureSet& set, std::uint64_t seed);

struct RobustReport {
  std::string defense;
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
};

// Adaptive attacker: trains `attack` against the defended model (the base
// network for region classification) on `attack_train`, then measures
// accuracy on `test` with the perturbation applied.
RobustReport robust_accuracy(const DefendedModel& d, const FeatureSet& attack_train,
                             const FeatureSet& test, const AttackConfig& attack);

nlohmann::json defense_config_to_json(const DefenseConfig& cfg);
DefenseConfig defense_config_from_json(const nlohmann::json& j);

}  // namespace blindadv

#endif  // BLINDADV_DEFENSES_HPP_
