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

// Blind (input-agnostic) perturbation generator G(z) and its training loop.
//
// G maps a uniform random trigger z to a raw perturbation bundle. Remapping
// turns the bundle into a wire-legal Perturbation that is applied unchanged
// to every flow. Training ascends the target model's loss over mini-batches
// (untargeted) or descends the loss toward a target class (targeted), with
// gradients routed through the remapping functions. An optional GAN
// discriminator pushes the raw timing output toward a Laplace distribution.

#ifndef BLINDADV_GENERATOR_HPP_
#define BLINDADV_GENERATOR_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindadv/common.hpp"
#include "blindadv/models.hpp"
#include "blindadv/nn.hpp"
#include "blindadv/remapping.hpp"

namespace blindadv {

enum class SourceMode { kUntargeted, kTargeted };  // SU / ST
enum class DestMode { kUntargeted, kTargeted };    // DU / DT

enum class Channel {
  kTiming,
  kSize,
  kDirectionInjection,
  kTimingInjection,
  kSizeInjection,
};

std::string to_string(Channel channel);
Channel channel_from_string(const std::string& name);

struct LaplaceParams {
  double location = 0.0;
  double scale = 0.0;  // b; std = sqrt(2) * b

  double stddev() const;
};

struct AttackConfig {
  SourceMode source_mode = SourceMode::kUntargeted;
  std::vector<int> source_classes;  // ST only
  DestMode dest_mode = DestMode::kUntargeted;
  int target_class = -1;  // DT only

  std::vector<Channel> channels;
  TimingBudget timing{0.0, 0.02};
  SizeBudget size{0.0, 512.0, 512.0};
  std::size_t insert_count = 0;  // alpha

  int epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t trigger_dim = 64;
  std::size_t hidden = 500;

  // Invisibility regularizer (GAN against a Laplace reference).
  bool invisibility = false;
  LaplaceParams laplace;
  double regularizer_weight = 1.0;
  double discriminator_learning_rate = 1e-4;
  std::size_t discriminator_hidden = 1000;
  std::size_t discriminator_batch = 16;

  std::uint64_t seed = 0;

  bool has(Channel c) const;
  bool injects() const;
  std::string mode_name() const;  // e.g. "SU-DT"
};

// Throws ConfigError when the config cannot drive an attack on `layout`.
void validate_attack(const AttackConfig& cfg, const FeatureLayout& layout, int class_count);

// Raw generator output, split by role. Rows follow the layout's row lists.
struct PerturbationBundle {
  Matrix timing;         // |timing_rows| x L
  Matrix size;           // |size_rows| x L
  Vector positions;      // L, empty unless injecting
  Vector inject_timing;  // L, empty unless timing injection
  Vector inject_size;    // L, empty unless size injection

  Vector flatten() const;
};

// A remapped, input-agnostic perturbation ready to apply to any flow.
struct Perturbation {
  Matrix timing_shift;  // g~ per timing row (pre-clamp)
  Matrix size_added;    // bytes per size row
  std::optional<InsertionPlan> plan;
  InsertionLayout insertion;
  InsertionMap map;
};

Perturbation remap(const PerturbationBundle& bundle, const AttackConfig& cfg,
                   const FeatureLayout& layout);

// M(x, G(z)): timing shift (clamped at 0), then size padding, then injection.
Matrix apply_perturbation(const Matrix& x, const Perturbation& p, const FeatureLayout& layout);

// Gradient of the summed batch objective w.r.t. the raw bundle, given each
// input's gradient w.r.t. its perturbed features.
PerturbationBundle perturbation_gradient(const PerturbationBundle& bundle,
                                         const Perturbation& p, const AttackConfig& cfg,
                                         const FeatureLayout& layout,
                                         const std::vector<Matrix>& clean_inputs,
                                         const std::vector<Matrix>& perturbed_grads);

class PerturbationGenerator {
 public:
  PerturbationGenerator(const AttackConfig& cfg, Arch arch, Index length);

  const AttackConfig& config() const { return config_; }
  AttackConfig& mutable_config() { return config_; }
  Arch arch() const { return arch_; }
  const FeatureLayout& layout() const { return layout_; }
  Index length() const { return length_; }
  Index output_size() const;

  Vector draw_trigger(Rng& rng) const;
  // Fixed per-entry factor applied to the network output.
  const Vector& output_scale() const { return output_scale_; }
  // Triggers as columns -> raw outputs as columns.
  Matrix forward(const Matrix& triggers) const;
  PerturbationBundle generate(const Vector& trigger) const;
  PerturbationBundle unflatten(const Vector& raw) const;

  nn::Sequential<double>& network() { return network_; }
  const nn::Sequential<double>& network() const { return network_; }

 private:
  AttackConfig config_;
  Arch arch_;
  FeatureLayout layout_;
  Index length_;
  nn::Sequential<double> network_;
  Vector output_scale_;
};

// Raw bundle for the trigger drawn from `seed`; pure in (gen, seed).
PerturbationBundle sample_perturbation(const PerturbationGenerator& gen, std::uint64_t seed);
Perturbation sample_remapped(const PerturbationGenerator& gen, std::uint64_t seed);

// Binary classifier: generated timing perturbation (1) vs Laplace sample (0).
class Discriminator {
 public:
  Discriminator(Index input_size, std::size_t hidden, double input_scale, std::uint64_t seed);

  double probability(const Vector& x) const;  // P(generated)
  Index input_size() const { return input_size_; }
  double input_scale() const { return input_scale_; }

  // Columns of `x`, labels per column. Returns mean BCE; accumulates grads.
  double backprop(const Matrix& x, const std::vector<int>& labels,
                  nn::Gradients<double>* grads, Matrix* input_grad) const;

  nn::Sequential<double>& network() { return network_; }
  const nn::Sequential<double>& network() const { return network_; }

 private:
  Index input_size_;
  double input_scale_;
  nn::Sequential<double> network_;
};

struct EpochStats {
  double objective = 0.0;  // mean attack objective J (without regularizer)
  double regularizer = 0.0;
  double discriminator_accuracy = 0.0;
};

struct TrainingLog {
  std::vector<EpochStats> epochs;
};

// Stateful trainer; exposes a single mini-batch step for tests.
class BlindPerturbationTrainer {
 public:
  BlindPerturbationTrainer(const Classifier& model, PerturbationGenerator gen,
                           std::optional<Discriminator> disc = std::nullopt);

  // Runs one epoch over `data` (after source-class filtering).
  EpochStats epoch(const FeatureSet& data);
  // One ascent step on the given batch; returns J for it.
  double step(const std::vector<const Matrix*>& batch, std::vector<int> targets,
              EpochStats* stats = nullptr);

  const PerturbationGenerator& generator() const { return gen_; }
  PerturbationGenerator& generator() { return gen_; }
  const std::optional<Discriminator>& discriminator() const { return disc_; }

 private:
  double discriminator_step(const Matrix& fake, EpochStats* stats);

  const Classifier& model_;
  PerturbationGenerator gen_;
  nn::Adam<double> gen_opt_;
  std::optional<Discriminator> disc_;
  std::optional<nn::Adam<double>> disc_opt_;
  Rng rng_;
};

// Restricts `data` to the configured source classes (identity for SU).
FeatureSet filter_sources(const FeatureSet& data, const AttackConfig& cfg);

// The loss target for each input: f(x) for DU, the target class for DT.
std::vector<int> attack_targets(const Classifier& model, const FeatureSet& data,
                                const AttackConfig& cfg);

PerturbationGenerator train_blind_perturbation(const Classifier& model, const FeatureSet& data,
                                               const AttackConfig& cfg,
                                               TrainingLog* log = nullptr);

struct RegularizedGenerator {
  PerturbationGenerator generator;
  Discriminator discriminator;
  TrainingLog log;
};

Discriminator make_discriminator(const PerturbationGenerator& gen);

// Joint generator/discriminator training (one discriminator update per
// generator update) for `epochs` passes over `data`.
RegularizedGenerator train_laplace_regularizer(PerturbationGenerator gen, Discriminator disc,
                                               const LaplaceParams& laplace,
                                               const FeatureSet& data, const Classifier& model,
                                               int epochs);

// Accuracy of `disc` on `samples` fresh generated vectors plus as many
// Laplace vectors.
double discriminator_accuracy(const Discriminator& disc, const PerturbationGenerator& gen,
                              const LaplaceParams& laplace, std::size_t samples,
                              std::uint64_t seed);

// Vector of iid Laplace draws shaped like the generator's timing output.
Vector laplace_vector(Rng& rng, const LaplaceParams& laplace, Index size);

void save_generator(const std::filesystem::path& path, const PerturbationGenerator& gen);
PerturbationGenerator load_generator(const std::filesystem::path& path);
// Also checks the checkpoint's channels and architecture against `expected`.
PerturbationGenerator load_generator(const std::filesystem::path& path,
                                     const AttackConfig& expected, Arch arch);

nlohmann::json attack_config_to_json(const AttackConfig& cfg);
AttackConfig attack_config_from_json(const nlohmann::json& j);

}  // namespace blindadv

#endif  // BLINDADV_GENERATOR_HPP_
