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

// Small replicas of the attacked traffic classifiers:
//
//   direction_cnn  direction sequence -> website class (Deep Fingerprinting)
//   twobranch      direction + IPD branches -> website class (Var-CNN)
//   pair_cnn       8-row flow pair -> correlation score (DeepCorr)
//
// Every model consumes a fixed-length feature matrix (rows x length) whose
// row meaning is described by its FeatureLayout.

#ifndef BLINDADV_MODELS_HPP_
#define BLINDADV_MODELS_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "blindadv/common.hpp"
#include "blindadv/nn.hpp"
#include "blindadv/traffic.hpp"

namespace blindadv {

enum class Arch { kDirectionCnn, kPairCnn, kTwoBranch };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& name);

struct FeatureLayout {
  Index rows = 0;
  std::optional<Index> direction_row;
  std::vector<Index> timing_rows;  // IPD rows an attacker may delay
  std::vector<Index> size_rows;    // size rows an attacker may pad
  // Rows that shift when packets are injected, and where injected values go.
  std::vector<Index> insert_rows;
  std::optional<Index> insert_timing_row;
  std::optional<Index> insert_size_row;
};

FeatureLayout layout_for(Arch arch);

// Model inputs for one split.
struct FeatureSet {
  std::vector<Matrix> inputs;
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const { return inputs.size(); }
  Index length() const { return inputs.empty() ? 0 : inputs.front().cols(); }
};

Matrix flow_features(Arch arch, const Flow& flow, std::size_t length);
Matrix pair_features(const FlowPair& pair);
FeatureSet make_features(Arch arch, const Dataset& dataset, std::size_t length = 0);
FeatureSet make_features(const PairDataset& pairs);
FeatureSet subset(const FeatureSet& set, const std::vector<std::size_t>& indices);

struct ArchOptions {
  int filters1 = 16;
  int filters2 = 32;
  int kernel = 8;
  int pool = 4;
  int hidden = 64;
};

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  ArchOptions arch;
  // pair_cnn: false-positive rate used to pick the decision threshold.
  double target_fp = 1e-2;
};

struct TrainReport {
  int epochs = 0;
  double train_accuracy = 0.0;
  // Classification accuracy, or TP at target_fp for pair_cnn.
  double test_accuracy = 0.0;
  std::uint64_t seed = 0;
};

class Classifier {
 public:
  Classifier(Arch arch, Index input_length, int class_count,
             const ArchOptions& options, std::uint64_t seed);

  Arch arch() const { return arch_; }
  Index input_length() const { return length_; }
  int class_count() const { return classes_; }
  const ArchOptions& options() const { return options_; }
  const FeatureLayout& layout() const { return layout_; }
  bool is_pair_model() const { return arch_ == Arch::kPairCnn; }

  // Raw network output: class logits, or a single correlation logit.
  Vector logits(const Matrix& x) const;
  // Class probabilities; for pair_cnn [1 - score, score].
  Vector probabilities(const Matrix& x) const;
  // pair_cnn correlation score in [0, 1].
  double score(const Matrix& x) const;
  // Class index; pair_cnn: 1 iff score > threshold().
  int predict(const Matrix& x) const;

  double loss(const Matrix& x, int target) const;
  // d(loss)/d(x), same shape as x.
  Matrix loss_gradient(const Matrix& x, int target) const;
  // Loss, parameter gradients (accumulated into `grads` when non-empty,
  // scaled by `weight`) and optionally the input gradient.
  double backprop(const Matrix& x, int target, double weight,
                  std::vector<nn::Gradients<double>>* grads, Matrix* input_grad) const;

  double threshold() const { return threshold_; }
  void set_threshold(double t) { threshold_ = t; }

  const Vector& input_scale() const { return input_scale_; }

  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  // One buffer set per sub-network (branches then head).
  std::vector<nn::Gradients<double>> zero_gradients() const;
  std::vector<Matrix*> flat_parameters();

 private:
  void check_input(const Matrix& x) const;
  Matrix scaled(const Matrix& x) const;

  Arch arch_;
  Index length_;
  int classes_;
  ArchOptions options_;
  FeatureLayout layout_;
  Vector input_scale_;  // fixed per-row normalization
  std::vector<nn::Sequential<double>> branches_;
  std::vector<std::vector<Index>> branch_rows_;
  nn::Sequential<double> head_;
  double threshold_ = 0.5;
};

struct FitResult {
  Classifier model;
  TrainReport report;
};

// Generic mini-batch training on prepared features. `test` may be empty.
FitResult fit_classifier(Arch arch, const FeatureSet& train, const FeatureSet& test,
                         const TrainConfig& config);
// Continues training an existing model for config.epochs epochs.
void train_epochs(Classifier& model, const FeatureSet& train, const TrainConfig& config,
                  std::uint64_t shuffle_seed);

FitResult train_classifier(Arch arch, const Dataset& train, const Dataset& test,
                           const TrainConfig& config);
// Picks the threshold on `validation` negatives to hit config.target_fp.
FitResult train_classifier(Arch arch, const PairDataset& train,
                           const PairDataset& validation, const PairDataset& test,
                           const TrainConfig& config);

double accuracy(const Classifier& model, const FeatureSet& set);

// Largest threshold t with (#negative scores > t) <= fp * #negatives.
double threshold_for_fp(const std::vector<double>& negative_scores, double fp);
double true_positive_rate(const std::vector<double>& positive_scores, double threshold);

void save_classifier(const std::filesystem::path& path, const Classifier& model);
Classifier load_classifier(const std::filesystem::path& path);

}  // namespace blindadv

#endif  // BLINDADV_MODELS_HPP_
