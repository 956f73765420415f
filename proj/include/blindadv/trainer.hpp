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

#ifndef BLINDADV_TRAINER_HPP_
#define BLINDADV_TRAINER_HPP_

#include <functional>

#include "blindadv/models.hpp"
#include "blindadv/nn.hpp"

namespace blindadv {

// Per-sample training objective: returns the sample's loss and accumulates
// `weight` times its parameter gradient into `grads`.
using SampleLoss = std::function<double(const Classifier& model, const Matrix& x, int label,
                                        double weight,
                                        std::vector<nn::Gradients<double>>& grads, Rng& rng)>;

// Mini-batch Adam training that keeps optimizer state across epochs, so
// callers can interleave epochs with other work (adversarial training).
class ClassifierTrainer {
 public:
  ClassifierTrainer(Classifier& model, const TrainConfig& config);

  // One pass over `set` in a shuffled order; returns the mean sample loss.
  // An empty `sample_loss` means plain cross-entropy.
  double epoch(const FeatureSet& set, Rng& rng, const SampleLoss& sample_loss = {});

 private:
  Classifier& model_;
  TrainConfig config_;
  nn::Adam<double> optimizer_;
};

}  // namespace blindadv

#endif  // BLINDADV_TRAINER_HPP_
