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


#include <cmath>
#include <optional>
#include <random>

#include <gtest/gtest.h>

#include "blindadv/defenses.hpp"

namespace blindadv {
namespace {

class SmallCorpus : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SynthOptions o;
    o.class_count = 4;
    o.per_class = 40;
    o.min_length = 150;
    o.max_length = 300;
    o.fixed_length = 200;
    const DatasetSplits s = split_dataset(synth_corpus(o), 0.6, 0.0, 3);
    train_ = make_features(Arch::kDirectionCnn, s.train);
    test_ = make_features(Arch::kDirectionCnn, s.test);
    config_.epochs = 8;
    plain_.emplace(fit_classifier(Arch::kDirectionCnn, train_, test_, config_).model);
  }

  static FeatureSet train_, test_;
  static TrainConfig config_;
  static std::optional<Classifier> plain_;
};

FeatureSet SmallCorpus::train_;
FeatureSet SmallCorpus::test_;
TrainConfig SmallCorpus::config_;
std::optional<Classifier> SmallCorpus::plain_;

void expect_same_weights(const Classifier& a, const Classifier& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);
}

TEST(Defense, DefaultRadiusScalesWithLength) {
  EXPECT_EQ(default_radius(5000), 125u);
  EXPECT_EQ(default_radius(500), 13u);
  EXPECT_EQ(default_radius(200), 5u);
  DefenseConfig d;
  EXPECT_EQ(d.radius_for(500), 13u);
  d.radius = 7;
  EXPECT_EQ(d.radius_for(500), 7u);
}

TEST(Defense, ConfigValidationAndJson) {
  DefenseConfig d;
  d.kind = DefenseKind::kRegion;
  d.radius = 9;
  d.votes = 11;
  EXPECT_NO_THROW(d.validate(100));
  const nlohmann::json j = defense_config_to_json(d);
  EXPECT_EQ(defense_config_to_json(defense_config_from_json(j)), j);
  nlohmann::json bad = j;
  bad["vote"] = 3;
  EXPECT_THROW(defense_config_from_json(bad), ConfigError);
  d.radius = 101;
  EXPECT_THROW(d.validate(100), ConfigError);
  d.radius.reset();
  d.votes = 0;
  EXPECT_THROW(d.validate(100), ConfigError);
  d.votes = 1;
  d.lambda = 0;
  EXPECT_THROW(d.validate(100), ConfigError);
  EXPECT_THROW(defense_from_string("distillation"), ConfigError);
  for (DefenseKind k : {DefenseKind::kNone, DefenseKind::kTailored, DefenseKind::kFlip,
                        DefenseKind::kGradientReg, DefenseKind::kRegion}) {
    EXPECT_EQ(defense_from_string(to_string(k)), k);
  }
}

TEST(Defense, AttackGridCoversEveryTarget) {
  AttackConfig base;
  base.channels = {Channel::kDirectionInjection};
  base.insert_count = 10;
  const auto grid = full_attack_grid(base, 5);
  ASSERT_EQ(grid.size(), 6u);
  EXPECT_EQ(grid[0].mode_name(), "SU-DU");
  for (int t = 0; t < 5; ++t) {
    EXPECT_EQ(grid[static_cast<std::size_t>(t) + 1].dest_mode, DestMode::kTargeted);
    EXPECT_EQ(grid[static_cast<std::size_t>(t) + 1].target_class, t);
    EXPECT_EQ(grid[static_cast<std::size_t>(t) + 1].insert_count, 10u);
  }
}

TEST(Flip, FlippedEntriesStayLegal) {
  const FeatureLayout layout = layout_for(Arch::kDirectionCnn);
  Rng rng(3);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 500; ++t) {
    Matrix x = Matrix::Zero(1, 60);
    const Index live = 10 + t % 50;
    for (Index i = 0; i < live; ++i) x(0, i) = coin(rng) ? 1.0 : -1.0;
    const std::size_t count = static_cast<std::size_t>(t % 11);
    const Matrix out = flip_directions(x, layout, count, rng);
    std::size_t changed = 0;
    for (Index i = 0; i < 60; ++i) {
      if (i < live) {
        ASSERT_TRUE(out(0, i) == 1.0 || out(0, i) == -1.0);
        changed += out(0, i) != x(0, i);
      } else {
        ASSERT_EQ(out(0, i), 0.0);
      }
    }
    ASSERT_EQ(changed, count);
  }
  EXPECT_THROW(flip_directions(Matrix::Zero(1, 10), layout, 1, rng), ValidationError);
}

TEST_F(SmallCorpus, ZeroFlipsAndEmptyGridAreSameAsPlainTraining) {
  expect_same_weights(flip_adversarial_training(Arch::kDirectionCnn, train_, 0, config_), *plain_);
  expect_same_weights(tailored_adversarial_training(Arch::kDirectionCnn, train_, {}, config_),
                      *plain_);
  EXPECT_THROW(flip_adversarial_training(Arch::kDirectionCnn, train_, 201, config_), ConfigError);
}

TEST_F(SmallCorpus, RegionClassification) {
  const Classifier& m = *plain_;
  for (std::size_t i = 0; i < 30; ++i) {
    const Matrix& x = test_.inputs[i];
    EXPECT_EQ(region_classify(m, x, 0, 25, i), m.predict(x));
    EXPECT_EQ(region_classify(m, x, 5, 1, i), region_classify(m, x, 5, 1, i));
    Rng rng(i);
    EXPECT_EQ(region_classify(m, x, 5, 1, i),
              m.predict(flip_directions(x, m.layout(), 5, rng)));
  }
  DefendedModel d{m, DefenseConfig{}};
  d.config.kind = DefenseKind::kRegion;
  EXPECT_GE(defended_accuracy(d, test_, 1), accuracy(m, test_) - 0.02);
}

TEST_F(SmallCorpus, RegularizedLossAddsTheGradientPenalty) {
  const Classifier& m = *plain_;
  for (std::size_t i = 0; i < 10; ++i) {
    const Matrix& x = test_.inputs[i];
    const int y = test_.labels[i];
    const double plain = m.loss(x, y);
    const double penalty = m.loss_gradient(x, y).squaredNorm();
    EXPECT_NEAR(gradient_regularized_loss(m, x, y, 10.0, 1.0, nullptr), plain + 10.0 * penalty,
                1e-12 * (1 + plain));
    EXPECT_GE(gradient_regularized_loss(m, x, y, 10.0, 1.0, nullptr), plain);
    EXPECT_NEAR(gradient_regularized_loss(m, x, y, 1e-12, 1.0, nullptr), plain, 1e-9);
  }
}

TEST_F(SmallCorpus, RegularizedParameterGradientMatchesFiniteDifferences) {
  // Untrained weights keep the penalty large enough to measure.
  Classifier m(Arch::kDirectionCnn, 200, 4, ArchOptions{}, 21);
  Rng rng(5);
  std::normal_distribution<double> jitter(0.0, 0.05);
  Matrix x = test_.inputs[0];
  for (Index i = 0; i < x.size(); ++i) x.data()[i] += jitter(rng);
  const int y = test_.labels[0];
  const double lambda = 10.0;
  auto grads = m.zero_gradients();
  gradient_regularized_loss(m, x, y, lambda, 1.0, &grads);
  auto plain = m.zero_gradients();
  m.backprop(x, y, 1.0, &plain, nullptr);
  const auto params = m.flat_parameters();
  const auto& head = grads.back();
  double penalty_part = 0.0;
  // Output-layer weights and bias: the loss is smooth in them.
  int checked = 0;
  for (std::size_t back = 1; back <= 2; ++back) {
    Matrix& w = *params[params.size() - back];
    const Matrix& gw = head[head.size() - back];
    for (Index k = 0; k < w.size(); k += std::max<Index>(1, w.size() / 10)) {
      const double h = 1e-5;
      const double saved = w.data()[k];
      w.data()[k] = saved + h;
      const double up = gradient_regularized_loss(m, x, y, lambda, 1.0, nullptr);
      w.data()[k] = saved - h;
      const double down = gradient_regularized_loss(m, x, y, lambda, 1.0, nullptr);
      w.data()[k] = saved;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(gw.data()[k], fd, 2e-3 * std::max(1.0, std::abs(fd))) << back << ":" << k;
      penalty_part = std::max(
          penalty_part, std::abs(gw.data()[k] - plain.back()[head.size() - back].data()[k]));
      ++checked;
    }
  }
  EXPECT_GE(checked, 14);
  // The penalty must move the gradient by far more than the tolerance.
  EXPECT_GT(penalty_part, 2e-2);
}

TEST_F(SmallCorpus, GradientRegularizationSmoothsTheModel) {
  const Classifier reg = gradient_regularized_training(Arch::kDirectionCnn, train_, 10.0, config_);
  EXPECT_LT(mean_input_gradient_norm(reg, test_), mean_input_gradient_norm(*plain_, test_));
  EXPECT_GE(accuracy(reg, test_), accuracy(*plain_, test_) - 0.10);
  EXPECT_THROW(gradient_regularized_training(Arch::kDirectionCnn, train_, 0.0, config_),
               ConfigError);
}

TEST_F(SmallCorpus, DefendedModelsKeepCleanAccuracy) {
  AttackConfig attack;
  attack.channels = {Channel::kDirectionInjection};
  attack.insert_count = 20;
  attack.epochs = 2;
  attack.batch_size = 16;
  const double base = accuracy(*plain_, test_);
  for (DefenseKind kind : {DefenseKind::kTailored, DefenseKind::kFlip}) {
    DefenseConfig d;
    d.kind = kind;
    d.epochs = config_.epochs;
    d.attack_epochs = 1;
    d.extend_fraction = 0.25;
    const DefendedModel dm = train_defended(Arch::kDirectionCnn, train_, d, config_, attack);
    EXPECT_GE(defended_accuracy(dm, test_, 0), base - 0.10) << to_string(kind);
  }
}

TEST_F(SmallCorpus, RobustAccuracyUsesAnAdaptiveAttack) {
  AttackConfig attack;
  attack.channels = {Channel::kDirectionInjection};
  attack.insert_count = 30;
  attack.epochs = 3;
  attack.batch_size = 16;
  DefenseConfig none;
  const DefendedModel dm{*plain_, none};
  const RobustReport r = robust_accuracy(dm, train_, test_, attack);
  EXPECT_EQ(r.defense, "none");
  EXPECT_NEAR(r.clean_accuracy, accuracy(*plain_, test_), 1e-12);
  EXPECT_LE(r.robust_accuracy, r.clean_accuracy);
}

}  // namespace
}  // namespace blindadv
