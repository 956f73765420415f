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


#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include <gtest/gtest.h>

#include "blindadv/metrics.hpp"

namespace blindadv {
namespace {

class FittedDirection : public ::testing::Test {
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
    TrainConfig cfg;
    cfg.epochs = 8;
    fit_.emplace(fit_classifier(Arch::kDirectionCnn, train_, test_, cfg));
    AttackConfig a;
    a.channels = {Channel::kDirectionInjection};
    a.insert_count = 30;
    a.epochs = 4;
    a.batch_size = 16;
    a.seed = 8;
    gen_.emplace(train_blind_perturbation(fit_->model, train_, a));
  }

  static FeatureSet train_, test_;
  static std::optional<FitResult> fit_;
  static std::optional<PerturbationGenerator> gen_;
};

FeatureSet FittedDirection::train_;
FeatureSet FittedDirection::test_;
std::optional<FitResult> FittedDirection::fit_;
std::optional<PerturbationGenerator> FittedDirection::gen_;

AttackConfig targeted(const AttackConfig& base, int t) {
  AttackConfig a = base;
  a.dest_mode = DestMode::kTargeted;
  a.target_class = t;
  return a;
}

TEST(Overhead, InjectionFormula) {
  EXPECT_EQ(injection_overhead_percent(1000, 5000), 25.0);
  EXPECT_EQ(injection_overhead_percent(500, 5000), 11.11);
  EXPECT_EQ(injection_overhead_percent(0, 5000), 0.0);
  EXPECT_EQ(injection_overhead_percent(50, 500), 11.11);
  EXPECT_EQ(injection_overhead_percent(5000, 5000), std::numeric_limits<double>::infinity());
  EXPECT_THROW(injection_overhead_percent(5001, 5000), ValidationError);
  EXPECT_EQ(truncate2(66.666666), 66.66);
  EXPECT_EQ(truncate2(2.0408), 2.04);
}

TEST(Overhead, LaplaceJitterMatchesRequestedMoments) {
  const FeatureLayout layout = layout_for(Arch::kPairCnn);
  const Perturbation p = laplace_jitter(layout, 20000, 0.0, 0.02, 3);
  ASSERT_EQ(p.timing_shift.rows(), static_cast<Index>(layout.timing_rows.size()));
  for (Index r = 0; r < p.timing_shift.rows(); ++r) {
    const Vector row = p.timing_shift.row(r).transpose();
    EXPECT_NEAR(row.mean(), 0.0, 1e-3);
    EXPECT_NEAR(std::sqrt((row.array() - row.mean()).square().mean()), 0.02, 1e-3);
  }
  FeatureSet set;
  set.inputs.push_back(Matrix::Constant(layout.rows, 20000, 10.0));
  set.labels.push_back(1);
  AttackConfig cfg;
  cfg.channels = {Channel::kTiming};
  const OverheadStats o = overhead(set, p, cfg, layout);
  EXPECT_NEAR(o.latency_mean, 0.0, 1e-3);
  EXPECT_NEAR(o.latency_std, 0.02, 1e-3);
  EXPECT_EQ(o.bandwidth_percent, 0.0);
}

TEST_F(FittedDirection, NoOpAttackEqualsCleanErrorRate) {
  const Classifier& m = fit_->model;
  const Perturbation none;
  const AttackReport r = attack_success(m, none, test_, gen_->config());
  EXPECT_NEAR(r.success, 1.0 - accuracy(m, test_), 1e-12);
  EXPECT_EQ(r.clean_accuracy, r.perturbed_accuracy);
  // Relabel by the model's own output: a perfect classifier cannot be fooled.
  FeatureSet perfect = test_;
  for (std::size_t i = 0; i < perfect.size(); ++i) perfect.labels[i] = m.predict(perfect.inputs[i]);
  EXPECT_EQ(attack_success(m, none, perfect, gen_->config()).success, 0.0);
}

TEST_F(FittedDirection, TargetedSuccessWhenEveryOutputIsTheTarget) {
  const Classifier& m = fit_->model;
  const Matrix& x0 = test_.inputs[0];
  const int t = m.predict(x0);
  FeatureSet same;
  for (int k = 0; k < 12; ++k) {
    same.inputs.push_back(x0);
    same.labels.push_back((t + 1 + k % 3) % 4);
  }
  same.class_count = 4;
  const AttackReport r = attack_success(m, Perturbation{}, same, targeted(gen_->config(), t));
  EXPECT_EQ(r.success, 1.0);
  EXPECT_EQ(r.mode, "SU-DT");
}

TEST_F(FittedDirection, TargetedNeverExceedsUntargeted) {
  const Classifier& m = fit_->model;
  const Perturbation p = sample_remapped(*gen_, 0);
  for (int t = 0; t < 4; ++t) {
    const AttackReport dt = attack_success(m, p, test_, targeted(gen_->config(), t));
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < test_.size(); ++i) {
      if (test_.labels[i] != t) keep.push_back(i);
    }
    const AttackReport du = attack_success(m, p, subset(test_, keep), gen_->config());
    EXPECT_EQ(dt.evaluated, keep.size());
    EXPECT_LE(dt.success, du.success + 1e-12) << "target " << t;
  }
}

TEST_F(FittedDirection, SuccessIsInvariantUnderPermutation) {
  const Classifier& m = fit_->model;
  const Perturbation p = sample_remapped(*gen_, 2);
  std::vector<std::size_t> order(test_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(4);
  std::shuffle(order.begin(), order.end(), rng);
  const AttackReport a = attack_success(m, p, test_, gen_->config());
  const AttackReport b = attack_success(m, p, subset(test_, order), gen_->config());
  EXPECT_EQ(a.success, b.success);
  EXPECT_EQ(report_to_json(a), report_to_json(b));
}

TEST_F(FittedDirection, PerClassAndOverheadFields) {
  const AttackReport r = attack_success(fit_->model, *gen_, test_, 0);
  EXPECT_EQ(r.evaluated, test_.size());
  std::size_t total = 0;
  double weighted = 0;
  for (const ClassSuccess& c : r.per_class) {
    total += c.count;
    weighted += c.success * static_cast<double>(c.count);
  }
  EXPECT_EQ(total, r.evaluated);
  EXPECT_NEAR(weighted / static_cast<double>(total), r.success, 1e-12);
  EXPECT_EQ(r.overhead.bandwidth_percent, injection_overhead_percent(30, 200));
  EXPECT_NEAR(perturbed_accuracy(fit_->model, sample_remapped(*gen_, 0), test_),
              r.perturbed_accuracy, 1e-12);
}

TEST_F(FittedDirection, TransferabilityEdgeCases) {
  const Classifier& m = fit_->model;
  const Perturbation p = sample_remapped(*gen_, 0);
  const TransferResult self = transferability(m, m, p, test_);
  ASSERT_TRUE(self.ratio.has_value());
  EXPECT_EQ(*self.ratio, 1.0);
  EXPECT_EQ(self.original_fooled, self.surrogate_fooled);
  const TransferResult none = transferability(m, m, Perturbation{}, test_);
  EXPECT_EQ(none.surrogate_fooled, 0u);
  EXPECT_FALSE(none.ratio.has_value());
  const Classifier other(Arch::kDirectionCnn, 100, 4, ArchOptions{}, 1);
  EXPECT_THROW(transferability(other, m, p, test_), ConfigError);
}

TEST(Targeted, SummaryTiesGoToLowestClass) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const TargetedSummary s = summarize_targeted({0.5, nan, 0.2, 0.9, 0.2, 0.9});
  EXPECT_EQ(s.min_target, 2);
  EXPECT_EQ(s.min, 0.2);
  EXPECT_EQ(s.max_target, 3);
  EXPECT_EQ(s.max, 0.9);
}

TEST(Correlation, ZeroPerturbationKeepsCleanTruePositives) {
  const SynthOptions o{.class_count = 2, .per_class = 25, .min_length = 80, .max_length = 120};
  const PairDataset pairs = make_pairs(synth_corpus(o), 9, 2, 50);
  const FeatureSet set = make_features(pairs);
  const Classifier m(Arch::kPairCnn, 50, 2, ArchOptions{}, 3);
  const auto roc = correlation_roc(m, Perturbation{}, set, {0.01, 0.1, 0.5});
  ASSERT_EQ(roc.size(), 3u);
  for (const RocPoint& pt : roc) EXPECT_EQ(pt.tp, pt.clean_tp);
  EXPECT_LE(roc[0].clean_tp, roc[2].clean_tp);
  // 450 negatives cannot resolve FP = 1e-3.
  EXPECT_THROW(correlation_roc(m, Perturbation{}, set, {1e-3}), ValidationError);
  const Classifier dir(Arch::kDirectionCnn, 50, 2, ArchOptions{}, 3);
  EXPECT_THROW(correlation_roc(dir, Perturbation{}, set, {0.1}), ConfigError);
}

TEST_F(FittedDirection, ReportSerializationRoundTrip) {
  AttackReport r = attack_success(fit_->model, *gen_, test_, 0);
  r.targeted = summarize_targeted({0.1, 0.4, 0.3, 0.2});
  r.transfer = TransferResult{10, 4, 8, 0.5};
  r.roc = {{0.01, 0.7, 0.95, 0.2}};
  const nlohmann::json j = report_to_json(r);
  EXPECT_NO_THROW(validate_report_json(j));
  EXPECT_EQ(report_to_json(report_from_json(j)), j);
  nlohmann::json broken = j;
  broken.erase("success");
  EXPECT_THROW(validate_report_json(broken), ValidationError);

  std::ostringstream text;
  write_report_text(text, r);
  for (const char* field : {"SU-DU", "success", "overhead"}) {
    EXPECT_NE(text.str().find(field), std::string::npos) << field;
  }
  std::ostringstream table, csv;
  write_sweep_table(table, "alpha", {10, 30}, {r, r});
  write_sweep_csv(csv, "alpha", {10, 30}, {r, r});
  const std::string rows = csv.str();
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 3);
  EXPECT_NE(table.str().find("alpha"), std::string::npos);
}

}  // namespace
}  // namespace blindadv
