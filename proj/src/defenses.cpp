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

#include "blindadv/defenses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "blindadv/metrics.hpp"
#include "blindadv/trainer.hpp"

namespace blindadv {

namespace {

constexpr std::array<std::pair<DefenseKind, const char*>, 5> kDefenseNames = {{
    {DefenseKind::kNone, "none"},
    {DefenseKind::kTailored, "tailored_advtrain"},
    {DefenseKind::kFlip, "flip_advtrain"},
    {DefenseKind::kGradientReg, "input_gradient_reg"},
    {DefenseKind::kRegion, "region_classification"},
}};

// Step length of the finite difference along the input gradient.
constexpr double kDoubleBackpropStep = 1e-3;

Index direction_row_of(const FeatureLayout& layout) {
  if (!layout.direction_row) throw ConfigError("defense needs a direction channel");
  return *layout.direction_row;
}

Classifier fresh_model(Arch arch, const FeatureSet& train, const TrainConfig& config) {
  if (train.size() == 0) throw ValidationError("empty training set");
  return Classifier(arch, train.length(), train.class_count, config.arch, config.seed);
}

}  // namespace

std::string to_string(DefenseKind kind) {
  for (const auto& [k, name] : kDefenseNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

DefenseKind defense_from_string(const std::string& name) {
  for (const auto& [k, n] : kDefenseNames) {
    if (name == n) return k;
  }
  throw ConfigError("unknown defense '" + name + "'");
}

std::size_t default_radius(Index length) {
  return static_cast<std::size_t>(std::ceil(0.025 * static_cast<double>(length) - 1e-9));
}

std::size_t DefenseConfig::radius_for(Index length) const {
  return radius.value_or(default_radius(length));
}

std::size_t DefenseConfig::flip_count_for(Index length) const {
  return flip_count.value_or(default_radius(length));
}

void DefenseConfig::validate(Index length) const {
  if (!(lambda > 0.0)) throw ConfigError("defense: lambda must be > 0");
  if (votes < 1) throw ConfigError("defense: votes must be >= 1");
  if (radius_for(length) > static_cast<std::size_t>(length)) {
    throw ConfigError("defense: radius exceeds flow length");
  }
  if (flip_count_for(length) > static_cast<std::size_t>(length)) {
    throw ConfigError("defense: flip count exceeds flow length");
  }
  if (epochs < 0 || attack_epochs < 1) throw ConfigError("defense: bad epoch count");
  if (!(extend_fraction > 0.0 && extend_fraction <= 1.0)) {
    throw ConfigError("defense: extend_fraction must be in (0, 1]");
  }
}

std::vector<AttackConfig> full_attack_grid(const AttackConfig& base, int class_count) {
  std::vector<AttackConfig> grid;
  AttackConfig du = base;
  du.source_mode = SourceMode::kUntargeted;
  du.source_classes.clear();
  du.dest_mode = DestMode::kUntargeted;
  du.target_class = -1;
  grid.push_back(du);
  for (int t = 0; t < class_count; ++t) {
    AttackConfig dt = du;
    dt.dest_mode = DestMode::kTargeted;
    dt.target_class = t;
    dt.seed = derive_seed(base.seed, static_cast<std::uint64_t>(t) + 1);
    grid.push_back(dt);
  }
  return grid;
}

Classifier tailored_adversarial_training(Arch arch, const FeatureSet& train,
                                         const std::vector<AttackConfig>& grid,
                                         const TrainConfig& config, int attack_epochs,
                                         double extend_fraction) {
  Classifier model = fresh_model(arch, train, config);
  ClassifierTrainer trainer(model, config);
  Rng rng(derive_seed(config.seed, 1));
  Rng pick(derive_seed(config.seed, 2));
  FeatureSet current = train;
  const auto take = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(extend_fraction * static_cast<double>(train.size()))));
  for (int e = 0; e < config.epochs; ++e) {
    trainer.epoch(current, rng);
    FeatureSet extra;
    extra.class_count = train.class_count;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      AttackConfig cell = grid[k];
      cell.epochs = attack_epochs;
      cell.seed = derive_seed(grid[k].seed, static_cast<std::uint64_t>(e) * 7919 + k);
      const PerturbationGenerator gen = train_blind_perturbation(model, train, cell);
      const Perturbation p = sample_remapped(gen, derive_seed(cell.seed, 3));
      std::vector<std::size_t> order(train.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), pick);
      order.resize(std::min(take, order.size()));
      std::sort(order.begin(), order.end());
      for (std::size_t i : order) {
        extra.inputs.push_back(apply_perturbation(train.inputs[i], p, model.layout()));
        extra.labels.push_back(train.labels[i]);
      }
    }
    current.inputs.insert(current.inputs.end(), extra.inputs.begin(), extra.inputs.end());
    current.labels.insert(current.labels.end(), extra.labels.begin(), extra.labels.end());
  }
  return model;
}

Matrix flip_directions(const Matrix& x, const FeatureLayout& layout, std::size_t count, Rng& rng) {
  const Index row = direction_row_of(layout);
  std::vector<Index> live;
  for (Index i = 0; i < x.cols(); ++i) {
    if (x(row, i) != 0.0) live.push_back(i);
  }
  if (count > live.size()) throw ValidationError("flip count exceeds non-pad packets");
  Matrix out = x;
  // Partial Fisher-Yates: the first `count` entries become a uniform sample.
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> d(k, live.size() - 1);
    std::swap(live[k], live[d(rng)]);
    out(row, live[k]) = -out(row, live[k]);
  }
  return out;
}

Classifier flip_adversarial_training(Arch arch, const FeatureSet& train, std::size_t flip_count,
                                     const TrainConfig& config) {
  Classifier model = fresh_model(arch, train, config);
  if (flip_count > static_cast<std::size_t>(train.length())) {
    throw ConfigError("flip count exceeds flow length");
  }
  const FeatureLayout layout = model.layout();
  direction_row_of(layout);
  ClassifierTrainer trainer(model, config);
  Rng rng(derive_seed(config.seed, 1));
  const SampleLoss loss = [&](const Classifier& m, const Matrix& x, int y, double w,
                              std::vector<nn::Gradients<double>>& g, Rng& r) {
    if (flip_count == 0) return m.backprop(x, y, w, &g, nullptr);
    const double clean = m.backprop(x, y, 0.5 * w, &g, nullptr);
    const double flipped = m.backprop(flip_directions(x, layout, flip_count, r), y, 0.5 * w, &g, nullptr);
    return 0.5 * (clean + flipped);
  };
  for (int e = 0; e < config.epochs; ++e) trainer.epoch(train, rng, loss);
  return model;
}

double gradient_regularized_loss(const Classifier& model, const Matrix& x, int label,
                                 double lambda, double weight,
                                 std::vector<nn::Gradients<double>>* grads) {
  Matrix g;
  const double ce = model.backprop(x, label, 1.0, nullptr, &g);
  const double norm2 = g.squaredNorm();
  if (!grads) return ce + lambda * norm2;
  const double norm = std::sqrt(norm2);
  if (norm < 1e-12) {
    model.backprop(x, label, weight, grads, nullptr);
    return ce + lambda * norm2;
  }
  // d/dtheta ||g||^2 = 2 (d/dh) dL/dtheta (x + h g) at h = 0.
  const double h = kDoubleBackpropStep / norm;
  const double c = 2.0 * lambda * weight / h;
  model.backprop(x, label, weight - c, grads, nullptr);
  model.backprop(x + h * g, label, c, grads, nullptr);
  return ce + lambda * norm2;
}

Classifier gradient_regularized_training(Arch arch, const FeatureSet& train, double lambda,
                                         const TrainConfig& config) {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
  Classifier model = fresh_model(arch, train, config);
  ClassifierTrainer trainer(model, config);
  Rng rng(derive_seed(config.seed, 1));
  const SampleLoss loss = [lambda](const Classifier& m, const Matrix& x, int y, double w,
                                   std::vector<nn::Gradients<double>>& g, Rng&) {
    return gradient_regularized_loss(m, x, y, lambda, w, &g);
  };
  for (int e = 0; e < config.epochs; ++e) trainer.epoch(train, rng, loss);
  return model;
}

double mean_input_gradient_norm(const Classifier& model, const FeatureSet& set) {
  if (set.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    total += model.loss_gradient(set.inputs[i], set.labels[i]).norm();
  }
  return total / static_cast<double>(set.size());
}

int region_classify(const Classifier& model, const Matrix& x, std::size_t radius,
                    std::size_t votes, std::uint64_t seed) {
  if (radius == 0) return model.predict(x);
  if (votes < 1) throw ConfigError("votes must be >= 1");
  Rng rng(seed);
  std::vector<std::size_t> tally(static_cast<std::size_t>(std::max(2, model.class_count())), 0);
  for (std::size_t v = 0; v < votes; ++v) {
    ++tally[static_cast<std::size_t>(model.predict(flip_directions(x, model.layout(), radius, rng)))];
  }
  // max_element returns the first maximum, i.e. the lowest class on ties.
  return static_cast<int>(std::max_element(tally.begin(), tally.end()) - tally.begin());
}

DefendedModel train_defended(Arch arch, const FeatureSet& train, const DefenseConfig& defense,
                             const TrainConfig& config, const AttackConfig& attack) {
  defense.validate(train.length());
  TrainConfig tc = config;
  tc.epochs = defense.epochs;
  switch (defense.kind) {
    case DefenseKind::kNone:
    case DefenseKind::kRegion:
      return {fit_classifier(arch, train, FeatureSet{}, tc).model, defense};
    case DefenseKind::kTailored:
      return {tailored_adversarial_training(arch, train,
                                            full_attack_grid(attack, train.class_count), tc,
                                            defense.attack_epochs, defense.extend_fraction),
              defense};
    case DefenseKind::kFlip:
      return {flip_adversarial_training(arch, train, defense.flip_count_for(train.length()), tc),
              defense};
    case DefenseKind::kGradientReg:
      return {gradient_regularized_training(arch, train, defense.lambda, tc), defense};
  }
  throw ConfigError("unhandled defense");
}

int defended_predict(const DefendedModel& d, const Matrix& x, std::uint64_t seed) {
  if (d.config.kind != DefenseKind::kRegion) return d.model.predict(x);
  return region_classify(d.model, x, d.config.radius_for(x.cols()), d.config.votes, seed);
}

double defended_accuracy(const DefendedModel& d, const FeatureSet& set, std::uint64_t seed) {
  if (set.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    correct += defended_predict(d, set.inputs[i], derive_seed(seed, i)) == set.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

RobustReport robust_accuracy(const DefendedModel& d, const FeatureSet& attack_train,
                             const FeatureSet& test, const AttackConfig& attack) {
  RobustReport r;
  r.defense = to_string(d.config.kind);
  const std::uint64_t vote_seed = derive_seed(d.config.seed, 5);
  r.clean_accuracy = defended_accuracy(d, test, vote_seed);
  const PerturbationGenerator gen = train_blind_perturbation(d.model, attack_train, attack);
  const Perturbation p = sample_remapped(gen, derive_seed(attack.seed, 3));
  FeatureSet attacked = test;
  for (auto& x : attacked.inputs) x = apply_perturbation(x, p, d.model.layout());
  r.robust_accuracy = defended_accuracy(d, attacked, vote_seed);
  return r;
}

nlohmann::json defense_config_to_json(const DefenseConfig& c) {
  nlohmann::json j = {{"kind", to_string(c.kind)},
                      {"lambda", c.lambda},
                      {"votes", c.votes},
                      {"epochs", c.epochs},
                      {"attack_epochs", c.attack_epochs},
                      {"extend_fraction", c.extend_fraction},
                      {"seed", c.seed}};
  j["radius"] = c.radius ? nlohmann::json(*c.radius) : nlohmann::json(nullptr);
  j["flip_count"] = c.flip_count ? nlohmann::json(*c.flip_count) : nlohmann::json(nullptr);
  return j;
}

DefenseConfig defense_config_from_json(const nlohmann::json& j) {
  DefenseConfig c;
  try {
    c.kind = defense_from_string(j.value("kind", std::string("none")));
    c.lambda = j.value("lambda", c.lambda);
    c.votes = j.value("votes", c.votes);
    c.epochs = j.value("epochs", c.epochs);
    c.attack_epochs = j.value("attack_epochs", c.attack_epochs);
    c.extend_fraction = j.value("extend_fraction", c.extend_fraction);
    c.seed = j.value("seed", c.seed);
    if (j.contains("radius") && !j["radius"].is_null()) c.radius = j["radius"].get<std::size_t>();
    if (j.contains("flip_count") && !j["flip_count"].is_null()) {
      c.flip_count = j["flip_count"].get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("defense config: ") + e.what());
  }
  for (const auto& [key, _] : j.items()) {
    static const std::vector<std::string> known = {"kind", "lambda", "votes", "epochs",
                                                   "attack_epochs", "extend_fraction", "seed",
                                                   "radius", "flip_count"};
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("defense config: unknown key '" + key + "'");
    }
  }
  return c;
}

}  // namespace blindadv
