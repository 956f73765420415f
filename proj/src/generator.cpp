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

#include "blindadv/generator.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>

#include "blindadv/checkpoint.hpp"
#include "blindadv/traffic.hpp"

namespace blindadv {

namespace {

constexpr std::array<std::pair<Channel, const char*>, 5> kChannelNames = {{
    {Channel::kTiming, "timing"},
    {Channel::kSize, "size"},
    {Channel::kDirectionInjection, "direction-injection"},
    {Channel::kTimingInjection, "timing-injection"},
    {Channel::kSizeInjection, "size-injection"},
}};

Index rows_of(const std::vector<Index>& v) { return static_cast<Index>(v.size()); }

}  // namespace

std::string to_string(Channel channel) {
  for (const auto& [c, name] : kChannelNames) {
    if (c == channel) return name;
  }
  return "unknown";
}

Channel channel_from_string(const std::string& name) {
  for (const auto& [c, n] : kChannelNames) {
    if (name == n) return c;
  }
  throw ConfigError("unknown channel '" + name + "'");
}

double LaplaceParams::stddev() const { return std::sqrt(2.0) * scale; }

bool AttackConfig::has(Channel c) const {
  return std::find(channels.begin(), channels.end(), c) != channels.end();
}

bool AttackConfig::injects() const {
  return has(Channel::kDirectionInjection) || has(Channel::kTimingInjection) ||
         has(Channel::kSizeInjection);
}

std::string AttackConfig::mode_name() const {
  return std::string(source_mode == SourceMode::kTargeted ? "ST" : "SU") + "-" +
         (dest_mode == DestMode::kTargeted ? "DT" : "DU");
}

void validate_attack(const AttackConfig& cfg, const FeatureLayout& layout, int class_count) {
  if (cfg.channels.empty()) throw ConfigError("attack needs at least one channel");
  if (cfg.has(Channel::kTiming)) {
    if (layout.timing_rows.empty()) throw ConfigError("model has no timing channel to perturb");
    try {
      cfg.timing.validate();
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
  }
  if (cfg.has(Channel::kSize)) {
    if (layout.size_rows.empty()) throw ConfigError("model has no size channel to perturb");
    try {
      cfg.size.validate();
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
  }
  if (cfg.has(Channel::kDirectionInjection) && !layout.direction_row) {
    throw ConfigError("model has no direction channel for injection");
  }
  if (cfg.has(Channel::kTimingInjection) && !layout.insert_timing_row) {
    throw ConfigError("model has no timing channel for injection");
  }
  if (cfg.has(Channel::kSizeInjection) && !layout.insert_size_row) {
    throw ConfigError("model has no size channel for injection");
  }
  if (!cfg.injects() && cfg.insert_count > 0) {
    throw ConfigError("insert_count set without an injection channel");
  }
  if (cfg.source_mode == SourceMode::kTargeted) {
    if (cfg.source_classes.empty()) throw ConfigError("ST attack needs source classes");
    for (int c : cfg.source_classes) {
      if (c < 0 || c >= class_count) throw ConfigError("ST source class out of range");
    }
  }
  if (cfg.dest_mode == DestMode::kTargeted &&
      (cfg.target_class < 0 || cfg.target_class >= class_count)) {
    throw ConfigError("DT target class out of range");
  }
  if (cfg.invisibility) {
    if (!cfg.has(Channel::kTiming)) throw ConfigError("invisibility needs the timing channel");
    if (!(cfg.laplace.scale > 0)) throw ConfigError("Laplace scale must be positive");
  }
  if (cfg.epochs < 0 || cfg.batch_size == 0 || cfg.trigger_dim == 0 || cfg.hidden == 0) {
    throw ConfigError("invalid training hyperparameters");
  }
}

Vector PerturbationBundle::flatten() const {
  const Index n = timing.size() + size.size() + positions.size() + inject_timing.size() +
                  inject_size.size();
  Vector out(n);
  Index o = 0;
  auto put = [&](const auto& m) {
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) out(o++) = m(r, c);
    }
  };
  put(timing);
  put(size);
  put(positions.transpose());
  put(inject_timing.transpose());
  put(inject_size.transpose());
  return out;
}

PerturbationGenerator::PerturbationGenerator(const AttackConfig& cfg, Arch arch, Index length)
    : config_(cfg), arch_(arch), layout_(layout_for(arch)), length_(length) {
  Rng rng(derive_seed(cfg.seed, 11));
  network_.add(nn::Dense<double>(static_cast<int>(cfg.trigger_dim), static_cast<int>(cfg.hidden), rng))
      .add(nn::Relu<double>{})
      .add(nn::Dense<double>(static_cast<int>(cfg.hidden), static_cast<int>(output_size()), rng));
  // Each block starts near its budget's natural unit: seconds of sigma for
  // timing, bytes of n for sizes, unit scores for positions.
  output_scale_ = Vector::Ones(output_size());
  Index o = 0;
  auto fill = [&](Index rows, double value) {
    output_scale_.segment(o, rows * length_).setConstant(value);
    o += rows * length_;
  };
  if (cfg.has(Channel::kTiming)) fill(rows_of(layout_.timing_rows), cfg.timing.sigma);
  if (cfg.has(Channel::kSize)) fill(rows_of(layout_.size_rows), cfg.size.per_packet);
  if (cfg.injects()) fill(1, 1.0);
  if (cfg.has(Channel::kTimingInjection)) fill(1, cfg.timing.sigma);
  if (cfg.has(Channel::kSizeInjection)) fill(1, cfg.size.per_packet);
}

Index PerturbationGenerator::output_size() const {
  Index rows = 0;
  if (config_.has(Channel::kTiming)) rows += rows_of(layout_.timing_rows);
  if (config_.has(Channel::kSize)) rows += rows_of(layout_.size_rows);
  if (config_.injects()) rows += 1;
  if (config_.has(Channel::kTimingInjection)) rows += 1;
  if (config_.has(Channel::kSizeInjection)) rows += 1;
  return rows * length_;
}

Vector PerturbationGenerator::draw_trigger(Rng& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector z(static_cast<Index>(config_.trigger_dim));
  for (Index i = 0; i < z.size(); ++i) z(i) = u(rng);
  return z;
}

Matrix PerturbationGenerator::forward(const Matrix& triggers) const {
  return output_scale_.asDiagonal() * network_.forward(triggers);
}

PerturbationBundle PerturbationGenerator::unflatten(const Vector& raw) const {
  if (raw.size() != output_size()) throw ShapeError("generator output size mismatch");
  PerturbationBundle b;
  Index o = 0;
  auto take = [&](Index rows) {
    Matrix m(rows, length_);
    for (Index r = 0; r < rows; ++r) {
      m.row(r) = raw.segment(o, length_).transpose();
      o += length_;
    }
    return m;
  };
  if (config_.has(Channel::kTiming)) b.timing = take(rows_of(layout_.timing_rows));
  if (config_.has(Channel::kSize)) b.size = take(rows_of(layout_.size_rows));
  if (config_.injects()) b.positions = take(1).row(0).transpose();
  if (config_.has(Channel::kTimingInjection)) b.inject_timing = take(1).row(0).transpose();
  if (config_.has(Channel::kSizeInjection)) b.inject_size = take(1).row(0).transpose();
  return b;
}

PerturbationBundle PerturbationGenerator::generate(const Vector& trigger) const {
  return unflatten(forward(trigger).col(0));
}

PerturbationBundle sample_perturbation(const PerturbationGenerator& gen, std::uint64_t seed) {
  Rng rng(seed);
  return gen.generate(gen.draw_trigger(rng));
}

Perturbation sample_remapped(const PerturbationGenerator& gen, std::uint64_t seed) {
  return remap(sample_perturbation(gen, seed), gen.config(), gen.layout());
}

Perturbation remap(const PerturbationBundle& bundle, const AttackConfig& cfg,
                   const FeatureLayout& layout) {
  Perturbation p;
  if (cfg.has(Channel::kTiming)) {
    p.timing_shift.resize(bundle.timing.rows(), bundle.timing.cols());
    for (Index r = 0; r < bundle.timing.rows(); ++r) {
      p.timing_shift.row(r) = timing_shift(bundle.timing.row(r).transpose(), cfg.timing).transpose();
    }
  }
  if (cfg.has(Channel::kSize)) {
    p.size_added.resize(bundle.size.rows(), bundle.size.cols());
    for (Index r = 0; r < bundle.size.rows(); ++r) {
      p.size_added.row(r) = size_additions(bundle.size.row(r).transpose(), cfg.size).transpose();
    }
  }
  if (cfg.injects()) {
    InsertionPlan plan;
    plan.position_scores = bundle.positions;
    plan.count = cfg.insert_count;
    std::vector<Index> valued;
    if (cfg.has(Channel::kTimingInjection)) {
      plan.value_vectors.push_back(bundle.inject_timing.cwiseMax(0.0));
      p.insertion.value_rows.push_back(*layout.insert_timing_row);
    }
    if (cfg.has(Channel::kSizeInjection)) {
      plan.value_vectors.push_back(bundle.inject_size.cwiseMax(0.0).array().round().matrix());
      p.insertion.value_rows.push_back(*layout.insert_size_row);
    }
    for (Index r : layout.insert_rows) {
      if (layout.direction_row && r == *layout.direction_row) {
        p.insertion.direction_row = r;
      } else if (std::find(p.insertion.value_rows.begin(), p.insertion.value_rows.end(), r) ==
                 p.insertion.value_rows.end()) {
        p.insertion.filler_rows.push_back(r);
      }
    }
    p.map = insertion_map(plan);
    p.plan = std::move(plan);
  }
  return p;
}

Matrix apply_perturbation(const Matrix& x, const Perturbation& p, const FeatureLayout& layout) {
  Matrix out = x;
  for (Index k = 0; k < p.timing_shift.rows(); ++k) {
    const Index r = layout.timing_rows[static_cast<std::size_t>(k)];
    out.row(r) = (x.row(r) + p.timing_shift.row(k)).cwiseMax(0.0);
  }
  for (Index k = 0; k < p.size_added.rows(); ++k) {
    const Index r = layout.size_rows[static_cast<std::size_t>(k)];
    out.row(r) += p.size_added.row(k);
  }
  if (p.plan) out = insert_packets(out, *p.plan, p.insertion, p.map);
  return out;
}

PerturbationBundle perturbation_gradient(const PerturbationBundle& bundle,
                                         const Perturbation& p, const AttackConfig& cfg,
                                         const FeatureLayout& layout,
                                         const std::vector<Matrix>& clean_inputs,
                                         const std::vector<Matrix>& perturbed_grads) {
  if (clean_inputs.size() != perturbed_grads.size() || perturbed_grads.empty()) {
    throw ShapeError("perturbation_gradient: batch mismatch");
  }
  PerturbationBundle grad;
  std::vector<Matrix> pre_insert = perturbed_grads;

  if (p.plan) {
    // Feature rows of the injected channels drive the position gradient.
    std::vector<Index> feature_rows;
    if (cfg.has(Channel::kDirectionInjection)) feature_rows.push_back(*layout.direction_row);
    feature_rows.insert(feature_rows.end(), p.insertion.value_rows.begin(),
                        p.insertion.value_rows.end());
    std::vector<Matrix> channel_grads;
    channel_grads.reserve(perturbed_grads.size());
    for (const Matrix& g : perturbed_grads) {
      Matrix m(static_cast<Index>(feature_rows.size()), g.cols());
      for (std::size_t k = 0; k < feature_rows.size(); ++k) {
        m.row(static_cast<Index>(k)) = g.row(feature_rows[k]);
      }
      channel_grads.push_back(to_original_coordinates(m, p.map));
    }
    grad.positions = insertion_position_gradient(channel_grads);

    for (std::size_t k = 0; k < p.insertion.value_rows.size(); ++k) {
      Vector sum = Vector::Zero(p.plan->length());
      for (const Matrix& g : perturbed_grads) {
        sum += to_original_coordinates(g.row(p.insertion.value_rows[k]), p.map).row(0).transpose();
      }
      Vector vg = insertion_value_gradient(*p.plan, sum);
      const bool timing_value =
          cfg.has(Channel::kTimingInjection) && k == 0;
      (timing_value ? grad.inject_timing : grad.inject_size) = std::move(vg);
    }

    // Route gradients of surviving original packets back to their origin.
    for (std::size_t b = 0; b < perturbed_grads.size(); ++b) {
      const Matrix& g = perturbed_grads[b];
      Matrix& out = pre_insert[b];
      for (Index r : layout.insert_rows) {
        out.row(r).setZero();
        for (std::size_t j = 0; j < p.map.source.size(); ++j) {
          const Index src = p.map.source[j];
          if (src >= 0) out(r, src) = g(r, static_cast<Index>(j));
        }
      }
    }
  }

  if (cfg.has(Channel::kTiming)) {
    grad.timing.resize(bundle.timing.rows(), bundle.timing.cols());
    for (Index k = 0; k < bundle.timing.rows(); ++k) {
      const Index r = layout.timing_rows[static_cast<std::size_t>(k)];
      Vector dshift = Vector::Zero(bundle.timing.cols());
      for (std::size_t b = 0; b < pre_insert.size(); ++b) {
        const auto kept =
            ((clean_inputs[b].row(r) + p.timing_shift.row(k)).array() > 0.0).transpose();
        dshift += kept.select(pre_insert[b].row(r).transpose(), 0.0).matrix();
      }
      grad.timing.row(k) =
          remap_timing_backward(bundle.timing.row(k).transpose(), dshift, cfg.timing).transpose();
    }
  }
  if (cfg.has(Channel::kSize)) {
    grad.size.resize(bundle.size.rows(), bundle.size.cols());
    for (Index k = 0; k < bundle.size.rows(); ++k) {
      const Index r = layout.size_rows[static_cast<std::size_t>(k)];
      std::vector<Vector> rows;
      rows.reserve(pre_insert.size());
      for (const Matrix& g : pre_insert) rows.push_back(g.row(r).transpose());
      grad.size.row(k) = size_gradient(rows).transpose();
    }
  }
  return grad;
}

Discriminator::Discriminator(Index input_size, std::size_t hidden, double input_scale,
                             std::uint64_t seed)
    : input_size_(input_size), input_scale_(input_scale) {
  Rng rng(seed);
  const int h = static_cast<int>(hidden);
  network_.add(nn::Dense<double>(static_cast<int>(input_size), h, rng))
      .add(nn::Relu<double>{})
      .add(nn::Dense<double>(h, h, rng))
      .add(nn::Relu<double>{})
      .add(nn::Dense<double>(h, 1, rng));
}

double Discriminator::probability(const Vector& x) const {
  if (x.size() != input_size_) throw ShapeError("discriminator input size mismatch");
  return nn::sigmoid(network_.forward(input_scale_ * x)(0, 0));
}

double Discriminator::backprop(const Matrix& x, const std::vector<int>& labels,
                               nn::Gradients<double>* grads, Matrix* input_grad) const {
  if (x.rows() != input_size_ || static_cast<std::size_t>(x.cols()) != labels.size()) {
    throw ShapeError("discriminator batch shape mismatch");
  }
  const auto trace = network_.forward_trace(input_scale_ * x);
  const Matrix& z = trace.back();
  const auto n = static_cast<double>(x.cols());
  Matrix dz(1, x.cols());
  double loss = 0.0;
  for (Index c = 0; c < x.cols(); ++c) {
    double d = 0.0;
    loss += nn::binary_cross_entropy(z(0, c), labels[static_cast<std::size_t>(c)], &d);
    dz(0, c) = d / n;
  }
  const Matrix dx = network_.backward(
      trace, dz, grads ? std::span<Matrix>(*grads) : std::span<Matrix>{});
  if (input_grad) *input_grad = input_scale_ * dx;
  return loss / n;
}

Vector laplace_vector(Rng& rng, const LaplaceParams& laplace, Index size) {
  Vector v(size);
  for (Index i = 0; i < size; ++i) v(i) = sample_laplace(rng, laplace.location, laplace.scale);
  return v;
}

Discriminator make_discriminator(const PerturbationGenerator& gen) {
  const auto& cfg = gen.config();
  const Index input = rows_of(gen.layout().timing_rows) * gen.length();
  const double sd = cfg.laplace.stddev() > 0 ? cfg.laplace.stddev() : cfg.timing.sigma;
  return Discriminator(input, cfg.discriminator_hidden, 1.0 / sd, derive_seed(cfg.seed, 13));
}

FeatureSet filter_sources(const FeatureSet& data, const AttackConfig& cfg) {
  if (cfg.source_mode == SourceMode::kUntargeted) return data;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (std::find(cfg.source_classes.begin(), cfg.source_classes.end(), data.labels[i]) !=
        cfg.source_classes.end()) {
      keep.push_back(i);
    }
  }
  return subset(data, keep);
}

std::vector<int> attack_targets(const Classifier& model, const FeatureSet& data,
                                const AttackConfig& cfg) {
  std::vector<int> targets(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    targets[i] = cfg.dest_mode == DestMode::kTargeted ? cfg.target_class
                                                      : model.predict(data.inputs[i]);
  }
  return targets;
}

BlindPerturbationTrainer::BlindPerturbationTrainer(const Classifier& model,
                                                   PerturbationGenerator gen,
                                                   std::optional<Discriminator> disc)
    : model_(model), gen_(std::move(gen)), gen_opt_(gen_.config().learning_rate),
      disc_(std::move(disc)), rng_(derive_seed(gen_.config().seed, 12)) {
  if (gen_.arch() != model.arch() || gen_.length() != model.input_length()) {
    throw ConfigError("generator was built for a different model input");
  }
  if (disc_) disc_opt_.emplace(gen_.config().discriminator_learning_rate);
}

double BlindPerturbationTrainer::discriminator_step(const Matrix& fake, EpochStats* stats) {
  const LaplaceParams& laplace = gen_.config().laplace;
  const Index k = fake.cols();
  Matrix x(fake.rows(), 2 * k);
  x.leftCols(k) = fake;
  std::vector<int> labels(static_cast<std::size_t>(2 * k), 0);
  for (Index c = 0; c < k; ++c) {
    x.col(k + c) = laplace_vector(rng_, laplace, fake.rows());
    labels[static_cast<std::size_t>(c)] = 1;
  }
  auto grads = disc_->network().zero_gradients();
  const double loss = disc_->backprop(x, labels, &grads, nullptr);
  if (stats) {
    std::size_t correct = 0;
    for (Index c = 0; c < 2 * k; ++c) {
      const bool says_fake = disc_->probability(x.col(c)) > 0.5;
      correct += says_fake == (labels[static_cast<std::size_t>(c)] == 1);
    }
    stats->discriminator_accuracy = static_cast<double>(correct) / static_cast<double>(2 * k);
  }
  disc_opt_->step(disc_->network().parameters(), grads);
  return loss;
}

double BlindPerturbationTrainer::step(const std::vector<const Matrix*>& batch,
                                      std::vector<int> targets, EpochStats* stats) {
  if (batch.empty()) throw ValidationError("empty attack batch");
  const AttackConfig& cfg = gen_.config();
  const FeatureLayout& layout = gen_.layout();
  const std::size_t extra = disc_ ? std::max<std::size_t>(cfg.discriminator_batch, 1) - 1 : 0;

  Matrix triggers(static_cast<Index>(cfg.trigger_dim), static_cast<Index>(1 + extra));
  for (Index c = 0; c < triggers.cols(); ++c) triggers.col(c) = gen_.draw_trigger(rng_);
  const auto trace = gen_.network().forward_trace(triggers);
  const Matrix raw = gen_.output_scale().asDiagonal() * trace.back();

  const PerturbationBundle bundle = gen_.unflatten(raw.col(0));
  const Perturbation pert = remap(bundle, cfg, layout);

  // Loss to minimise: -J + w R. For DU, J = mean l(f(x'), f(x)); for DT,
  // J = -mean l(f(x'), target).
  const double sign = cfg.dest_mode == DestMode::kTargeted ? 1.0 : -1.0;
  const double weight = sign / static_cast<double>(batch.size());
  std::vector<Matrix> clean, grads;
  clean.reserve(batch.size());
  grads.reserve(batch.size());
  double mean_loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Matrix xp = apply_perturbation(*batch[i], pert, layout);
    Matrix g;
    mean_loss += model_.backprop(xp, targets[i], weight, nullptr, &g);
    clean.push_back(*batch[i]);
    grads.push_back(std::move(g));
  }
  mean_loss /= static_cast<double>(batch.size());
  const double objective = cfg.dest_mode == DestMode::kTargeted ? -mean_loss : mean_loss;

  Matrix draw = Matrix::Zero(raw.rows(), raw.cols());
  draw.col(0) = perturbation_gradient(bundle, pert, cfg, layout, clean, grads).flatten();

  if (disc_) {
    const Index timing_size = bundle.timing.size();
    // Timing block sits first in the raw output.
    const Matrix fake = raw.topRows(timing_size);
    discriminator_step(fake, stats);
    Matrix dfake;
    const std::vector<int> want_real(static_cast<std::size_t>(fake.cols()), 0);
    const double reg = disc_->backprop(fake, want_real, nullptr, &dfake);
    draw.topRows(timing_size) += cfg.regularizer_weight * dfake;
    if (stats) stats->regularizer = reg;
  }

  auto pgrads = gen_.network().zero_gradients();
  gen_.network().backward(trace, gen_.output_scale().asDiagonal() * draw, pgrads);
  gen_opt_.step(gen_.network().parameters(), pgrads);
  return objective;
}

EpochStats BlindPerturbationTrainer::epoch(const FeatureSet& all) {
  const AttackConfig& cfg = gen_.config();
  const FeatureSet data = filter_sources(all, cfg);
  if (data.size() == 0) throw ValidationError("no training flows left after source filtering");
  const std::vector<int> targets = attack_targets(model_, data, cfg);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);

  EpochStats total;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    std::vector<const Matrix*> batch;
    std::vector<int> tgt;
    for (std::size_t k = start; k < end; ++k) {
      batch.push_back(&data.inputs[order[k]]);
      tgt.push_back(targets[order[k]]);
    }
    EpochStats s;
    total.objective += step(batch, std::move(tgt), &s);
    total.regularizer += s.regularizer;
    total.discriminator_accuracy += s.discriminator_accuracy;
    ++batches;
  }
  const auto nb = static_cast<double>(batches);
  total.objective /= nb;
  total.regularizer /= nb;
  total.discriminator_accuracy /= nb;
  return total;
}

PerturbationGenerator train_blind_perturbation(const Classifier& model, const FeatureSet& data,
                                               const AttackConfig& cfg, TrainingLog* log) {
  validate_attack(cfg, model.layout(), model.class_count());
  PerturbationGenerator gen(cfg, model.arch(), model.input_length());
  std::optional<Discriminator> disc;
  if (cfg.invisibility) disc.emplace(make_discriminator(gen));
  BlindPerturbationTrainer trainer(model, std::move(gen), std::move(disc));
  for (int e = 0; e < cfg.epochs; ++e) {
    const EpochStats s = trainer.epoch(data);
    if (log) log->epochs.push_back(s);
  }
  return trainer.generator();
}

RegularizedGenerator train_laplace_regularizer(PerturbationGenerator gen, Discriminator disc,
                                               const LaplaceParams& laplace,
                                               const FeatureSet& data, const Classifier& model,
                                               int epochs) {
  gen.mutable_config().invisibility = true;
  gen.mutable_config().laplace = laplace;
  validate_attack(gen.config(), model.layout(), model.class_count());
  BlindPerturbationTrainer trainer(model, std::move(gen), std::move(disc));
  TrainingLog log;
  for (int e = 0; e < epochs; ++e) log.epochs.push_back(trainer.epoch(data));
  return {trainer.generator(), *trainer.discriminator(), std::move(log)};
}

double discriminator_accuracy(const Discriminator& disc, const PerturbationGenerator& gen,
                              const LaplaceParams& laplace, std::size_t samples,
                              std::uint64_t seed) {
  if (samples == 0) throw ValidationError("need at least one sample");
  Rng rng(seed);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const PerturbationBundle b = gen.generate(gen.draw_trigger(rng));
    const Vector fake = Eigen::Map<const Vector>(Matrix(b.timing.transpose()).data(), b.timing.size());
    if (disc.probability(fake) > 0.5) ++correct;
    if (disc.probability(laplace_vector(rng, laplace, disc.input_size())) <= 0.5) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(2 * samples);
}

nlohmann::json attack_config_to_json(const AttackConfig& c) {
  nlohmann::json channels = nlohmann::json::array();
  for (Channel ch : c.channels) channels.push_back(to_string(ch));
  return {
      {"source_mode", c.source_mode == SourceMode::kTargeted ? "ST" : "SU"},
      {"source_classes", c.source_classes},
      {"dest_mode", c.dest_mode == DestMode::kTargeted ? "DT" : "DU"},
      {"target_class", c.target_class},
      {"channels", channels},
      {"timing", {{"mu", c.timing.mu}, {"sigma", c.timing.sigma}}},
      {"size", {{"N", c.size.total}, {"n", c.size.per_packet}, {"s", c.size.cell}}},
      {"alpha", c.insert_count},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"trigger_dim", c.trigger_dim},
      {"hidden", c.hidden},
      {"invisibility",
       {{"enabled", c.invisibility},
        {"location", c.laplace.location},
        {"scale", c.laplace.scale},
        {"weight", c.regularizer_weight},
        {"discriminator_learning_rate", c.discriminator_learning_rate},
        {"discriminator_hidden", c.discriminator_hidden},
        {"discriminator_batch", c.discriminator_batch}}},
      {"seed", c.seed},
  };
}

namespace {

void require_known(const nlohmann::json& j, const char* block,
                   std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(std::string(block) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) ==
        known.end()) {
      throw ConfigError(std::string(block) + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig c;
  require_known(j, "attack",
                {"source_mode", "source_classes", "dest_mode", "target_class", "channels",
                 "timing", "size", "alpha", "epochs", "batch_size", "learning_rate",
                 "trigger_dim", "hidden", "invisibility", "seed"});
  if (j.contains("timing")) require_known(j["timing"], "attack.timing", {"mu", "sigma"});
  if (j.contains("size")) require_known(j["size"], "attack.size", {"N", "n", "s"});
  if (j.contains("invisibility")) {
    require_known(j["invisibility"], "attack.invisibility",
                  {"enabled", "location", "scale", "weight", "discriminator_learning_rate",
                   "discriminator_hidden", "discriminator_batch"});
  }
  try {
    const std::string src = j.value("source_mode", "SU");
    if (src != "SU" && src != "ST") throw ConfigError("source_mode must be SU or ST");
    c.source_mode = src == "ST" ? SourceMode::kTargeted : SourceMode::kUntargeted;
    c.source_classes = j.value("source_classes", std::vector<int>{});
    const std::string dst = j.value("dest_mode", "DU");
    if (dst != "DU" && dst != "DT") throw ConfigError("dest_mode must be DU or DT");
    c.dest_mode = dst == "DT" ? DestMode::kTargeted : DestMode::kUntargeted;
    c.target_class = j.value("target_class", -1);
    c.channels.clear();
    for (const auto& ch : j.at("channels")) c.channels.push_back(channel_from_string(ch.get<std::string>()));
    if (j.contains("timing")) {
      c.timing.mu = j["timing"].value("mu", c.timing.mu);
      c.timing.sigma = j["timing"].value("sigma", c.timing.sigma);
    }
    if (j.contains("size")) {
      c.size.total = j["size"].value("N", c.size.total);
      c.size.per_packet = j["size"].value("n", c.size.per_packet);
      c.size.cell = j["size"].value("s", c.size.cell);
    }
    c.insert_count = j.value("alpha", c.insert_count);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.trigger_dim = j.value("trigger_dim", c.trigger_dim);
    c.hidden = j.value("hidden", c.hidden);
    if (j.contains("invisibility")) {
      const auto& v = j["invisibility"];
      c.invisibility = v.value("enabled", false);
      c.laplace.location = v.value("location", 0.0);
      c.laplace.scale = v.value("scale", 0.0);
      c.regularizer_weight = v.value("weight", c.regularizer_weight);
      c.discriminator_learning_rate =
          v.value("discriminator_learning_rate", c.discriminator_learning_rate);
      c.discriminator_hidden = v.value("discriminator_hidden", c.discriminator_hidden);
      c.discriminator_batch = v.value("discriminator_batch", c.discriminator_batch);
    }
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad attack config: ") + e.what());
  }
  return c;
}

void save_generator(const std::filesystem::path& path, const PerturbationGenerator& gen) {
  Checkpoint ckpt;
  ckpt.kind = "generator";
  ckpt.header = {{"arch", to_string(gen.arch())},
                 {"length", gen.length()},
                 {"config", attack_config_to_json(gen.config())}};
  for (const Matrix* p : gen.network().parameters()) ckpt.tensors.push_back(*p);
  write_checkpoint(path, ckpt);
}

PerturbationGenerator load_generator(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path, "generator");
  try {
    const AttackConfig cfg = attack_config_from_json(ckpt.header.at("config"));
    PerturbationGenerator gen(cfg, arch_from_string(ckpt.header.at("arch").get<std::string>()),
                              ckpt.header.at("length").get<Index>());
    auto params = gen.network().parameters();
    if (params.size() != ckpt.tensors.size()) {
      throw ValidationError("generator checkpoint tensor count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->rows() != ckpt.tensors[i].rows() ||
          params[i]->cols() != ckpt.tensors[i].cols()) {
        throw ValidationError("generator checkpoint tensor shape mismatch");
      }
      *params[i] = ckpt.tensors[i];
    }
    return gen;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad generator header: ") + e.what());
  }
}

PerturbationGenerator load_generator(const std::filesystem::path& path,
                                     const AttackConfig& expected, Arch arch) {
  PerturbationGenerator gen = load_generator(path);
  std::vector<Channel> have = gen.config().channels, want = expected.channels;
  std::sort(have.begin(), have.end());
  std::sort(want.begin(), want.end());
  if (have != want || gen.arch() != arch) {
    throw ConfigError("generator checkpoint was trained for a different attack (" +
                      to_string(gen.arch()) + ")");
  }
  return gen;
}

}  // namespace blindadv
