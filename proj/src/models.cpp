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

#include "blindadv/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "blindadv/checkpoint.hpp"
#include "blindadv/trainer.hpp"

namespace blindadv {

namespace {

// IPDs are fed in units of 50 ms, sizes in kilobytes.
constexpr double kTimingScale = 20.0;
constexpr double kSizeScale = 1e-3;

nn::Sequential<double> conv_branch(int in_channels, int f1, int f2, int kernel, int pool,
                                   Rng& rng) {
  nn::Sequential<double> s;
  s.add(nn::Conv1d<double>(in_channels, f1, kernel, rng))
      .add(nn::Relu<double>{})
      .add(nn::MaxPool1d<double>{pool})
      .add(nn::Conv1d<double>(f1, f2, kernel, rng))
      .add(nn::Relu<double>{})
      .add(nn::MaxPool1d<double>{pool})
      .add(nn::Flatten<double>{});
  return s;
}

}  // namespace

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::kDirectionCnn:
      return "direction_cnn";
    case Arch::kPairCnn:
      return "pair_cnn";
    case Arch::kTwoBranch:
      return "twobranch";
  }
  return "unknown";
}

Arch arch_from_string(const std::string& name) {
  if (name == "direction_cnn") return Arch::kDirectionCnn;
  if (name == "pair_cnn") return Arch::kPairCnn;
  if (name == "twobranch") return Arch::kTwoBranch;
  throw ConfigError("unknown architecture '" + name + "'");
}

FeatureLayout layout_for(Arch arch) {
  FeatureLayout l;
  switch (arch) {
    case Arch::kDirectionCnn:
      l.rows = 1;
      l.direction_row = 0;
      l.insert_rows = {0};
      break;
    case Arch::kTwoBranch:
      l.rows = 2;
      l.direction_row = 0;
      l.timing_rows = {1};
      l.insert_rows = {0, 1};
      l.insert_timing_row = 1;
      break;
    case Arch::kPairCnn:
      // Only the ingress side is under the attacker's control.
      l.rows = FlowPair::kRows;
      l.timing_rows = {FlowPair::kIngressUpIpd, FlowPair::kIngressDownIpd};
      l.size_rows = {FlowPair::kIngressUpSize, FlowPair::kIngressDownSize};
      l.insert_rows = {FlowPair::kIngressUpIpd, FlowPair::kIngressUpSize};
      l.insert_timing_row = FlowPair::kIngressUpIpd;
      l.insert_size_row = FlowPair::kIngressUpSize;
      break;
  }
  return l;
}

Matrix flow_features(Arch arch, const Flow& flow, std::size_t length) {
  const Flow f = to_fixed_length(flow, length);
  const auto n = static_cast<Index>(length);
  switch (arch) {
    case Arch::kDirectionCnn: {
      Matrix x(1, n);
      for (Index i = 0; i < n; ++i) x(0, i) = f.directions[static_cast<std::size_t>(i)];
      return x;
    }
    case Arch::kTwoBranch: {
      Matrix x(2, n);
      for (Index i = 0; i < n; ++i) {
        x(0, i) = f.directions[static_cast<std::size_t>(i)];
        x(1, i) = f.ipds[static_cast<std::size_t>(i)];
      }
      return x;
    }
    case Arch::kPairCnn:
      throw ConfigError("pair_cnn consumes flow pairs, not single flows");
  }
  throw ConfigError("unknown architecture");
}

Matrix pair_features(const FlowPair& pair) {
  const auto n = static_cast<Index>(pair.length());
  Matrix x(FlowPair::kRows, n);
  for (int r = 0; r < FlowPair::kRows; ++r) {
    for (Index i = 0; i < n; ++i) x(r, i) = pair.rows[r][static_cast<std::size_t>(i)];
  }
  return x;
}

FeatureSet make_features(Arch arch, const Dataset& dataset, std::size_t length) {
  if (arch == Arch::kPairCnn) {
    throw ConfigError("pair_cnn needs a pair dataset (see make_pairs)");
  }
  if (length == 0) length = dataset.fixed_length;
  FeatureSet set;
  set.class_count = dataset.class_count;
  for (const Flow& f : dataset.flows) {
    set.inputs.push_back(flow_features(arch, f, length));
    set.labels.push_back(f.label);
  }
  return set;
}

FeatureSet make_features(const PairDataset& pairs) {
  FeatureSet set;
  set.class_count = 2;
  for (const FlowPair& p : pairs.pairs) {
    set.inputs.push_back(pair_features(p));
    set.labels.push_back(p.label);
  }
  return set;
}

FeatureSet subset(const FeatureSet& set, const std::vector<std::size_t>& indices) {
  FeatureSet out;
  out.class_count = set.class_count;
  for (std::size_t i : indices) {
    out.inputs.push_back(set.inputs.at(i));
    out.labels.push_back(set.labels.at(i));
  }
  return out;
}

Classifier::Classifier(Arch arch, Index input_length, int class_count,
                       const ArchOptions& options, std::uint64_t seed)
    : arch_(arch), length_(input_length), classes_(class_count), options_(options),
      layout_(layout_for(arch)) {
  if (input_length < options.pool * options.pool) {
    throw ConfigError("input length too short for the pooling stack");
  }
  if (arch != Arch::kPairCnn && class_count < 2) {
    throw ConfigError("a classifier needs at least two classes");
  }
  if (arch == Arch::kPairCnn) classes_ = 2;
  Rng rng(seed);
  const Index pooled = (input_length / options.pool) / options.pool;
  Index features = 0;
  input_scale_ = Vector::Ones(layout_.rows);
  switch (arch) {
    case Arch::kDirectionCnn:
      branches_.push_back(conv_branch(1, options.filters1, options.filters2,
                                      options.kernel, options.pool, rng));
      branch_rows_.push_back({0});
      features = options.filters2 * pooled;
      break;
    case Arch::kTwoBranch: {
      const int f1 = std::max(4, options.filters1 / 2);
      const int f2 = std::max(4, options.filters2 / 2);
      for (Index r = 0; r < 2; ++r) {
        branches_.push_back(conv_branch(1, f1, f2, options.kernel, options.pool, rng));
        branch_rows_.push_back({r});
      }
      features = 2 * f2 * pooled;
      input_scale_(1) = kTimingScale;
      break;
    }
    case Arch::kPairCnn: {
      branches_.push_back(conv_branch(FlowPair::kRows, options.filters1, options.filters2,
                                      options.kernel, options.pool, rng));
      std::vector<Index> rows(FlowPair::kRows);
      std::iota(rows.begin(), rows.end(), Index{0});
      branch_rows_.push_back(rows);
      features = options.filters2 * pooled;
      for (int r = 0; r < FlowPair::kRows; ++r) {
        input_scale_(r) = r < FlowPair::kIngressUpSize ? kTimingScale : kSizeScale;
      }
      break;
    }
  }
  head_.add(nn::Dense<double>(static_cast<int>(features), options.hidden, rng))
      .add(nn::Relu<double>{})
      .add(nn::Dense<double>(options.hidden, arch == Arch::kPairCnn ? 1 : classes_, rng));
}

void Classifier::check_input(const Matrix& x) const {
  if (x.rows() != layout_.rows || x.cols() != length_) {
    throw ShapeError(to_string(arch_) + " expects a " + std::to_string(layout_.rows) + "x" +
                     std::to_string(length_) + " input, got " + std::to_string(x.rows()) +
                     "x" + std::to_string(x.cols()));
  }
}

Matrix Classifier::scaled(const Matrix& x) const {
  return input_scale_.asDiagonal() * x;
}

Vector Classifier::logits(const Matrix& x) const {
  check_input(x);
  const Matrix xs = scaled(x);
  std::vector<Matrix> parts;
  Index total = 0;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Matrix sub(static_cast<Index>(branch_rows_[b].size()), xs.cols());
    for (std::size_t k = 0; k < branch_rows_[b].size(); ++k) {
      sub.row(static_cast<Index>(k)) = xs.row(branch_rows_[b][k]);
    }
    parts.push_back(branches_[b].forward(sub));
    total += parts.back().rows();
  }
  Matrix concat(total, 1);
  Index offset = 0;
  for (const Matrix& p : parts) {
    concat.middleRows(offset, p.rows()) = p;
    offset += p.rows();
  }
  return head_.forward(concat).col(0);
}

Vector Classifier::probabilities(const Matrix& x) const {
  const Vector z = logits(x);
  if (is_pair_model()) {
    const double s = nn::sigmoid(z(0));
    Vector p(2);
    p << 1.0 - s, s;
    return p;
  }
  return nn::softmax<double>(z).col(0);
}

double Classifier::score(const Matrix& x) const {
  if (!is_pair_model()) throw ConfigError("score() is defined for pair_cnn only");
  return nn::sigmoid(logits(x)(0));
}

int Classifier::predict(const Matrix& x) const {
  const Vector z = logits(x);
  if (is_pair_model()) return nn::sigmoid(z(0)) > threshold_ ? 1 : 0;
  Index best = 0;
  z.maxCoeff(&best);
  return static_cast<int>(best);
}

double Classifier::loss(const Matrix& x, int target) const {
  return backprop(x, target, 1.0, nullptr, nullptr);
}

Matrix Classifier::loss_gradient(const Matrix& x, int target) const {
  Matrix g;
  backprop(x, target, 1.0, nullptr, &g);
  return g;
}

double Classifier::backprop(const Matrix& x, int target, double weight,
                            std::vector<nn::Gradients<double>>* grads,
                            Matrix* input_grad) const {
  check_input(x);
  if (target < 0 || target >= classes_) throw ValidationError("target out of range");
  const Matrix xs = scaled(x);
  std::vector<nn::Sequential<double>::Trace> traces;
  Index total = 0;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Matrix sub(static_cast<Index>(branch_rows_[b].size()), xs.cols());
    for (std::size_t k = 0; k < branch_rows_[b].size(); ++k) {
      sub.row(static_cast<Index>(k)) = xs.row(branch_rows_[b][k]);
    }
    traces.push_back(branches_[b].forward_trace(sub));
    total += traces.back().back().rows();
  }
  Matrix concat(total, 1);
  Index offset = 0;
  for (const auto& t : traces) {
    concat.middleRows(offset, t.back().rows()) = t.back();
    offset += t.back().rows();
  }
  const auto head_trace = head_.forward_trace(concat);
  const Matrix& z = head_trace.back();

  double loss = 0.0;
  Matrix dz;
  if (is_pair_model()) {
    double d = 0.0;
    loss = nn::binary_cross_entropy(z(0, 0), target, &d);
    dz = Matrix::Constant(1, 1, d);
  } else {
    loss = nn::cross_entropy<double>(z, target, &dz);
  }
  if (!grads && !input_grad) return loss;
  dz *= weight;

  const bool want_params = grads != nullptr;
  const std::size_t head_index = branches_.size();
  const Matrix dconcat = head_.backward(
      head_trace, dz,
      want_params ? std::span<Matrix>((*grads)[head_index]) : std::span<Matrix>{});
  if (!input_grad && !want_params) return loss;

  Matrix dxs = Matrix::Zero(xs.rows(), xs.cols());
  offset = 0;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const Index rows = traces[b].back().rows();
    const Matrix dpart = dconcat.middleRows(offset, rows);
    offset += rows;
    const Matrix dsub = branches_[b].backward(
        traces[b], dpart, want_params ? std::span<Matrix>((*grads)[b]) : std::span<Matrix>{});
    if (input_grad) {
      for (std::size_t k = 0; k < branch_rows_[b].size(); ++k) {
        dxs.row(branch_rows_[b][k]) += dsub.row(static_cast<Index>(k));
      }
    }
  }
  if (input_grad) *input_grad = input_scale_.asDiagonal() * dxs;
  return loss;
}

std::vector<Matrix*> Classifier::parameters() {
  std::vector<Matrix*> out;
  for (auto& b : branches_) {
    for (Matrix* p : b.parameters()) out.push_back(p);
  }
  for (Matrix* p : head_.parameters()) out.push_back(p);
  return out;
}

std::vector<const Matrix*> Classifier::parameters() const {
  std::vector<const Matrix*> out;
  for (const auto& b : branches_) {
    for (const Matrix* p : b.parameters()) out.push_back(p);
  }
  for (const Matrix* p : head_.parameters()) out.push_back(p);
  return out;
}

std::vector<Matrix*> Classifier::flat_parameters() { return parameters(); }

std::vector<nn::Gradients<double>> Classifier::zero_gradients() const {
  std::vector<nn::Gradients<double>> g;
  for (const auto& b : branches_) g.push_back(b.zero_gradients());
  g.push_back(head_.zero_gradients());
  return g;
}

double accuracy(const Classifier& model, const FeatureSet& set) {
  if (set.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (model.predict(set.inputs[i]) == set.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

double threshold_for_fp(const std::vector<double>& negative_scores, double fp) {
  if (negative_scores.empty()) throw ValidationError("no negatives to calibrate on");
  std::vector<double> s = negative_scores;
  std::sort(s.begin(), s.end(), std::greater<>());
  const auto allowed = static_cast<std::size_t>(
      std::floor(fp * static_cast<double>(s.size()) + 1e-9));
  if (allowed >= s.size()) return std::numeric_limits<double>::lowest();
  return s[allowed];
}

double true_positive_rate(const std::vector<double>& positive_scores, double threshold) {
  if (positive_scores.empty()) return 0.0;
  const auto hits = std::count_if(positive_scores.begin(), positive_scores.end(),
                                  [&](double s) { return s > threshold; });
  return static_cast<double>(hits) / static_cast<double>(positive_scores.size());
}

ClassifierTrainer::ClassifierTrainer(Classifier& model, const TrainConfig& config)
    : model_(model), config_(config), optimizer_(config.learning_rate) {}

double ClassifierTrainer::epoch(const FeatureSet& set, Rng& rng, const SampleLoss& sample_loss) {
  if (set.size() == 0) throw ValidationError("empty training set");
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t batch = std::max<std::size_t>(1, config_.batch_size);
  const auto params = model_.flat_parameters();
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t end = std::min(order.size(), start + batch);
    const double weight = 1.0 / static_cast<double>(end - start);
    auto grads = model_.zero_gradients();
    for (std::size_t k = start; k < end; ++k) {
      const std::size_t i = order[k];
      total += sample_loss ? sample_loss(model_, set.inputs[i], set.labels[i], weight, grads, rng)
                           : model_.backprop(set.inputs[i], set.labels[i], weight, &grads, nullptr);
    }
    nn::Gradients<double> flat;
    for (auto& g : grads) {
      for (auto& m : g) flat.push_back(std::move(m));
    }
    optimizer_.step(params, flat);
  }
  return total / static_cast<double>(set.size());
}

void train_epochs(Classifier& model, const FeatureSet& train, const TrainConfig& config,
                  std::uint64_t shuffle_seed) {
  ClassifierTrainer trainer(model, config);
  Rng rng(shuffle_seed);
  for (int e = 0; e < config.epochs; ++e) trainer.epoch(train, rng);
}

FitResult fit_classifier(Arch arch, const FeatureSet& train, const FeatureSet& test,
                         const TrainConfig& config) {
  if (train.size() == 0) throw ValidationError("empty training set");
  Classifier model(arch, train.length(), train.class_count, config.arch, config.seed);
  train_epochs(model, train, config, derive_seed(config.seed, 1));
  TrainReport report;
  report.epochs = config.epochs;
  report.seed = config.seed;
  report.train_accuracy = accuracy(model, train);
  report.test_accuracy = test.size() ? accuracy(model, test) : 0.0;
  return {std::move(model), report};
}

FitResult train_classifier(Arch arch, const Dataset& train, const Dataset& test,
                           const TrainConfig& config) {
  if (arch == Arch::kPairCnn) {
    throw ConfigError("pair_cnn must be trained on flow pairs, not single flows");
  }
  return fit_classifier(arch, make_features(arch, train), make_features(arch, test), config);
}

FitResult train_classifier(Arch arch, const PairDataset& train, const PairDataset& validation,
                           const PairDataset& test, const TrainConfig& config) {
  if (arch != Arch::kPairCnn) {
    throw ConfigError(to_string(arch) + " cannot consume flow pairs");
  }
  const FeatureSet tr = make_features(train);
  FitResult fit = fit_classifier(arch, tr, FeatureSet{}, config);
  std::vector<double> negatives;
  for (const FlowPair& p : validation.pairs) {
    if (p.label == 0) negatives.push_back(fit.model.score(pair_features(p)));
  }
  if (!negatives.empty()) fit.model.set_threshold(threshold_for_fp(negatives, config.target_fp));
  fit.report.train_accuracy = accuracy(fit.model, tr);
  std::vector<double> positives;
  for (const FlowPair& p : test.pairs) {
    if (p.label == 1) positives.push_back(fit.model.score(pair_features(p)));
  }
  fit.report.test_accuracy = true_positive_rate(positives, fit.model.threshold());
  return fit;
}

void save_classifier(const std::filesystem::path& path, const Classifier& model) {
  Checkpoint ckpt;
  ckpt.kind = "classifier";
  ckpt.header = {
      {"arch", to_string(model.arch())},
      {"input_length", model.input_length()},
      {"class_count", model.class_count()},
      {"threshold", model.threshold()},
      {"options",
       {{"filters1", model.options().filters1},
        {"filters2", model.options().filters2},
        {"kernel", model.options().kernel},
        {"pool", model.options().pool},
        {"hidden", model.options().hidden}}},
  };
  for (const Matrix* p : model.parameters()) ckpt.tensors.push_back(*p);
  write_checkpoint(path, ckpt);
}

Classifier load_classifier(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path, "classifier");
  const auto& h = ckpt.header;
  try {
    ArchOptions o;
    o.filters1 = h.at("options").at("filters1").get<int>();
    o.filters2 = h.at("options").at("filters2").get<int>();
    o.kernel = h.at("options").at("kernel").get<int>();
    o.pool = h.at("options").at("pool").get<int>();
    o.hidden = h.at("options").at("hidden").get<int>();
    Classifier model(arch_from_string(h.at("arch").get<std::string>()),
                     h.at("input_length").get<Index>(), h.at("class_count").get<int>(), o, 0);
    model.set_threshold(h.at("threshold").get<double>());
    auto params = model.parameters();
    if (params.size() != ckpt.tensors.size()) {
      throw ValidationError("classifier checkpoint tensor count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->rows() != ckpt.tensors[i].rows() ||
          params[i]->cols() != ckpt.tensors[i].cols()) {
        throw ValidationError("classifier checkpoint tensor shape mismatch");
      }
      *params[i] = ckpt.tensors[i];
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad classifier header: ") + e.what());
  }
}

}  // namespace blindadv
