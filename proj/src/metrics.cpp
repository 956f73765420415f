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

#include "blindadv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "blindadv/traffic.hpp"

namespace blindadv {

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

double perturbed_accuracy(const Classifier& model, const Perturbation& p,
                          const FeatureSet& set) {
  if (set.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (model.predict(apply_perturbation(set.inputs[i], p, model.layout())) == set.labels[i]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

AttackReport attack_success(const Classifier& model, const Perturbation& p,
                            const FeatureSet& testset, const AttackConfig& cfg) {
  FeatureSet set = filter_sources(testset, cfg);
  const bool targeted = cfg.dest_mode == DestMode::kTargeted;
  if (targeted) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set.labels[i] != cfg.target_class) keep.push_back(i);
    }
    set = subset(set, keep);
  }
  if (set.size() == 0) throw ValidationError("attack_success: no flows left to evaluate");

  AttackReport r;
  r.mode = cfg.mode_name();
  r.config = attack_config_to_json(cfg);
  r.evaluated = set.size();

  std::map<int, std::pair<std::size_t, std::size_t>> by_class;  // label -> (hits, count)
  std::size_t hits = 0, clean_correct = 0, perturbed_correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const int y = set.labels[i];
    const int clean = model.predict(set.inputs[i]);
    const int out = model.predict(apply_perturbation(set.inputs[i], p, model.layout()));
    const bool hit = targeted ? out == cfg.target_class : out != y;
    hits += hit;
    clean_correct += clean == y;
    perturbed_correct += out == y;
    auto& c = by_class[y];
    c.first += hit;
    ++c.second;
  }
  const auto n = static_cast<double>(set.size());
  r.success = static_cast<double>(hits) / n;
  r.clean_accuracy = static_cast<double>(clean_correct) / n;
  r.perturbed_accuracy = static_cast<double>(perturbed_correct) / n;
  for (const auto& [label, c] : by_class) {
    r.per_class.push_back(
        {label, c.second, static_cast<double>(c.first) / static_cast<double>(c.second)});
  }
  r.overhead = overhead(set, p, cfg, model.layout());
  return r;
}

AttackReport attack_success(const Classifier& model, const PerturbationGenerator& gen,
                            const FeatureSet& testset, std::uint64_t seed) {
  return attack_success(model, sample_remapped(gen, seed), testset, gen.config());
}

TargetedSummary summarize_targeted(const std::vector<double>& per_target) {
  TargetedSummary s;
  s.per_target = per_target;
  for (std::size_t t = 0; t < per_target.size(); ++t) {
    const double v = per_target[t];
    if (std::isnan(v)) continue;
    if (s.min_target < 0 || v < s.min) {
      s.min = v;
      s.min_target = static_cast<int>(t);
    }
    if (s.max_target < 0 || v > s.max) {
      s.max = v;
      s.max_target = static_cast<int>(t);
    }
  }
  return s;
}

double truncate2(double value) {
  // The epsilon keeps exact values such as 25.0 from landing on 24.99.
  const double scaled = value * 100.0;
  return std::trunc(scaled + (scaled >= 0 ? 1e-7 : -1e-7)) / 100.0;
}

double injection_overhead_percent(std::size_t alpha, std::size_t length) {
  if (alpha > length) throw ValidationError("insertion count exceeds flow length");
  if (alpha == 0) return 0.0;
  if (alpha == length) return std::numeric_limits<double>::infinity();
  return truncate2(static_cast<double>(alpha) / static_cast<double>(length - alpha) * 100.0);
}

OverheadStats overhead(const FeatureSet& set, const Perturbation& p, const AttackConfig& cfg,
                       const FeatureLayout& layout) {
  OverheadStats o;
  const auto length = static_cast<std::size_t>(set.length());
  if (cfg.injects() && length > 0) {
    o.bandwidth_percent = injection_overhead_percent(std::min(cfg.insert_count, length), length);
  }

  double original_bytes = 0.0, added_bytes = 0.0;
  double delay_sum = 0.0, delay_sq = 0.0;
  std::size_t delays = 0;
  for (const Matrix& x : set.inputs) {
    for (Index r : layout.size_rows) original_bytes += x.row(r).sum();
    if (p.size_added.size() > 0) added_bytes += p.size_added.sum();
    for (Index k = 0; k < p.timing_shift.rows(); ++k) {
      const Index r = layout.timing_rows[static_cast<std::size_t>(k)];
      const Eigen::RowVectorXd added = (x.row(r) + p.timing_shift.row(k)).cwiseMax(0.0) - x.row(r);
      delay_sum += added.sum();
      delay_sq += added.squaredNorm();
      delays += static_cast<std::size_t>(added.size());
    }
    if (p.plan && layout.insert_size_row && cfg.has(Channel::kSizeInjection)) {
      const auto k = static_cast<std::size_t>(cfg.has(Channel::kTimingInjection) ? 1 : 0);
      for (Index pos : p.map.positions) added_bytes += p.plan->value_vectors[k](pos);
    }
  }
  if (original_bytes > 0) o.size_ratio = added_bytes / original_bytes;
  if (delays > 0) {
    o.latency_mean = delay_sum / static_cast<double>(delays);
    o.latency_std = std::sqrt(
        std::max(0.0, delay_sq / static_cast<double>(delays) - o.latency_mean * o.latency_mean));
  }
  return o;
}

Perturbation laplace_jitter(const FeatureLayout& layout, Index length, double mean,
                            double stddev, std::uint64_t seed) {
  Rng rng(seed);
  Perturbation p;
  const double b = stddev / std::sqrt(2.0);
  p.timing_shift.resize(static_cast<Index>(layout.timing_rows.size()), length);
  for (Index i = 0; i < p.timing_shift.size(); ++i) {
    p.timing_shift.data()[i] = sample_laplace(rng, mean, b);
  }
  return p;
}

std::vector<RocPoint> correlation_roc(const Classifier& model, const Perturbation& p,
                                      const FeatureSet& pairs, const std::vector<double>& fp_grid) {
  if (!model.is_pair_model()) throw ConfigError("correlation_roc needs a pair_cnn model");
  std::vector<double> negatives, clean, perturbed;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs.labels[i] == 0) {
      negatives.push_back(model.score(pairs.inputs[i]));
    } else {
      clean.push_back(model.score(pairs.inputs[i]));
      perturbed.push_back(model.score(apply_perturbation(pairs.inputs[i], p, model.layout())));
    }
  }
  std::vector<RocPoint> roc;
  for (double fp : fp_grid) {
    if (!(fp > 0.0) || fp * static_cast<double>(negatives.size()) < 1.0 - 1e-9) {
      throw ValidationError("FP " + fixed(fp, 6) + " is not reachable with " +
                            std::to_string(negatives.size()) + " negatives");
    }
    RocPoint pt;
    pt.fp = fp;
    pt.threshold = threshold_for_fp(negatives, fp);
    pt.clean_tp = true_positive_rate(clean, pt.threshold);
    pt.tp = true_positive_rate(perturbed, pt.threshold);
    roc.push_back(pt);
  }
  return roc;
}

TransferResult transferability(const Classifier& original, const Classifier& surrogate,
                               const Perturbation& p, const FeatureSet& testset) {
  if (original.layout().rows != surrogate.layout().rows ||
      original.input_length() != surrogate.input_length()) {
    throw ConfigError("transferability: models must share the feature representation");
  }
  TransferResult t;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    const Matrix& x = testset.inputs[i];
    const int y = testset.labels[i];
    if (original.predict(x) != y || surrogate.predict(x) != y) continue;
    ++t.eligible;
    const Matrix px = apply_perturbation(x, p, surrogate.layout());
    if (surrogate.predict(px) != y) ++t.surrogate_fooled;
    if (original.predict(px) != y) ++t.original_fooled;
  }
  if (t.surrogate_fooled > 0) {
    t.ratio = static_cast<double>(t.original_fooled) / static_cast<double>(t.surrogate_fooled);
  }
  return t;
}

nlohmann::json report_to_json(const AttackReport& r) {
  nlohmann::json j;
  j["mode"] = r.mode;
  j["config"] = r.config;
  j["success"] = r.success;
  j["evaluated"] = r.evaluated;
  j["clean_accuracy"] = r.clean_accuracy;
  j["perturbed_accuracy"] = r.perturbed_accuracy;
  j["overhead"] = {{"bandwidth_percent", r.overhead.bandwidth_percent},
                   {"size_ratio", r.overhead.size_ratio},
                   {"latency_mean", r.overhead.latency_mean},
                   {"latency_std", r.overhead.latency_std}};
  j["per_class"] = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    j["per_class"].push_back({{"label", c.label}, {"count", c.count}, {"success", c.success}});
  }
  j["roc"] = nlohmann::json::array();
  for (const auto& pt : r.roc) {
    j["roc"].push_back(
        {{"fp", pt.fp}, {"threshold", pt.threshold}, {"clean_tp", pt.clean_tp}, {"tp", pt.tp}});
  }
  if (r.targeted) {
    nlohmann::json per = nlohmann::json::array();
    for (double v : r.targeted->per_target) {
      per.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    }
    j["targeted"] = {{"per_target", per},
                     {"min_target", r.targeted->min_target},
                     {"min", r.targeted->min},
                     {"max_target", r.targeted->max_target},
                     {"max", r.targeted->max}};
  }
  if (r.transfer) {
    j["transfer"] = {{"eligible", r.transfer->eligible},
                     {"original_fooled", r.transfer->original_fooled},
                     {"surrogate_fooled", r.transfer->surrogate_fooled},
                     {"ratio", r.transfer->ratio ? nlohmann::json(*r.transfer->ratio)
                                                 : nlohmann::json(nullptr)}};
  }
  return j;
}

void validate_report_json(const nlohmann::json& j) {
  auto fail = [](const std::string& what) { throw ValidationError("report: " + what); };
  if (!j.is_object()) fail("not an object");
  for (const char* key : {"mode", "success", "evaluated", "overhead", "per_class"}) {
    if (!j.contains(key)) fail(std::string("missing '") + key + "'");
  }
  if (!j["mode"].is_string()) fail("mode must be a string");
  auto unit = [&](const nlohmann::json& v, const std::string& name) {
    if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0) {
      fail(name + " must be in [0, 1]");
    }
  };
  unit(j["success"], "success");
  if (!j["evaluated"].is_number_unsigned()) fail("evaluated must be a count");
  const auto& o = j["overhead"];
  for (const char* key : {"bandwidth_percent", "size_ratio", "latency_mean", "latency_std"}) {
    if (!o.contains(key) || !o[key].is_number()) fail(std::string("overhead.") + key);
  }
  if (o["bandwidth_percent"].get<double>() < 0 || o["size_ratio"].get<double>() < 0) {
    fail("overhead must be non-negative");
  }
  if (!j["per_class"].is_array()) fail("per_class must be an array");
  for (const auto& c : j["per_class"]) unit(c.at("success"), "per_class.success");
}

AttackReport report_from_json(const nlohmann::json& j) {
  validate_report_json(j);
  AttackReport r;
  r.mode = j.at("mode").get<std::string>();
  r.config = j.value("config", nlohmann::json::object());
  r.success = j.at("success").get<double>();
  r.evaluated = j.at("evaluated").get<std::size_t>();
  r.clean_accuracy = j.value("clean_accuracy", 0.0);
  r.perturbed_accuracy = j.value("perturbed_accuracy", 0.0);
  const auto& o = j.at("overhead");
  r.overhead = {o.at("bandwidth_percent").get<double>(), o.at("size_ratio").get<double>(),
                o.at("latency_mean").get<double>(), o.at("latency_std").get<double>()};
  for (const auto& c : j.at("per_class")) {
    r.per_class.push_back(
        {c.at("label").get<int>(), c.at("count").get<std::size_t>(), c.at("success").get<double>()});
  }
  for (const auto& pt : j.value("roc", nlohmann::json::array())) {
    r.roc.push_back({pt.at("fp").get<double>(), pt.at("threshold").get<double>(),
                     pt.at("clean_tp").get<double>(), pt.at("tp").get<double>()});
  }
  if (j.contains("targeted")) {
    const auto& t = j["targeted"];
    std::vector<double> per;
    for (const auto& v : t.at("per_target")) {
      per.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
    }
    r.targeted = summarize_targeted(per);
  }
  if (j.contains("transfer")) {
    const auto& t = j["transfer"];
    TransferResult tr;
    tr.eligible = t.at("eligible").get<std::size_t>();
    tr.original_fooled = t.at("original_fooled").get<std::size_t>();
    tr.surrogate_fooled = t.at("surrogate_fooled").get<std::size_t>();
    if (!t.at("ratio").is_null()) tr.ratio = t["ratio"].get<double>();
    r.transfer = tr;
  }
  return r;
}

void write_report_text(std::ostream& out, const AttackReport& r) {
  auto line = [&](const char* label, const std::string& value) {
    out << std::left << std::setw(24) << label << std::right << value << "\n";
  };
  line("mode", r.mode);
  line("evaluated", std::to_string(r.evaluated));
  line("success (%)", fixed(100.0 * r.success, 2));
  line("clean accuracy (%)", fixed(100.0 * r.clean_accuracy, 2));
  line("attacked accuracy (%)", fixed(100.0 * r.perturbed_accuracy, 2));
  line("bandwidth overhead (%)", fixed(r.overhead.bandwidth_percent, 2));
  line("size overhead (%)", fixed(100.0 * r.overhead.size_ratio, 2));
  line("added delay (ms)", fixed(1e3 * r.overhead.latency_mean, 3) + " +- " +
                               fixed(1e3 * r.overhead.latency_std, 3));
  if (!r.per_class.empty()) {
    out << "class  count  success(%)\n";
    for (const auto& c : r.per_class) {
      out << std::setw(5) << c.label << "  " << std::setw(5) << c.count << "  "
          << std::setw(10) << fixed(100.0 * c.success, 2) << "\n";
    }
  }
  if (!r.roc.empty()) {
    out << "fp        clean_tp  tp\n";
    for (const auto& pt : r.roc) {
      out << std::setw(8) << pt.fp << "  " << fixed(pt.clean_tp, 4) << "    " << fixed(pt.tp, 4)
          << "\n";
    }
  }
  if (r.targeted) {
    out << "min target " << r.targeted->min_target << " " << fixed(100.0 * r.targeted->min, 2)
        << "%, max target " << r.targeted->max_target << " "
        << fixed(100.0 * r.targeted->max, 2) << "%\n";
  }
  if (r.transfer) {
    out << std::left << std::setw(24) << "transfer" << std::right << r.transfer->original_fooled << "/"
        << r.transfer->surrogate_fooled << " of " << r.transfer->eligible;
    if (r.transfer->ratio) {
      out << " ratio " << fixed(100.0 * *r.transfer->ratio, 2) << "%\n";
    } else {
      out << " (no surrogate misclassifications)\n";
    }
  }
}

void write_sweep_table(std::ostream& out, const std::string& axis,
                       const std::vector<double>& values, const std::vector<AttackReport>& reports) {
  if (values.size() != reports.size()) throw ValidationError("sweep: values/reports mismatch");
  out << std::left << std::setw(12) << axis << std::right << std::setw(14) << "Overhead(%)"
      << std::setw(12) << "Mode" << std::setw(12) << "Success(%)" << std::setw(10) << "Min(%)"
      << std::setw(10) << "Max(%)" << "\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    std::ostringstream v;
    v << values[i];
    out << std::left << std::setw(12) << v.str() << std::right << std::setw(14)
        << fixed(r.overhead.bandwidth_percent, 2) << std::setw(12) << r.mode << std::setw(12)
        << fixed(100.0 * r.success, 2);
    if (r.targeted) {
      out << std::setw(10) << fixed(100.0 * r.targeted->min, 2) << std::setw(10)
          << fixed(100.0 * r.targeted->max, 2);
    } else {
      out << std::setw(10) << "-" << std::setw(10) << "-";
    }
    out << "\n";
  }
}

void write_sweep_csv(std::ostream& out, const std::string& axis,
                     const std::vector<double>& values, const std::vector<AttackReport>& reports) {
  if (values.size() != reports.size()) throw ValidationError("sweep: values/reports mismatch");
  out << axis
      << ",mode,success,evaluated,clean_accuracy,perturbed_accuracy,bandwidth_percent,"
         "size_ratio,latency_mean,latency_std,tp_at_first_fp\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out << values[i] << "," << r.mode << "," << r.success << "," << r.evaluated << ","
        << r.clean_accuracy << "," << r.perturbed_accuracy << ","
        << r.overhead.bandwidth_percent << "," << r.overhead.size_ratio << ","
        << r.overhead.latency_mean << "," << r.overhead.latency_std << ",";
    if (!r.roc.empty()) out << r.roc.front().tp;
    out << "\n";
  }
}

}  // namespace blindadv
