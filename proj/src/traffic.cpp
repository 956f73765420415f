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

#include "blindadv/traffic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string_view>

#include <json.hpp>

namespace blindadv {

namespace {

constexpr std::array<std::int64_t, 3> kCellSizes = {512, 1024, 1536};

std::vector<std::string_view> split_view(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
T parse_number(std::string_view token, std::size_t line, const char* what) {
  T value{};
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last) {
    throw ParseError("bad " + std::string(what) + " '" + std::string(token) +
                         "'",
                     line);
  }
  return value;
}

template <typename T>
std::vector<T> parse_list(std::string_view field, std::size_t line,
                          const char* what) {
  std::vector<T> values;
  if (field.empty()) return values;
  for (std::string_view token : split_view(field, ',')) {
    values.push_back(parse_number<T>(token, line, what));
  }
  return values;
}

// Shortest fixed-notation text that round-trips, padded to >= 6 decimals.
void append_seconds(std::string& out, double value) {
  char buf[128];
  const auto result =
      std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed);
  std::string text(buf, result.ptr);
  std::size_t dot = text.find('.');
  if (dot == std::string::npos) {
    text += '.';
    dot = text.size() - 1;
  }
  const std::size_t decimals = text.size() - dot - 1;
  if (decimals < 6) text.append(6 - decimals, '0');
  out += text;
}

double quantize_us(double seconds) { return std::round(seconds * 1e6) / 1e6; }

}  // namespace

std::size_t Flow::packet_count() const {
  std::size_t n = directions.size();
  while (n > 0 && directions[n - 1] == 0) --n;
  return n;
}

void validate_flow(const Flow& flow) {
  const std::size_t n = flow.directions.size();
  if (flow.ipds.size() != n || flow.sizes.size() != n) {
    throw ValidationError("flow vectors differ in length");
  }
  const std::size_t packets = flow.packet_count();
  for (std::size_t i = 0; i < n; ++i) {
    const int d = flow.directions[i];
    if (i < packets && d != 1 && d != -1) {
      throw ValidationError("direction at " + std::to_string(i) +
                            " is not +-1");
    }
    if (!(flow.ipds[i] >= 0.0) || !std::isfinite(flow.ipds[i])) {
      throw ValidationError("negative or non-finite IPD at " +
                            std::to_string(i));
    }
    if (flow.sizes[i] < 0) {
      throw ValidationError("negative size at " + std::to_string(i));
    }
    if (i >= packets && (flow.ipds[i] != 0.0 || flow.sizes[i] != 0)) {
      throw ValidationError("padding entry at " + std::to_string(i) +
                            " carries data");
    }
  }
  if (flow.label < 0) throw ValidationError("negative class label");
}

void validate_pair(const FlowPair& pair) {
  const std::size_t n = pair.rows[0].size();
  for (int r = 0; r < FlowPair::kRows; ++r) {
    if (pair.rows[r].size() != n) {
      throw ValidationError("pair rows differ in length");
    }
    for (double v : pair.rows[r]) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ValidationError("pair row " + std::to_string(r) +
                              " has a negative entry");
      }
      if (r >= FlowPair::kIngressUpSize && v != std::floor(v)) {
        throw ValidationError("pair size row has a fractional entry");
      }
    }
  }
  if (pair.label != 0 && pair.label != 1) {
    throw ValidationError("pair label must be 0 or 1");
  }
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kValidation:
      return "validation";
    case Split::kTest:
      return "test";
  }
  return "unknown";
}

void write_traces(std::ostream& out, const std::vector<Flow>& flows) {
  std::string line;
  for (const Flow& flow : flows) {
    line.clear();
    line += std::to_string(flow.label);
    line += '\t';
    for (std::size_t i = 0; i < flow.directions.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(flow.directions[i]);
    }
    line += '\t';
    for (std::size_t i = 0; i < flow.ipds.size(); ++i) {
      if (i) line += ',';
      append_seconds(line, flow.ipds[i]);
    }
    line += '\t';
    for (std::size_t i = 0; i < flow.sizes.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(flow.sizes[i]);
    }
    line += '\n';
    out << line;
  }
}

std::vector<Flow> read_traces(std::istream& in) {
  std::vector<Flow> flows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_view(line, '\t');
    if (fields.size() != 4) {
      throw ParseError("expected 4 tab-separated fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    Flow flow;
    flow.label = parse_number<int>(fields[0], line_no, "label");
    flow.directions = parse_list<int>(fields[1], line_no, "direction");
    flow.ipds = parse_list<double>(fields[2], line_no, "IPD");
    flow.sizes = parse_list<std::int64_t>(fields[3], line_no, "size");
    try {
      validate_flow(flow);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " +
                            e.what());
    }
    flows.push_back(std::move(flow));
  }
  return flows;
}

void save_traces(const std::filesystem::path& path, const Dataset& dataset,
                 TraceFormat /*format*/) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_traces(out, dataset.flows);
}

Dataset load_traces(const std::filesystem::path& path, TraceFormat /*format*/) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  Dataset dataset;
  dataset.flows = read_traces(in);
  int max_label = -1;
  std::size_t longest = 0;
  for (const Flow& f : dataset.flows) {
    max_label = std::max(max_label, f.label);
    longest = std::max(longest, f.length());
  }
  dataset.class_count = max_label + 1;
  dataset.fixed_length = longest;
  return dataset;
}

Flow to_fixed_length(const Flow& flow, std::size_t length) {
  Flow out;
  out.label = flow.label;
  out.directions.assign(length, 0);
  out.ipds.assign(length, 0.0);
  out.sizes.assign(length, 0);
  const std::size_t keep = std::min(length, flow.length());
  std::copy_n(flow.directions.begin(), keep, out.directions.begin());
  std::copy_n(flow.ipds.begin(), keep, out.ipds.begin());
  std::copy_n(flow.sizes.begin(), keep, out.sizes.begin());
  return out;
}

DirectionalSeries split_by_direction(const Flow& flow) {
  DirectionalSeries series;
  double now = 0.0, last_up = 0.0, last_down = 0.0;
  const std::size_t packets = flow.packet_count();
  for (std::size_t i = 0; i < packets; ++i) {
    now += flow.ipds[i];
    const double size = static_cast<double>(flow.sizes[i]);
    if (flow.directions[i] > 0) {
      series.up_ipds.push_back(quantize_us(now - last_up));
      series.up_sizes.push_back(size);
      last_up = now;
    } else {
      series.down_ipds.push_back(quantize_us(now - last_down));
      series.down_sizes.push_back(size);
      last_down = now;
    }
  }
  return series;
}

FlowPair make_pair(const Flow& ingress, const Flow& egress, int label,
                   std::size_t length) {
  const DirectionalSeries a = split_by_direction(ingress);
  const DirectionalSeries b = split_by_direction(egress);
  FlowPair pair;
  pair.label = label;
  auto fit = [length](std::vector<double> v) {
    v.resize(length, 0.0);
    return v;
  };
  pair.rows[FlowPair::kIngressUpIpd] = fit(a.up_ipds);
  pair.rows[FlowPair::kEgressUpIpd] = fit(b.up_ipds);
  pair.rows[FlowPair::kIngressDownIpd] = fit(a.down_ipds);
  pair.rows[FlowPair::kEgressDownIpd] = fit(b.down_ipds);
  pair.rows[FlowPair::kIngressUpSize] = fit(a.up_sizes);
  pair.rows[FlowPair::kEgressUpSize] = fit(b.up_sizes);
  pair.rows[FlowPair::kIngressDownSize] = fit(a.down_sizes);
  pair.rows[FlowPair::kEgressDownSize] = fit(b.down_sizes);
  return pair;
}

PairDataset make_pairs(const Dataset& dataset, std::size_t negatives_per_flow,
                       std::uint64_t seed, std::size_t length) {
  const std::size_t n = dataset.flows.size();
  if (!dataset.has_egress() || dataset.egress.size() != n) {
    throw ValidationError("dataset carries no aligned egress flows");
  }
  if (negatives_per_flow >= n) {
    throw ConfigError("negatives_per_flow must be below the connection count");
  }
  if (length == 0) length = dataset.fixed_length;

  PairDataset out;
  out.split = dataset.split;
  out.fixed_length = length;
  Rng rng(seed);
  std::vector<std::size_t> others(n > 0 ? n - 1 : 0);
  for (std::size_t i = 0; i < n; ++i) {
    out.pairs.push_back(make_pair(dataset.flows[i], dataset.egress[i], 1, length));
    out.sources.emplace_back(i, i);
    if (negatives_per_flow == 0) continue;
    // Partial Fisher-Yates over the other connections.
    for (std::size_t k = 0, j = 0; j < n; ++j) {
      if (j != i) others[k++] = j;
    }
    for (std::size_t k = 0; k < negatives_per_flow; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, others.size() - 1);
      std::swap(others[k], others[pick(rng)]);
      const std::size_t j = others[k];
      out.pairs.push_back(make_pair(dataset.flows[i], dataset.egress[j], 0, length));
      out.sources.emplace_back(i, j);
    }
  }
  return out;
}

double sample_laplace(Rng& rng, double location, double scale) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  double v = u(rng);
  while (std::abs(v) >= 0.5) v = u(rng);
  const double sign = v < 0 ? -1.0 : 1.0;
  return location - scale * sign * std::log1p(-2.0 * std::abs(v));
}

namespace {

struct Segment {
  double weight;
  double p_out;        // stationary probability of an outgoing packet
  double persistence;  // burstiness: 0 independent, 1 frozen
};

struct ClassProfile {
  std::vector<Segment> segments;
  double base_length;
  double ipd_location, ipd_scale;
  std::array<double, kCellSizes.size()> out_size_weights, in_size_weights;
};

ClassProfile make_profile(Rng& rng, const SynthOptions& o) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ClassProfile p;
  constexpr int kSegments = 8;
  for (int k = 0; k < kSegments; ++k) {
    p.segments.push_back(
        {0.5 + u(rng), 0.1 + 0.8 * u(rng), 0.3 + 0.6 * u(rng)});
  }
  p.base_length = static_cast<double>(o.min_length) +
                  u(rng) * static_cast<double>(o.max_length - o.min_length);
  p.ipd_location = 0.001 + 0.009 * u(rng);
  p.ipd_scale = 0.0005 + 0.004 * u(rng);
  for (auto& w : p.out_size_weights) w = 0.2 + u(rng);
  for (auto& w : p.in_size_weights) w = 0.2 + u(rng);
  p.out_size_weights[0] += 1.0;  // requests are mostly single cells
  return p;
}

// Moves `own` toward `shared`; spread 1 keeps `own`, 0 gives every class the
// shared burst structure. Lengths and size mixtures stay class-specific.
ClassProfile blend(const ClassProfile& shared, ClassProfile own, double spread) {
  auto mix = [spread](double t, double c) { return t + spread * (c - t); };
  for (std::size_t k = 0; k < own.segments.size(); ++k) {
    Segment& s = own.segments[k];
    const Segment& t = shared.segments[k];
    s.weight = mix(t.weight, s.weight);
    s.p_out = mix(t.p_out, s.p_out);
    s.persistence = mix(t.persistence, s.persistence);
  }
  return own;
}

Flow sample_flow(Rng& rng, const ClassProfile& p, const SynthOptions& o,
                 int label) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double scale = 0.9 + 0.2 * u(rng);
  const std::size_t n = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(p.base_length * scale)),
      std::max<std::size_t>(o.min_length, 1), std::max(o.max_length, o.min_length));
  double total_weight = 0.0;
  for (const Segment& s : p.segments) total_weight += s.weight;

  Flow flow;
  flow.label = label;
  flow.directions.reserve(n);
  int dir = 1;
  std::size_t seg = 0;
  double seg_end = p.segments[0].weight / total_weight * static_cast<double>(n);
  std::discrete_distribution<int> out_size(p.out_size_weights.begin(),
                                           p.out_size_weights.end());
  std::discrete_distribution<int> in_size(p.in_size_weights.begin(),
                                          p.in_size_weights.end());
  for (std::size_t i = 0; i < n; ++i) {
    while (static_cast<double>(i) >= seg_end && seg + 1 < p.segments.size()) {
      ++seg;
      seg_end += p.segments[seg].weight / total_weight * static_cast<double>(n);
    }
    const Segment& s = p.segments[seg];
    if (i > 0) {
      const double p_next_out =
          dir > 0 ? s.persistence + (1.0 - s.persistence) * s.p_out
                  : (1.0 - s.persistence) * s.p_out;
      dir = u(rng) < p_next_out ? 1 : -1;
    }
    flow.directions.push_back(dir);
    const double ipd =
        i == 0 ? 0.0
               : std::abs(sample_laplace(rng, p.ipd_location, p.ipd_scale));
    flow.ipds.push_back(quantize_us(ipd));
    const int cell = dir > 0 ? out_size(rng) : in_size(rng);
    flow.sizes.push_back(kCellSizes[cell]);
  }
  return flow;
}

// Far-end observation: each packet is delayed by latency + Laplace jitter,
// order is kept, and a fraction of packets is re-framed to another cell size.
Flow sample_egress(Rng& rng, const Flow& ingress, const SynthOptions& o) {
  Flow egress = ingress;
  const double b = o.egress_jitter / std::sqrt(2.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> cell(0, kCellSizes.size() - 1);
  double t_in = 0.0, t_out_prev = 0.0;
  for (std::size_t i = 0; i < ingress.length(); ++i) {
    if (u(rng) < o.egress_reframe) egress.sizes[i] = kCellSizes[cell(rng)];
    t_in += ingress.ipds[i];
    double t_out = t_in + o.egress_latency + sample_laplace(rng, 0.0, b);
    if (i > 0) t_out = std::max(t_out, t_out_prev);
    egress.ipds[i] = i == 0 ? 0.0 : quantize_us(t_out - t_out_prev);
    t_out_prev = t_out;
  }
  return egress;
}

}  // namespace

Dataset synth_corpus(const SynthOptions& o) {
  if (o.class_count < 2) throw ConfigError("class_count must be >= 2");
  if (o.per_class < 2) throw ConfigError("per_class must be >= 2");
  if (o.min_length < 1 || o.max_length < o.min_length) {
    throw ConfigError("invalid length range");
  }
  Dataset ds;
  ds.class_count = o.class_count;
  ds.fixed_length = o.fixed_length;
  Rng shared_rng(derive_seed(o.seed, 0x5eedull));
  const ClassProfile shared = make_profile(shared_rng, o);
  for (int c = 0; c < o.class_count; ++c) {
    Rng profile_rng(derive_seed(o.seed, static_cast<std::uint64_t>(c)));
    const ClassProfile profile = blend(shared, make_profile(profile_rng, o), o.class_spread);
    Rng rng(derive_seed(o.seed, 1000003ull + static_cast<std::uint64_t>(c)));
    for (int k = 0; k < o.per_class; ++k) {
      Flow flow = sample_flow(rng, profile, o, c);
      ds.egress.push_back(sample_egress(rng, flow, o));
      ds.flows.push_back(std::move(flow));
    }
  }
  return ds;
}

Dataset synth_corpus(int class_count, int per_class,
                     std::pair<std::size_t, std::size_t> length_range,
                     std::uint64_t seed) {
  SynthOptions o;
  o.class_count = class_count;
  o.per_class = per_class;
  o.min_length = length_range.first;
  o.max_length = length_range.second;
  o.seed = seed;
  return synth_corpus(o);
}

DatasetSplits split_dataset(const Dataset& ds, double train_fraction,
                            double validation_fraction, std::uint64_t seed) {
  if (train_fraction <= 0 || validation_fraction < 0 ||
      train_fraction + validation_fraction >= 1.0) {
    throw ConfigError("split fractions must leave a non-empty test split");
  }
  DatasetSplits s;
  for (Dataset* d : {&s.train, &s.validation, &s.test}) {
    d->class_count = ds.class_count;
    d->fixed_length = ds.fixed_length;
  }
  s.train.split = Split::kTrain;
  s.validation.split = Split::kValidation;
  s.test.split = Split::kTest;

  Rng rng(seed);
  for (int c = 0; c < ds.class_count; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.flows.size(); ++i) {
      if (ds.flows[i].label == c) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::lround(n * train_fraction));
    const auto n_val =
        static_cast<std::size_t>(std::lround(n * validation_fraction));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Dataset& dst = k < n_train ? s.train
                     : k < n_train + n_val ? s.validation
                                           : s.test;
      dst.flows.push_back(ds.flows[idx[k]]);
      if (ds.has_egress()) dst.egress.push_back(ds.egress[idx[k]]);
    }
  }
  return s;
}

namespace {

std::filesystem::path split_file(const std::filesystem::path& dir, Split split,
                                 bool egress) {
  return dir / (to_string(split) + (egress ? ".egress.tsv" : ".tsv"));
}

}  // namespace

void save_corpus(const std::filesystem::path& dir, const DatasetSplits& s) {
  std::filesystem::create_directories(dir);
  const bool has_egress = s.train.has_egress();
  for (const Dataset* d : {&s.train, &s.validation, &s.test}) {
    std::ofstream out(split_file(dir, d->split, false), std::ios::binary);
    if (!out) throw Error("cannot write corpus into " + dir.string());
    write_traces(out, d->flows);
    if (has_egress) {
      std::ofstream eout(split_file(dir, d->split, true), std::ios::binary);
      write_traces(eout, d->egress);
    }
  }
  nlohmann::ordered_json m;
  m["version"] = 1;
  m["class_count"] = s.train.class_count;
  m["fixed_length"] = s.train.fixed_length;
  m["splits"] = {{"train", s.train.size()},
                 {"validation", s.validation.size()},
                 {"test", s.test.size()}};
  m["has_egress"] = has_egress;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << m.dump(2) << '\n';
}

Manifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw ConfigError("missing manifest in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    Manifest m;
    m.version = j.at("version").get<int>();
    if (m.version != 1) {
      throw ValidationError("unsupported manifest version " +
                            std::to_string(m.version));
    }
    m.class_count = j.at("class_count").get<int>();
    m.fixed_length = j.at("fixed_length").get<std::size_t>();
    m.train_size = j.at("splits").at("train").get<std::size_t>();
    m.validation_size = j.at("splits").at("validation").get<std::size_t>();
    m.test_size = j.at("splits").at("test").get<std::size_t>();
    m.has_egress = j.value("has_egress", false);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad manifest: ") + e.what());
  }
}

DatasetSplits load_corpus(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir);
  DatasetSplits s;
  const std::array<std::pair<Dataset*, std::size_t>, 3> parts = {
      std::pair{&s.train, m.train_size},
      std::pair{&s.validation, m.validation_size},
      std::pair{&s.test, m.test_size}};
  s.train.split = Split::kTrain;
  s.validation.split = Split::kValidation;
  s.test.split = Split::kTest;
  for (auto [d, expected] : parts) {
    d->class_count = m.class_count;
    d->fixed_length = m.fixed_length;
    std::ifstream in(split_file(dir, d->split, false), std::ios::binary);
    if (!in) throw Error("missing split file for " + to_string(d->split));
    d->flows = read_traces(in);
    if (d->flows.size() != expected) {
      throw ValidationError(to_string(d->split) + " split size mismatch");
    }
    for (const Flow& f : d->flows) {
      if (f.label >= m.class_count) {
        throw ValidationError("label outside manifest class range");
      }
    }
    if (m.has_egress) {
      std::ifstream ein(split_file(dir, d->split, true), std::ios::binary);
      if (!ein) throw Error("missing egress file for " + to_string(d->split));
      d->egress = read_traces(ein);
      if (d->egress.size() != d->flows.size()) {
        throw ValidationError("egress not aligned with flows");
      }
    }
  }
  return s;
}

}  // namespace blindadv
