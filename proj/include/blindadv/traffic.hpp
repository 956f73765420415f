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

// Traffic traces, their on-disk format, fixed-length views and the synthetic
// class-conditional corpus used in place of captured Tor datasets.

#ifndef BLINDADV_TRAFFIC_HPP_
#define BLINDADV_TRAFFIC_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "blindadv/common.hpp"

namespace blindadv {

// One trace. Directions are -1 (incoming) / +1 (outgoing); a trailing run of
// 0 directions (with 0 IPD and 0 size) is padding and means "no packet".
struct Flow {
  std::vector<int> directions;
  std::vector<double> ipds;  // seconds
  std::vector<std::int64_t> sizes;  // bytes
  int label = 0;

  std::size_t length() const { return directions.size(); }
  // Number of real packets, i.e. length without the trailing pad.
  std::size_t packet_count() const;

  bool operator==(const Flow&) const = default;
};

// Throws ValidationError if the flow breaks an invariant. Zero directions are
// only accepted as trailing padding.
void validate_flow(const Flow& flow);

// DeepCorr-style pairing of ingress flow i with egress flow j.
struct FlowPair {
  static constexpr int kRows = 8;
  enum Row : int {
    kIngressUpIpd = 0,
    kEgressUpIpd = 1,
    kIngressDownIpd = 2,
    kEgressDownIpd = 3,
    kIngressUpSize = 4,
    kEgressUpSize = 5,
    kIngressDownSize = 6,
    kEgressDownSize = 7,
  };
  std::array<std::vector<double>, kRows> rows;
  int label = 0;  // 1 associated, 0 not

  std::size_t length() const { return rows[0].size(); }
};

void validate_pair(const FlowPair& pair);

enum class Split { kTrain, kValidation, kTest };

std::string to_string(Split split);

struct Dataset {
  std::vector<Flow> flows;
  // Either empty or aligned with `flows`: egress[i] is the far-end observation
  // of the connection whose near end is flows[i].
  std::vector<Flow> egress;
  Split split = Split::kTrain;
  std::size_t fixed_length = 500;
  int class_count = 0;

  std::size_t size() const { return flows.size(); }
  bool has_egress() const { return !egress.empty(); }
};

struct PairDataset {
  std::vector<FlowPair> pairs;
  // (ingress connection, egress connection) each pair was built from.
  std::vector<std::pair<std::size_t, std::size_t>> sources;
  Split split = Split::kTrain;
  std::size_t fixed_length = 0;

  std::size_t size() const { return pairs.size(); }
};

enum class TraceFormat { kTsv };

// Line format: label<TAB>d1,d2,...<TAB>t1,t2,...<TAB>s1,s2,...
void write_traces(std::ostream& out, const std::vector<Flow>& flows);
std::vector<Flow> read_traces(std::istream& in);

void save_traces(const std::filesystem::path& path, const Dataset& dataset,
                 TraceFormat format = TraceFormat::kTsv);
// class_count is inferred as max(label)+1; fixed_length as the longest trace.
Dataset load_traces(const std::filesystem::path& path,
                    TraceFormat format = TraceFormat::kTsv);

Flow to_fixed_length(const Flow& flow, std::size_t length);

// Upstream/downstream decomposition used by the pair representation.
struct DirectionalSeries {
  std::vector<double> up_ipds, down_ipds;
  std::vector<double> up_sizes, down_sizes;
};
DirectionalSeries split_by_direction(const Flow& flow);

FlowPair make_pair(const Flow& ingress, const Flow& egress, int label,
                   std::size_t length);

// One associated pair per connection plus `negatives_per_flow` pairs whose
// egress is drawn (without replacement) from other connections.
PairDataset make_pairs(const Dataset& dataset, std::size_t negatives_per_flow,
                       std::uint64_t seed, std::size_t length = 0);

struct SynthOptions {
  int class_count = 10;
  int per_class = 200;
  std::size_t min_length = 400;
  std::size_t max_length = 900;
  std::uint64_t seed = 1;
  std::size_t fixed_length = 500;
  // Std of the per-packet network delay between ingress and egress, seconds.
  double egress_jitter = 0.002;
  double egress_latency = 0.05;
  // Probability that a packet's size is re-drawn on the egress side.
  double egress_reframe = 0.5;
  // How far each class's burst profile departs from a shared one (0..1).
  double class_spread = 0.7;
};

Dataset synth_corpus(const SynthOptions& options);
Dataset synth_corpus(int class_count, int per_class,
                     std::pair<std::size_t, std::size_t> length_range,
                     std::uint64_t seed);

struct DatasetSplits {
  Dataset train, validation, test;
};

// Stratified per class; egress stays aligned with its flow.
DatasetSplits split_dataset(const Dataset& dataset, double train_fraction,
                            double validation_fraction, std::uint64_t seed);

// A corpus directory holds manifest.json plus one trace file per split (and
// one egress file per split when the corpus carries egress observations).
struct Manifest {
  int version = 1;
  int class_count = 0;
  std::size_t fixed_length = 0;
  std::size_t train_size = 0, validation_size = 0, test_size = 0;
  bool has_egress = false;
};

void save_corpus(const std::filesystem::path& dir, const DatasetSplits& splits);
DatasetSplits load_corpus(const std::filesystem::path& dir);
Manifest read_manifest(const std::filesystem::path& dir);

// Laplace(location, scale) by inversion.
double sample_laplace(Rng& rng, double location, double scale);

}  // namespace blindadv

#endif  // BLINDADV_TRAFFIC_HPP_
