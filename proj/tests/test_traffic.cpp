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


#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "blindadv/traffic.hpp"

namespace blindadv {
namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("blindadv_traffic_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string serialize(const std::vector<Flow>& flows) {
  std::ostringstream out;
  write_traces(out, flows);
  return out.str();
}

TEST(Traces, SingleRecordParses) {
  std::istringstream in("3\t1,-1,1\t0.0,0.02,0.01\t512,512,512\n");
  const auto flows = read_traces(in);
  ASSERT_EQ(flows.size(), 1u);
  EXPECT_EQ(flows[0].label, 3);
  EXPECT_EQ(flows[0].packet_count(), 3u);
  EXPECT_EQ(flows[0].directions, (std::vector<int>{1, -1, 1}));
  EXPECT_EQ(flows[0].ipds, (std::vector<double>{0.0, 0.02, 0.01}));
  EXPECT_EQ(flows[0].sizes, (std::vector<std::int64_t>{512, 512, 512}));
}

TEST(Traces, NegativeIpdIsRejected) {
  std::istringstream in("0\t1,1\t0.0,-0.01\t10,10\n");
  EXPECT_THROW(read_traces(in), ValidationError);
}

TEST(Traces, MalformedLineNamesLineNumber) {
  std::istringstream in("0\t1\t0.0\t10\n1\t1,x\t0.0,0.1\t10,10\n");
  try {
    read_traces(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream fields("0\t1\t0.0\n");
  EXPECT_THROW(read_traces(fields), ParseError);
}

TEST(Traces, RoundTripOfSyntheticCorpusIsExact) {
  const Dataset ds = synth_corpus(10, 10, {50, 120}, 4);
  ASSERT_EQ(ds.size(), 100u);
  const auto path = temp_dir("roundtrip") / "flows.tsv";
  save_traces(path, ds);
  const Dataset back = load_traces(path);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(back.flows[i], ds.flows[i]) << i;
  EXPECT_EQ(serialize(back.flows), serialize(ds.flows));
  std::ifstream in(path, std::ios::binary);
  std::stringstream raw;
  raw << in.rdbuf();
  EXPECT_EQ(raw.str(), serialize(ds.flows));
}

TEST(Traces, MissingFileIsConfigError) {
  EXPECT_THROW(load_traces("/nonexistent/blindadv/flows.tsv"), ConfigError);
}

TEST(FixedLength, TruncatesLongFlows) {
  Flow f{{1, -1, 1, 1, -1, 1, -1}, {0, .1, .2, .3, .4, .5, .6}, {1, 2, 3, 4, 5, 6, 7}, 2};
  const Flow out = to_fixed_length(f, 5);
  EXPECT_EQ(out.directions, (std::vector<int>{1, -1, 1, 1, -1}));
  EXPECT_EQ(out.ipds, (std::vector<double>{0, .1, .2, .3, .4}));
  EXPECT_EQ(out.sizes, (std::vector<std::int64_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(out.label, 2);
}

TEST(FixedLength, PadsShortFlowsWithZeros) {
  Flow f{{1, -1, 1}, {0, .1, .2}, {10, 20, 30}, 0};
  const Flow out = to_fixed_length(f, 5);
  EXPECT_EQ(out.directions, (std::vector<int>{1, -1, 1, 0, 0}));
  EXPECT_EQ(out.ipds, (std::vector<double>{0, .1, .2, 0, 0}));
  EXPECT_EQ(out.sizes, (std::vector<std::int64_t>{10, 20, 30, 0, 0}));
  EXPECT_NO_THROW(validate_flow(out));
  EXPECT_EQ(out.packet_count(), 3u);
}

TEST(FixedLength, IdempotentAndPrefixPreserving) {
  const Dataset ds = synth_corpus(3, 5, {10, 80}, 9);
  for (const Flow& f : ds.flows) {
    for (std::size_t L : {1u, 30u, 200u}) {
      const Flow once = to_fixed_length(f, L);
      EXPECT_EQ(to_fixed_length(once, L), once);
      const std::size_t keep = std::min(L, f.length());
      for (std::size_t i = 0; i < keep; ++i) {
        EXPECT_EQ(once.directions[i], f.directions[i]);
        EXPECT_EQ(once.ipds[i], f.ipds[i]);
      }
    }
  }
}

TEST(Pairs, CountsPositivesAndNegatives) {
  const Dataset ds = synth_corpus(2, 5, {40, 60}, 3);
  const PairDataset p = make_pairs(ds, 1, 7, 20);
  ASSERT_EQ(p.size(), 20u);
  int pos = 0;
  for (const FlowPair& pair : p.pairs) pos += pair.label;
  EXPECT_EQ(pos, 10);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto [a, b] = p.sources[i];
    EXPECT_EQ(a == b, p.pairs[i].label == 1);
    EXPECT_EQ(p.pairs[i].length(), 20u);
    EXPECT_NO_THROW(validate_pair(p.pairs[i]));
  }
  const PairDataset only = make_pairs(ds, 0, 7, 20);
  EXPECT_EQ(only.size(), 10u);
  for (const FlowPair& pair : only.pairs) EXPECT_EQ(pair.label, 1);
}

TEST(Pairs, DeterministicWithDistinctNegatives) {
  const Dataset ds = synth_corpus(2, 10, {40, 60}, 3);
  const PairDataset a = make_pairs(ds, 4, 7, 16);
  const PairDataset b = make_pairs(ds, 4, 7, 16);
  EXPECT_EQ(a.sources, b.sources);
  std::map<std::size_t, std::set<std::size_t>> seen;
  for (const auto& [i, j] : a.sources) {
    if (i == j) continue;
    EXPECT_TRUE(seen[i].insert(j).second) << "duplicate negative for " << i;
  }
  for (const auto& [i, s] : seen) EXPECT_EQ(s.size(), 4u);
}

TEST(Pairs, TooManyNegativesIsAnError) {
  const Dataset ds = synth_corpus(2, 3, {40, 60}, 3);
  EXPECT_THROW(make_pairs(ds, 6, 1), ConfigError);
  Dataset bare = ds;
  bare.egress.clear();
  EXPECT_THROW(make_pairs(bare, 1, 1), ValidationError);
}

TEST(Pairs, SplitByDirectionRecoversTimestamps) {
  // Oracle: absolute timestamps from the cumulative IPD sum.
  Flow f{{1, -1, -1, 1, 1}, {0.0, 0.1, 0.2, 0.05, 0.3}, {100, 200, 300, 400, 500}, 0};
  const DirectionalSeries s = split_by_direction(f);
  ASSERT_EQ(s.up_ipds.size(), 3u);
  ASSERT_EQ(s.down_ipds.size(), 2u);
  EXPECT_NEAR(s.up_ipds[1], 0.35, 1e-9);
  EXPECT_NEAR(s.up_ipds[2], 0.3, 1e-9);
  EXPECT_NEAR(s.down_ipds[0], 0.1, 1e-9);
  EXPECT_NEAR(s.down_ipds[1], 0.2, 1e-9);
  EXPECT_EQ(s.down_sizes, (std::vector<double>{200, 300}));
}

TEST(Synth, CountsLabelsAndDeterminism) {
  const Dataset a = synth_corpus(10, 200, {400, 900}, 1);
  EXPECT_EQ(a.size(), 2000u);
  EXPECT_EQ(a.class_count, 10);
  std::map<int, int> per;
  for (const Flow& f : a.flows) ++per[f.label];
  EXPECT_EQ(per.size(), 10u);
  for (const auto& [label, n] : per) EXPECT_EQ(n, 200);
  const Dataset b = synth_corpus(10, 200, {400, 900}, 1);
  EXPECT_EQ(serialize(a.flows), serialize(b.flows));
  EXPECT_EQ(serialize(a.egress), serialize(b.egress));
  const Dataset c = synth_corpus(10, 200, {400, 900}, 2);
  EXPECT_NE(serialize(a.flows), serialize(c.flows));
}

TEST(Synth, EveryFlowSatisfiesInvariants) {
  const Dataset ds = synth_corpus(5, 20, {100, 300}, 11);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Flow& f = ds.flows[i];
    EXPECT_NO_THROW(validate_flow(f));
    EXPECT_NO_THROW(validate_flow(ds.egress[i]));
    EXPECT_GE(f.packet_count(), 100u);
    EXPECT_LE(f.packet_count(), 300u);
    EXPECT_EQ(f.ipds.front(), 0.0);
  }
}

TEST(Synth, ClassesAreSeparableByNearestCentroid) {
  // Independent baseline: nearest centroid on the leading direction bins.
  SynthOptions o;
  o.per_class = 60;
  const Dataset ds = synth_corpus(o);
  const DatasetSplits s = split_dataset(ds, 0.5, 0.0, 5);
  constexpr std::size_t kBins = 100;
  auto feat = [&](const Flow& f) {
    std::vector<double> v(kBins, 0.0);
    for (std::size_t i = 0; i < std::min<std::size_t>(f.length(), 500); ++i) {
      v[i * kBins / 500] += f.directions[i];
    }
    return v;
  };
  std::vector<std::vector<double>> centroid(o.class_count, std::vector<double>(kBins, 0.0));
  std::vector<int> count(o.class_count, 0);
  for (const Flow& f : s.train.flows) {
    const auto v = feat(f);
    for (std::size_t k = 0; k < kBins; ++k) centroid[f.label][k] += v[k];
    ++count[f.label];
  }
  for (int c = 0; c < o.class_count; ++c) {
    for (double& x : centroid[c]) x /= count[c];
  }
  int correct = 0;
  for (const Flow& f : s.test.flows) {
    const auto v = feat(f);
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < o.class_count; ++c) {
      double d = 0;
      for (std::size_t k = 0; k < kBins; ++k) d += (v[k] - centroid[c][k]) * (v[k] - centroid[c][k]);
      if (d < best_d) best_d = d, best = c;
    }
    correct += best == f.label;
  }
  EXPECT_GT(static_cast<double>(correct) / s.test.size(), 0.6);
}

TEST(Splits, StratifiedAndDisjoint) {
  const Dataset ds = synth_corpus(4, 50, {30, 60}, 2);
  const DatasetSplits s = split_dataset(ds, 0.6, 0.2, 1);
  EXPECT_EQ(s.train.size() + s.validation.size() + s.test.size(), ds.size());
  std::map<int, int> train_per;
  for (const Flow& f : s.train.flows) ++train_per[f.label];
  for (const auto& [label, n] : train_per) EXPECT_EQ(n, 30);
  std::set<std::string> texts;
  for (const Dataset* d : {&s.train, &s.validation, &s.test}) {
    for (const Flow& f : d->flows) texts.insert(serialize({f}));
  }
  EXPECT_EQ(texts.size(), ds.size());
  EXPECT_THROW(split_dataset(ds, 0.8, 0.2, 1), ConfigError);
}

TEST(Corpus, SaveLoadRoundTrip) {
  const Dataset ds = synth_corpus(3, 10, {30, 60}, 2);
  const DatasetSplits s = split_dataset(ds, 0.6, 0.2, 1);
  const auto dir = temp_dir("corpus");
  save_corpus(dir, s);
  const Manifest m = read_manifest(dir);
  EXPECT_EQ(m.class_count, 3);
  EXPECT_TRUE(m.has_egress);
  const DatasetSplits back = load_corpus(dir);
  EXPECT_EQ(serialize(back.train.flows), serialize(s.train.flows));
  EXPECT_EQ(serialize(back.test.egress), serialize(s.test.egress));
  EXPECT_EQ(back.validation.fixed_length, s.validation.fixed_length);
  EXPECT_THROW(read_manifest(dir / "missing"), ConfigError);
}

TEST(Laplace, MomentsMatchParameters) {
  Rng rng(3);
  const double b = 0.02;
  double sum = 0, sq = 0;
  constexpr int kN = 200000;
  for (int i = 0; i < kN; ++i) {
    const double v = sample_laplace(rng, 0.01, b);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / kN;
  EXPECT_NEAR(mean, 0.01, 5e-4);
  EXPECT_NEAR(std::sqrt(sq / kN - mean * mean), std::sqrt(2.0) * b, 5e-4);
}

}  // namespace
}  // namespace blindadv
