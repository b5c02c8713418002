// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The atbench Authors

#include <gtest/gtest.h>

#include <array>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "atbench/featurespace.hpp"
#include "atbench/models.hpp"

namespace atbench {
namespace {

Dataset parse(const std::string& text, std::size_t d) {
  std::istringstream in(text);
  return parse_sparse_dataset(in, d);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an atbench::Error";
  return ErrorCode::kIo;
}

TEST(SparseFormat, SingleLine) {
  const auto ds = parse("1 3:1 17:1\n", 32);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.samples[0].active, (std::vector<FeatureIndex>{3, 17}));
  EXPECT_EQ(ds.samples[0].label, Label::kMalware);
}

TEST(SparseFormat, EmptyFeatureSet) {
  const auto ds = parse("0\n", 8);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_TRUE(ds.samples[0].active.empty());
  EXPECT_EQ(ds.samples[0].label, Label::kBenign);
}

TEST(SparseFormat, IndexOutOfRangeNamesIndex) {
  try {
    parse("1 99:1\n", 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRange);
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(SparseFormat, MalformedLineReportsLineNumber) {
  try {
    parse("0 1:1\n\n1 2:1\n2 4:1\n", 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse);
    EXPECT_NE(std::string(e.what()).find("4"), std::string::npos) << e.what();
  }
  EXPECT_EQ(code_of([] { parse("1 x:1\n", 10); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse("1 3:7\n", 10); }), ErrorCode::kParse);
}

TEST(SparseFormat, SortsAndDeduplicates) {
  const auto ds = parse("1 9:1 2:1 9:1 4:1\n", 10);
  EXPECT_EQ(ds.samples[0].active, (std::vector<FeatureIndex>{2, 4, 9}));
}

TEST(SparseFormat, CommentsBlankLinesAndOrderKeys) {
  const auto ds = parse("# header\n1 qid:5 0:1\n\n0 qid:2 1:1\n", 4);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.order_keys, (std::vector<std::int64_t>{5, 2}));
}

TEST(SparseFormat, RoundTrip) {
  SyntheticSpec spec;
  spec.d = 40;
  spec.n = 200;
  spec.seed = 11;
  const auto ds = generate_synthetic(spec);
  std::ostringstream out;
  write_sparse_dataset(out, ds);
  std::istringstream in(out.str());
  const auto back = parse_sparse_dataset(in, 40);
  EXPECT_EQ(back.samples, ds.samples);
  std::ostringstream again;
  write_sparse_dataset(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(SparseFormat, LoadsFileFromDisk) {
  const std::string path = ::testing::TempDir() + "/atbench_fs.svm";
  {
    std::ofstream f(path);
    f << "1 3:1 17:1\n0\n";
  }
  const auto ds = load_sparse_dataset(path, 32);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(code_of([] { load_sparse_dataset("/nonexistent/atbench.svm", 4); }), ErrorCode::kIo);
}

TEST(Synthetic, ExactMalwareCount) {
  SyntheticSpec spec;
  spec.d = 20;
  spec.n = 100;
  spec.malware_ratio = 0.1;
  EXPECT_EQ(generate_synthetic(spec).count(Label::kMalware), 10u);
  spec.n = 1234;
  spec.malware_ratio = 0.37;
  EXPECT_EQ(generate_synthetic(spec).count(Label::kMalware), 457u);  // round(456.58)
}

TEST(Synthetic, DeterministicForSeed) {
  SyntheticSpec spec;
  spec.d = 50;
  spec.n = 300;
  spec.seed = 9;
  EXPECT_EQ(generate_synthetic(spec), generate_synthetic(spec));
  auto other = spec;
  other.seed = 10;
  EXPECT_NE(generate_synthetic(spec).samples, generate_synthetic(other).samples);
}

TEST(Synthetic, EmptySpecFails) {
  SyntheticSpec spec;
  spec.n = 0;
  EXPECT_EQ(code_of([&] { generate_synthetic(spec); }), ErrorCode::kEmptySpec);
}

TEST(Synthetic, FeatureRatesFollowProfiles) {
  SyntheticSpec spec;
  spec.d = 10;
  spec.n = 20000;
  spec.malware_ratio = 0.5;
  spec.benign_profile = std::vector<double>(10, 0.1);
  spec.malware_profile = std::vector<double>(10, 0.6);
  const auto ds = generate_synthetic(spec);
  std::array<double, 2> on{0, 0};
  for (const auto& s : ds.samples) on[to_int(s.label)] += static_cast<double>(s.active.size());
  EXPECT_NEAR(on[0] / (10000.0 * 10), 0.1, 0.01);
  EXPECT_NEAR(on[1] / (10000.0 * 10), 0.6, 0.01);
}

TEST(Synthetic, DisjointSupportsAreLinearlySeparable) {
  SyntheticSpec spec;
  spec.d = 60;
  spec.n = 600;
  spec.malware_ratio = 0.3;
  spec.overlap = 0.0;
  spec.min_rate = 0.2;
  spec.max_rate = 0.4;
  spec.seed = 2;
  const auto ds = generate_synthetic(spec);
  // An all-empty sample cannot be separated; the rates make one very unlikely.
  for (const auto& s : ds.samples) ASSERT_FALSE(s.active.empty());
  auto cfg = TrainConfig::defaults_for(ModelKind::kLinearMargin);
  cfg.epochs = 30;
  cfg.seed = 1;
  const auto init = Model::create(ModelKind::kLinearMargin, ds.space, {}, 3);
  const auto fit = fit_standard(init, ds, Dataset{}, cfg);
  EXPECT_DOUBLE_EQ(confusion(fit.model, ds).f1(), 1.0);
}

TEST(Split, RoundingRules) {
  SyntheticSpec spec;
  spec.d = 10;
  spec.n = 300;
  const auto ds = generate_synthetic(spec);
  const auto s = split_dataset(ds, SplitSpec{}, 1);
  EXPECT_EQ(s.test.size(), 99u);
  EXPECT_EQ(s.val.size(), 20u);
  EXPECT_EQ(s.train.size(), 181u);
}

TEST(Split, PartitionIsDisjointAndExhaustive) {
  SyntheticSpec spec;
  spec.d = 30;
  spec.n = 517;
  spec.seed = 4;
  auto ds = generate_synthetic(spec);
  // Tag each sample with a unique marker feature pattern through order keys.
  const auto s = split_dataset(ds, SplitSpec{}, 8);
  std::multiset<std::int64_t> keys;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    keys.insert(part->order_keys.begin(), part->order_keys.end());
  }
  EXPECT_EQ(keys.size(), ds.size());
  for (std::int64_t k = 0; k < static_cast<std::int64_t>(ds.size()); ++k) EXPECT_EQ(keys.count(k), 1u);
}

TEST(Split, StratifiedTestMalwareWithinOne) {
  SyntheticSpec spec;
  spec.d = 10;
  spec.n = 100;
  spec.malware_ratio = 0.1;
  const auto ds = generate_synthetic(spec);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = split_dataset(ds, SplitSpec{}, seed);
    const auto m = s.test.count(Label::kMalware);
    EXPECT_TRUE(m == 3 || m == 4) << m;
  }
}

TEST(Split, StratificationNeedsThreePerClass) {
  Dataset ds;
  ds.space = FeatureSpaceSpec::make(4);
  for (int i = 0; i < 20; ++i) ds.samples.push_back({{}, Label::kBenign});
  ds.samples.push_back({{}, Label::kMalware});
  ds.samples.push_back({{}, Label::kMalware});
  EXPECT_EQ(code_of([&] { split_dataset(ds, SplitSpec{}, 0); }), ErrorCode::kStratification);
  SplitSpec plain;
  plain.stratified = false;
  EXPECT_NO_THROW(split_dataset(ds, plain, 0));
}

TEST(Split, OrderedPutsMostRecentInTest) {
  Dataset ds;
  ds.space = FeatureSpaceSpec::make(4);
  for (int i = 0; i < 100; ++i) {
    ds.samples.push_back({{}, i % 5 == 0 ? Label::kMalware : Label::kBenign});
    ds.order_keys.push_back(i);
  }
  SplitSpec spec;
  spec.ordered = true;
  spec.stratified = false;
  const auto s = split_dataset(ds, spec, 0);
  ASSERT_EQ(s.test.size(), 33u);
  for (auto k : s.test.order_keys) EXPECT_GE(k, 67);
  for (auto k : s.val.order_keys) EXPECT_GE(k, 61);
  for (auto k : s.train.order_keys) EXPECT_LT(k, 61);
}

TEST(Split, SeedDeterminism) {
  SyntheticSpec spec;
  spec.d = 20;
  spec.n = 250;
  const auto ds = generate_synthetic(spec);
  const auto a = split_dataset(ds, SplitSpec{}, 5);
  const auto b = split_dataset(ds, SplitSpec{}, 5);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.train, b.train);
}

}  // namespace
}  // namespace atbench
