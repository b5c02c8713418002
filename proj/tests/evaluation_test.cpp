// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The atbench Authors

#include <gtest/gtest.h>

#include "atbench/evaluation.hpp"
#include "support/oracles.hpp"

namespace atbench {
namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an atbench::Error";
  return ErrorCode::kIo;
}

TEST(RelativeRobustness, HandComputedValues) {
  auto r = relative_robustness(40.0, 70.0);
  EXPECT_DOUBLE_EQ(r.r_at, 30.0);
  EXPECT_DOUBLE_EQ(r.r_rel, 50.0);
  r = relative_robustness(80.0, 60.0);
  EXPECT_DOUBLE_EQ(r.r_at, -20.0);
  EXPECT_DOUBLE_EQ(r.r_rel, -100.0);
  EXPECT_DOUBLE_EQ(relative_robustness(0.0, 100.0).r_rel, 100.0);
}

TEST(RelativeRobustness, LatticeProperties) {
  // Over a grid of accuracies: r_rel <= 100, sign follows r_at, and r_rel
  // equals 100 exactly when the hardened model is fully robust.
  for (int v = 0; v < 100; v += 3) {
    for (int h = 0; h <= 100; h += 7) {
      const auto r = relative_robustness(v, h);
      EXPECT_LE(r.r_rel, 100.0 + 1e-12);
      EXPECT_EQ(r.r_rel > 0, h > v);
      EXPECT_EQ(r.r_rel < 0, h < v);
    }
    EXPECT_DOUBLE_EQ(relative_robustness(v, 100.0).r_rel, 100.0);
  }
}

TEST(RelativeRobustness, Errors) {
  EXPECT_EQ(code_of([] { relative_robustness(100.0, 90.0); }), ErrorCode::kUndefined);
  EXPECT_EQ(code_of([] { relative_robustness(-1.0, 90.0); }), ErrorCode::kRange);
  EXPECT_EQ(code_of([] { relative_robustness(10.0, 100.5); }), ErrorCode::kRange);
}

Dataset small_test_set(std::size_t d) {
  Dataset ds;
  ds.space = FeatureSpaceSpec::make(d);
  Rng rng(3);
  for (int i = 0; i < 60; ++i) {
    ds.samples.push_back(oracle::random_sample(rng, d, 0.3, i % 3 ? Label::kBenign : Label::kMalware));
  }
  return ds;
}

TEST(RobustEval, NoTruePositivesIsAnError) {
  const auto ds = small_test_set(8);
  const auto m = Model::linear(ds.space, std::vector<double>(8, 0.0), -1.0);
  AttackSpec a;
  EXPECT_EQ(code_of([&] { robust_eval(m, a, 3, ds, std::nullopt, 0); }), ErrorCode::kEvaluation);
}

TEST(RobustEval, MatchesManualCountAndRecordsShortfall) {
  const auto ds = small_test_set(10);
  Rng rng(11);
  std::vector<double> w(10);
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  const auto m = Model::linear(ds.space, w, 0.6);
  std::size_t tps = 0;
  for (const auto& s : ds.samples) tps += s.label == Label::kMalware && predict(m, s).label == Label::kMalware;
  ASSERT_GT(tps, 3u);

  AttackSpec a;
  const auto r = robust_eval(m, a, 2, ds, tps + 5, 9);
  EXPECT_EQ(r.n_eval, tps);
  EXPECT_EQ(r.shortfall, 5u);
  std::size_t detected = 0;
  for (auto idx : r.sample_indices) {
    detected += !oracle::l0_ball_evades(m, ds.samples[idx], 2);
  }
  // PGD is exact on linear models, so the count matches the exhaustive one.
  EXPECT_DOUBLE_EQ(r.robust_accuracy, 100.0 * static_cast<double>(detected) / static_cast<double>(tps));

  const auto sub = robust_eval(m, a, 2, ds, 3, 9);
  EXPECT_EQ(sub.n_eval, 3u);
  EXPECT_EQ(sub.shortfall, 0u);
  EXPECT_EQ(sub.sample_indices, robust_eval(m, a, 2, ds, 3, 9, 4).sample_indices);
}

TEST(RobustEval, EpsilonZeroIsFullyRobust) {
  const auto ds = small_test_set(10);
  const auto m = Model::linear(ds.space, std::vector<double>(10, -0.3), 1.0);
  const auto r = robust_eval(m, AttackSpec{}, 0, ds, std::nullopt, 1);
  EXPECT_DOUBLE_EQ(r.robust_accuracy, 100.0);
}

TEST(Confidence, LossesAndSummary) {
  const auto m = Model::linear(FeatureSpaceSpec::make(3), {-1, -2, 0.5}, 0.5);
  std::vector<AttackOutcome> outcomes(2);
  outcomes[0].x_adv = BinarySample::from_indices({0}, Label::kMalware);     // m = -0.5
  outcomes[1].x_adv = BinarySample::from_indices({0, 1}, Label::kMalware);  // m = -2.5
  const auto r = ae_confidence(m, outcomes);
  ASSERT_EQ(r.losses.size(), 2u);
  EXPECT_DOUBLE_EQ(r.losses[0], 1.5);
  EXPECT_DOUBLE_EQ(r.losses[1], 3.5);
  ASSERT_TRUE(r.summary);
  EXPECT_DOUBLE_EQ(r.summary->mean, 2.5);
  EXPECT_DOUBLE_EQ(r.summary->max, 3.5);
  EXPECT_FALSE(ae_confidence(m, {}).summary);
}

TEST(OutcomeJson, RoundTrip) {
  AttackOutcome o;
  o.x_adv = BinarySample::from_indices({1, 4}, Label::kMalware);
  o.success = true;
  o.flips_used = 1;
  o.trace.push_back({"f4", {4}, 0.75});
  const auto back = outcome_from_json(to_json(o));
  EXPECT_EQ(back.x_adv, o.x_adv);
  EXPECT_EQ(back.trace.size(), 1u);
  EXPECT_EQ(back.trace[0].flipped, o.trace[0].flipped);
}

}  // namespace
}  // namespace atbench
