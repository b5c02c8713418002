// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The atbench Authors

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "atbench/featurespace.hpp"
#include "atbench/models.hpp"
#include "support/oracles.hpp"

namespace atbench {
namespace {

constexpr double kLn2 = 0.69314718055994530942;

Model small_model(ModelKind kind, std::size_t d, std::uint64_t seed) {
  ModelOptions opts;
  opts.hidden = {7, 5};
  opts.max_depth = 3;
  return Model::create(kind, FeatureSpaceSpec::make(d), opts, seed);
}

// Spreads the parameters beyond the tiny init range so ReLUs and gates are
// in varied regimes.
void scramble(Model& m, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& p : m.mutable_parameters()) p = rng.uniform(-scale, scale);
}

TEST(Predict, LinearHandArithmetic) {
  const auto m = Model::linear(FeatureSpaceSpec::make(2), {1.0, -2.0}, 0.0);
  const auto p = predict(m, BinarySample::from_indices({0}, Label::kMalware));
  EXPECT_EQ(p.label, Label::kMalware);
  EXPECT_DOUBLE_EQ(p.scores.benign, -1.0);
  EXPECT_DOUBLE_EQ(p.scores.malware, 1.0);
}

TEST(Predict, ExactTieIsBenign) {
  const auto m = Model::linear(FeatureSpaceSpec::make(2), {1.0, -1.0}, 0.0);
  EXPECT_EQ(predict(m, BinarySample::from_indices({0, 1}, Label::kMalware)).label, Label::kBenign);
  EXPECT_EQ(predict(m, BinarySample{}).label, Label::kBenign);
}

TEST(Predict, NonFiniteScoreIsNumericError) {
  auto m = Model::linear(FeatureSpaceSpec::make(2), {1.0, 1.0}, 0.0);
  m.mutable_parameters()[0] = INFINITY;
  try {
    predict(m, BinarySample::from_indices({0}, Label::kMalware));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumeric);
  }
}

TEST(Predict, RejectsInconsistentSample) {
  const auto m = small_model(ModelKind::kMlp, 5, 1);
  EXPECT_THROW(predict(m, BinarySample{{7}, Label::kBenign}), Error);
}

class AllKinds : public ::testing::TestWithParam<ModelKind> {};

TEST_P(AllKinds, ScoresMatchIndependentForward) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = small_model(GetParam(), 9, 100 + trial);
    scramble(m, 200 + trial, 1.5);
    const auto x = oracle::random_sample(rng, 9, 0.4, Label::kMalware);
    const auto got = predict(m, x).scores;
    const auto want = oracle::forward(m, oracle::dense(x, 9));
    EXPECT_NEAR(got.benign, want.g0, 1e-12 * (1 + std::abs(want.g0)));
    EXPECT_NEAR(got.malware, want.g1, 1e-12 * (1 + std::abs(want.g1)));
    // Pure function of (theta, x).
    EXPECT_EQ(predict(m, x).scores.malware, got.malware);
  }
}

TEST_P(AllKinds, InputGradientMatchesFiniteDifferences) {
  const std::size_t d = 8;
  Rng rng(5);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto m = small_model(GetParam(), d, 300 + trial);
    scramble(m, 400 + trial, 1.0);
    const auto x = oracle::random_sample(rng, d, 0.5, Label::kMalware);
    const Label y = rng.bernoulli(0.5) ? Label::kMalware : Label::kBenign;
    const auto xd = oracle::dense(x, d);
    if (oracle::kink_distance(m, xd, y) < 1e-3) continue;
    const auto lg = loss_and_grad_input(m, x, y);
    EXPECT_NEAR(lg.loss, oracle::loss(m, xd, y), 1e-10);
    for (std::size_t j = 0; j < d; ++j) {
      auto f = [&](double v) {
        auto z = xd;
        z[j] = v;
        return oracle::loss(m, z, y);
      };
      const double fd = oracle::central_difference(f, xd[j], 1e-4);
      EXPECT_LT(oracle::rel_error(lg.grad[j], fd), 1e-4) << "feature " << j << " trial " << trial;
    }
    ++checked;
  }
  EXPECT_GE(checked, 50);
}

TEST_P(AllKinds, ParameterGradientMatchesFiniteDifferences) {
  const std::size_t d = 6;
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = small_model(GetParam(), d, 500 + trial);
    scramble(m, 600 + trial, 1.0);
    std::vector<BinarySample> batch;
    for (int k = 0; k < 3; ++k) {
      batch.push_back(oracle::random_sample(rng, d, 0.5, rng.bernoulli(0.5) ? Label::kMalware : Label::kBenign));
    }
    bool near_kink = false;
    for (const auto& s : batch) near_kink |= oracle::kink_distance(m, oracle::dense(s, d), s.label) < 1e-3;
    if (near_kink) continue;
    std::vector<const BinarySample*> ptrs;
    for (const auto& s : batch) ptrs.push_back(&s);
    for (bool penalty : {false, true}) {
      std::vector<double> grad;
      batch_objective(m, ptrs, &grad, penalty);
      for (std::size_t i = 0; i < m.parameter_count(); ++i) {
        auto f = [&](double v) {
          Model t = m;
          t.mutable_parameters()[i] = v;
          return batch_objective(t, ptrs, nullptr, penalty);
        };
        const double fd = oracle::central_difference(f, m.parameters()[i], 1e-5);
        ASSERT_LT(oracle::rel_error(grad[i], fd), 1e-4) << "param " << i << " penalty " << penalty;
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Models, AllKinds,
                         ::testing::Values(ModelKind::kLinearMargin, ModelKind::kMlp, ModelKind::kSoftTree),
                         [](const auto& info) {
                           std::string s(to_string(info.param));
                           std::replace(s.begin(), s.end(), '-', '_');
                           return s;
                         });

TEST(Loss, HingeFlatRegion) {
  const auto m = Model::linear(FeatureSpaceSpec::make(3), {2.0, 0.5, -1.0}, 0.0);
  const auto lg = loss_and_grad_input(m, BinarySample::from_indices({0}, Label::kMalware), Label::kMalware);
  EXPECT_EQ(lg.loss, 0.0);
  for (double g : lg.grad) EXPECT_EQ(g, 0.0);
}

TEST(Loss, CrossEntropyAtEvenOdds) {
  auto m = small_model(ModelKind::kMlp, 4, 1);
  std::fill(m.mutable_parameters().begin(), m.mutable_parameters().end(), 0.0);
  EXPECT_NEAR(attack_loss(m, BinarySample{}, Label::kMalware), kLn2, 1e-15);
  auto t = small_model(ModelKind::kSoftTree, 4, 1);
  std::fill(t.mutable_parameters().begin(), t.mutable_parameters().end(), 0.0);
  EXPECT_NEAR(attack_loss(t, BinarySample{}, Label::kBenign), kLn2, 1e-15);
}

TEST(Loss, MisclassifiedMeansAboveLn2) {
  Rng rng(8);
  for (auto kind : {ModelKind::kMlp, ModelKind::kSoftTree}) {
    for (int trial = 0; trial < 200; ++trial) {
      auto m = small_model(kind, 6, 900 + trial);
      scramble(m, 1000 + trial, 2.0);
      const auto x = oracle::random_sample(rng, 6, 0.5, Label::kMalware);
      for (Label y : {Label::kBenign, Label::kMalware}) {
        if (predict(m, x).label != y) {
          EXPECT_GT(attack_loss(m, x, y), kLn2);
        }
      }
    }
  }
}

TEST(SoftTree, LeafProbabilitiesSumToOne) {
  Rng rng(4);
  ModelOptions opts;
  opts.max_depth = 5;
  auto m = Model::create(ModelKind::kSoftTree, FeatureSpaceSpec::make(20), opts, 1);
  scramble(m, 2, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = leaf_probabilities(m, oracle::random_sample(rng, 20, 0.3, Label::kBenign));
    ASSERT_EQ(p.size(), 32u);
    double s = 0.0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(SoftTree, PenaltyIsTrainingOnly) {
  auto m = small_model(ModelKind::kSoftTree, 5, 3);
  scramble(m, 4, 1.0);
  const auto x = BinarySample::from_indices({1, 3}, Label::kMalware);
  const BinarySample* ptr = &x;
  const double with = batch_objective(m, std::span(&ptr, 1), nullptr, true);
  const double without = batch_objective(m, std::span(&ptr, 1), nullptr, false);
  EXPECT_GT(with, without);
  EXPECT_DOUBLE_EQ(without, attack_loss(m, x, Label::kMalware));
}

TEST(Init, UniformWithinFanInBound) {
  const auto m = Model::create(ModelKind::kLinearMargin, FeatureSpaceSpec::make(100), {}, 1);
  for (double p : m.parameters()) EXPECT_LE(std::abs(p), 0.1);
  EXPECT_EQ(m, Model::create(ModelKind::kLinearMargin, FeatureSpaceSpec::make(100), {}, 1));
}

Dataset toy_data(std::uint64_t seed, double overlap = 0.2) {
  SyntheticSpec spec;
  spec.d = 30;
  spec.n = 400;
  spec.malware_ratio = 0.3;
  spec.overlap = overlap;
  spec.seed = seed;
  return generate_synthetic(spec);
}

TEST(Fit, ZeroEpochsKeepsInit) {
  const auto ds = toy_data(1);
  const auto init = small_model(ModelKind::kMlp, 30, 2);
  auto cfg = TrainConfig::defaults_for(ModelKind::kMlp);
  cfg.epochs = 0;
  const auto fit = fit_standard(init, ds, ds, cfg);
  EXPECT_EQ(fit.model, init);
  EXPECT_EQ(fit.best_epoch, 0u);
}

TEST(Fit, EmptyTrainSetIsConfigError) {
  const auto init = small_model(ModelKind::kMlp, 30, 2);
  Dataset empty;
  empty.space = FeatureSpaceSpec::make(30);
  try {
    fit_standard(init, empty, empty, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(Fit, DeterministicForSeed) {
  const auto ds = toy_data(3);
  for (auto kind : {ModelKind::kLinearMargin, ModelKind::kMlp, ModelKind::kSoftTree}) {
    const auto init = small_model(kind, 30, 4);
    auto cfg = TrainConfig::defaults_for(kind);
    cfg.epochs = 3;
    cfg.seed = 77;
    const auto a = fit_standard(init, ds, ds, cfg);
    const auto b = fit_standard(init, ds, ds, cfg);
    EXPECT_EQ(a.model, b.model) << to_string(kind);
    cfg.seed = 78;
    EXPECT_NE(fit_standard(init, ds, ds, cfg).model, a.model) << to_string(kind);
  }
}

TEST(Fit, SeparableDataReachesHighTrainF1) {
  SyntheticSpec spec;
  spec.d = 30;
  spec.n = 400;
  spec.malware_ratio = 0.3;
  spec.overlap = 0.0;
  spec.min_rate = 0.4;
  spec.max_rate = 0.6;
  spec.seed = 5;
  auto ds = generate_synthetic(spec);
  // Empty samples of both classes would make the data inseparable.
  std::erase_if(ds.samples, [](const BinarySample& s) { return s.active.empty(); });
  ds.order_keys.clear();
  for (auto kind : {ModelKind::kLinearMargin, ModelKind::kMlp, ModelKind::kSoftTree}) {
    const auto init = small_model(kind, 30, 6);
    auto cfg = TrainConfig::defaults_for(kind);
    cfg.epochs = 30;
    const auto fit = fit_standard(init, ds, ds, cfg);
    EXPECT_GE(confusion(fit.model, ds).f1(), 0.99) << to_string(kind);
  }
}

TEST(Fit, ReturnsBestValidationEpoch) {
  const auto ds = toy_data(7, 0.5);
  const auto init = small_model(ModelKind::kMlp, 30, 8);
  auto cfg = TrainConfig::defaults_for(ModelKind::kMlp);
  cfg.epochs = 8;
  const auto split = split_dataset(ds, SplitSpec{}, 1);
  const auto fit = fit_standard(init, split.train, split.val, cfg);
  ASSERT_EQ(fit.log.size(), 8u);
  double best = -1.0;
  std::size_t best_epoch = 0;
  for (const auto& e : fit.log) {
    if (e.val_f1 > best) {
      best = e.val_f1;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(fit.best_epoch, best_epoch);
  EXPECT_DOUBLE_EQ(fit.best_val_f1, best);
  EXPECT_DOUBLE_EQ(confusion(fit.model, split.val).f1(), best);
}

TEST(Fit, LinearRegularizationUsesC) {
  // Without data pressure (all-empty samples) only the bias moves; weights
  // shrink by the 1/(C n) decay.
  Dataset ds;
  ds.space = FeatureSpaceSpec::make(2);
  for (int i = 0; i < 10; ++i) ds.samples.push_back({{}, i < 5 ? Label::kMalware : Label::kBenign});
  const auto init = Model::linear(ds.space, {1.0, 1.0}, 0.0);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.0;
  cfg.batch_size = 10;
  cfg.epochs = 1;
  cfg.margin_C = 0.5;
  const auto fit = fit_standard(init, ds, Dataset{}, cfg);
  EXPECT_NEAR(fit.model.parameters()[0], 1.0 - 0.1 * (1.0 / (0.5 * 10)), 1e-12);
}

TEST(Checkpoint, RoundTripsExactly) {
  for (auto kind : {ModelKind::kLinearMargin, ModelKind::kMlp, ModelKind::kSoftTree}) {
    auto m = small_model(kind, 12, 9);
    scramble(m, 10, 0.7);
    std::stringstream buf;
    write_model(buf, m);
    EXPECT_EQ(read_model(buf), m) << to_string(kind);
  }
}

TEST(Checkpoint, RejectsLayoutMismatch) {
  const auto m = small_model(ModelKind::kMlp, 12, 9);
  std::stringstream buf;
  write_model(buf, m);
  std::string text = buf.str();
  text.replace(text.find("params"), 6, "params");  // unchanged header
  const auto pos = text.find("hidden 7,5");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 10, "hidden 7,6");
  std::istringstream in(text);
  EXPECT_THROW(read_model(in), Error);
}

}  // namespace
}  // namespace atbench
