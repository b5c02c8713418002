// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The atbench Authors

#include <gtest/gtest.h>

#include <sstream>

#include "atbench/robust_training.hpp"

namespace atbench {
namespace {

struct Fixture {
  Dataset train, val;
  Model init;
};

Fixture make_fixture(ModelKind kind = ModelKind::kMlp) {
  SyntheticSpec spec;
  spec.d = 40;
  spec.n = 400;
  spec.malware_ratio = 0.3;
  spec.overlap = 0.3;
  spec.seed = 21;
  const auto split = split_dataset(generate_synthetic(spec), SplitSpec{}, 3);
  ModelOptions opts;
  opts.hidden = {16};
  opts.max_depth = 3;
  return {split.train, split.val, Model::create(kind, split.train.space, opts, 5)};
}

ATConfig at_config(ModelKind kind, double alpha, std::size_t eps = 5) {
  ATConfig c;
  c.attack.kind = AttackKind::kPgd;
  c.attack.epsilon = eps;
  c.epsilon = eps;
  c.alpha = alpha;
  c.train = TrainConfig::defaults_for(kind);
  c.train.epochs = 4;
  c.train.seed = 17;
  return c;
}

TEST(AdversarialCount, Rounds) {
  EXPECT_EQ(adversarial_count(0.0, 120), 0u);
  EXPECT_EQ(adversarial_count(0.5, 121), 61u);  // 60.5 rounds away from zero
  EXPECT_EQ(adversarial_count(0.1, 124), 12u);
  EXPECT_EQ(adversarial_count(1.0, 77), 77u);
}

TEST(AdversarialTrain, AlphaZeroMatchesStandardTraining) {
  for (auto kind : {ModelKind::kLinearMargin, ModelKind::kMlp, ModelKind::kSoftTree}) {
    const auto f = make_fixture(kind);
    const auto cfg = at_config(kind, 0.0);
    const auto at = adversarial_train(f.init, f.train, f.val, cfg);
    const auto plain = fit_standard(f.init, f.train, f.val, cfg.train);
    EXPECT_EQ(at.model, plain.model) << to_string(kind);
    EXPECT_EQ(at.best_epoch, plain.best_epoch);
    EXPECT_EQ(at.log.total_aes(), 0u);
  }
}

TEST(AdversarialTrain, GeneratesRoundedCountEachEpoch) {
  const auto f = make_fixture();
  const auto cfg = at_config(ModelKind::kMlp, 0.5);
  const auto r = adversarial_train(f.init, f.train, f.val, cfg);
  const auto expected = adversarial_count(0.5, f.train.count(Label::kMalware));
  ASSERT_EQ(r.log.epochs.size(), 4u);
  for (const auto& e : r.log.epochs) {
    EXPECT_EQ(e.ae_count, expected);
    EXPECT_LE(e.flips_total, expected * cfg.epsilon);
    std::size_t counted = 0;
    for (auto c : e.flip_counts) counted += c;
    EXPECT_EQ(counted, e.flips_total);
    EXPECT_LE(e.ae_evading, e.ae_count);
  }
  EXPECT_LE(r.best_epoch, 4u);
}

TEST(AdversarialTrain, DeterministicAndWorkerIndependent) {
  const auto f = make_fixture();
  auto cfg = at_config(ModelKind::kMlp, 0.5);
  const auto a = adversarial_train(f.init, f.train, f.val, cfg);
  cfg.workers = 3;
  const auto b = adversarial_train(f.init, f.train, f.val, cfg);
  EXPECT_EQ(a.model, b.model);
  ASSERT_EQ(a.log.epochs.size(), b.log.epochs.size());
  for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
    EXPECT_EQ(a.log.epochs[i].flip_counts, b.log.epochs[i].flip_counts);
  }
}

TEST(AdversarialTrain, ReusedExamplesAreCachedAcrossEpochs) {
  const auto f = make_fixture();
  auto cfg = at_config(ModelKind::kMlp, 1.0);
  cfg.regenerate_each_epoch = false;
  const auto r = adversarial_train(f.init, f.train, f.val, cfg);
  // With alpha = 1 every malware sample is selected each epoch, so after the
  // first epoch nothing is regenerated and the flip pattern repeats.
  for (std::size_t i = 1; i < r.log.epochs.size(); ++i) {
    EXPECT_EQ(r.log.epochs[i].flip_counts, r.log.epochs[0].flip_counts);
    EXPECT_EQ(r.log.epochs[i].mean_seconds_per_ae, 0.0);
  }
}

TEST(AdversarialTrain, ConfigErrors) {
  const auto f = make_fixture();
  auto cfg = at_config(ModelKind::kMlp, 1.5);
  EXPECT_THROW(adversarial_train(f.init, f.train, f.val, cfg), Error);
  cfg = at_config(ModelKind::kMlp, 0.5);
  cfg.attack.epsilon = 3;
  EXPECT_THROW(adversarial_train(f.init, f.train, f.val, cfg), Error);
  Dataset benign_only;
  benign_only.space = f.train.space;
  for (const auto& s : f.train.samples) {
    if (s.label == Label::kBenign) benign_only.samples.push_back(s);
  }
  EXPECT_THROW(adversarial_train(f.init, benign_only, f.val, at_config(ModelKind::kMlp, 0.5)), Error);
}

TEST(ATLogFormat, JsonLinesRoundTrip) {
  const auto f = make_fixture();
  const auto r = adversarial_train(f.init, f.train, f.val, at_config(ModelKind::kMlp, 0.5));
  std::ostringstream out;
  write_atlog(out, r.log);
  std::istringstream in(out.str());
  const auto back = read_atlog(in);
  EXPECT_EQ(back.dimension, r.log.dimension);
  ASSERT_EQ(back.epochs.size(), r.log.epochs.size());
  for (std::size_t i = 0; i < back.epochs.size(); ++i) {
    EXPECT_EQ(back.epochs[i].flip_counts, r.log.epochs[i].flip_counts);
    EXPECT_EQ(back.epochs[i].ae_count, r.log.epochs[i].ae_count);
    EXPECT_DOUBLE_EQ(back.epochs[i].mean_ae_loss, r.log.epochs[i].mean_ae_loss);
  }
  EXPECT_EQ(back.total_flip_counts(), r.log.total_flip_counts());

  std::istringstream bad("{\"epoch\":1}\n");
  EXPECT_THROW(read_atlog(bad), Error);
}

}  // namespace
}  // namespace atbench
