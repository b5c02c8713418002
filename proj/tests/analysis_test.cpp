// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The atbench Authors

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "atbench/analysis.hpp"
#include "support/oracles.hpp"

namespace atbench {
namespace {

ATLog log_from(std::size_t d, const std::vector<std::vector<std::size_t>>& epochs) {
  ATLog log;
  log.dimension = d;
  for (const auto& counts : epochs) {
    ATEpochLog e;
    e.flip_counts = counts;
    e.flips_total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    log.epochs.push_back(e);
  }
  return log;
}

AttackOutcome outcome_flipping(std::vector<std::vector<FeatureIndex>> steps) {
  AttackOutcome o;
  for (auto& s : steps) o.trace.push_back({"step", std::move(s), 0.0});
  return o;
}

TEST(FlipTable, CountsBothContexts) {
  const auto log = log_from(5, {{0, 1, 0, 0, 2}, {0, 1, 0, 0, 0}});
  const std::vector<AttackOutcome> attacks{outcome_flipping({{3}, {1}}), outcome_flipping({{3, 4}})};
  const auto t = flip_frequency_table(log, attacks);
  EXPECT_EQ(t.at_counts, (std::vector<std::size_t>{0, 2, 0, 0, 2}));
  EXPECT_EQ(t.attack_counts, (std::vector<std::size_t>{0, 1, 0, 2, 1}));
  // Feature 1 was flipped twice during training.
  EXPECT_EQ(t.at_counts[1], 2u);
  EXPECT_EQ(t.at_total(), log.total_flips());
  EXPECT_EQ(t.attack_total(), 4u);
}

TEST(FlipTable, Conservation) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 3 + rng.below(20);
    std::vector<std::vector<std::size_t>> epochs(1 + rng.below(4), std::vector<std::size_t>(d));
    for (auto& e : epochs) {
      for (auto& c : e) c = rng.below(5);
    }
    std::vector<AttackOutcome> attacks;
    std::size_t flips = 0;
    for (int a = 0; a < 5; ++a) {
      std::vector<FeatureIndex> s;
      for (std::size_t j = 0; j < d; ++j) {
        if (rng.bernoulli(0.3)) s.push_back(static_cast<FeatureIndex>(j));
      }
      flips += s.size();
      attacks.push_back(outcome_flipping({s}));
    }
    const auto log = log_from(d, epochs);
    const auto t = flip_frequency_table(log, attacks);
    EXPECT_EQ(t.at_total(), log.total_flips());
    EXPECT_EQ(t.attack_total(), flips);
  }
}

TEST(FlipTable, DimensionErrors) {
  auto log = log_from(3, {{1, 0, 0}});
  const std::vector<AttackOutcome> bad{outcome_flipping({{3}})};
  EXPECT_THROW(flip_frequency_table(log, bad), Error);
  log.epochs[0].flip_counts.push_back(0);
  EXPECT_THROW(flip_frequency_table(log, {}), Error);
}

FlipFrequencyTable table_of(std::vector<std::size_t> a, std::vector<std::size_t> b) {
  FlipFrequencyTable t;
  t.dimension = a.size();
  t.at_counts = std::move(a);
  t.attack_counts = std::move(b);
  return t;
}

TEST(Jdp, MassSumsToOneAndIsNonNegative) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::size_t> a(30), b(30);
    for (auto& v : a) v = rng.below(40);
    for (auto& v : b) v = rng.below(15);
    const auto d = jdp_density(table_of(a, b), 16);
    ASSERT_EQ(d.mass.size(), 256u);
    double sum = 0.0;
    for (double m : d.mass) {
      EXPECT_GE(m, 0.0);
      sum += m;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Jdp, SinglePointPeaksAtItsCell) {
  const auto d = jdp_density(table_of({0, 7, 0}, {0, 3, 0}), 9);
  EXPECT_DOUBLE_EQ(d.bandwidth_x, 1.0);
  EXPECT_DOUBLE_EQ(d.bandwidth_y, 1.0);
  EXPECT_DOUBLE_EQ(d.x_lo, 4.0);
  EXPECT_DOUBLE_EQ(d.x_hi, 10.0);
  const auto [ix, iy] = d.mode();
  EXPECT_EQ(ix, 4u);
  EXPECT_EQ(iy, 4u);
  // Symmetric about the point.
  EXPECT_NEAR(d.cell(3, 4), d.cell(5, 4), 1e-15);
}

TEST(Jdp, CellMassesMatchNumericalIntegration) {
  const auto t = table_of({4, 0, 9, 2, 6}, {1, 0, 3, 5, 2});
  const auto d = jdp_density(t, 6);
  // Oracle: midpoint rule on the Gaussian product kernel, normalized over
  // the same rectangle.
  std::vector<std::pair<double, double>> pts{{4, 1}, {9, 3}, {2, 5}, {6, 2}};
  const int sub = 40;
  std::vector<double> ref(36, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t k = 0; k < 6; ++k) {
      const double wx = (d.x_edge(i + 1) - d.x_edge(i)) / sub;
      const double wy = (d.y_edge(k + 1) - d.y_edge(k)) / sub;
      double acc = 0.0;
      for (int a = 0; a < sub; ++a) {
        for (int b = 0; b < sub; ++b) {
          const double x = d.x_edge(i) + (a + 0.5) * wx;
          const double y = d.y_edge(k) + (b + 0.5) * wy;
          for (auto [px, py] : pts) {
            const double zx = (x - px) / d.bandwidth_x, zy = (y - py) / d.bandwidth_y;
            acc += std::exp(-0.5 * (zx * zx + zy * zy)) * wx * wy;
          }
        }
      }
      ref[i * 6 + k] = acc;
      total += acc;
    }
  }
  for (std::size_t c = 0; c < 36; ++c) EXPECT_NEAR(d.mass[c], ref[c] / total, 5e-5) << c;
  // Silverman bandwidth from the sample std over the four flipped features.
  const double sx = std::sqrt(((4 - 5.25) * (4 - 5.25) + (9 - 5.25) * (9 - 5.25) + (2 - 5.25) * (2 - 5.25) +
                               (6 - 5.25) * (6 - 5.25)) / 3.0);
  EXPECT_NEAR(d.bandwidth_x, sx * std::pow(4.0, -1.0 / 6.0), 1e-12);
}

TEST(Jdp, AllZeroAndErrors) {
  const auto d = jdp_density(table_of({0, 0}, {0, 0}), 8);
  EXPECT_TRUE(d.all_zero);
  EXPECT_TRUE(d.mass.empty());
  EXPECT_THROW(jdp_density(table_of({1}, {1}), 0), Error);
  EXPECT_THROW(jdp_density(table_of({1}, {1}), 4, -1.0), Error);
  std::ostringstream out;
  write_density_csv(out, jdp_density(table_of({1, 2}, {2, 1}), 3));
  const auto csv = out.str();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
}

TEST(Roughness, MatchesExactProbabilityWithinStandardErrors) {
  Rng rng(4);
  std::vector<double> w(9);
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  const auto m = Model::linear(FeatureSpaceSpec::make(9, MutationPolicy::kFlipAny), w, 0.1);
  std::vector<BinarySample> xs;
  for (int i = 0; i < 12; ++i) xs.push_back(oracle::random_sample(rng, 9, 0.4, Label::kMalware));
  const auto est = roughness_gamma(m, xs, 3, 4000, 77);
  double exact = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = oracle::exact_roughness(m, xs[i], 3);
    EXPECT_NEAR(est.per_sample[i], r, 4.0 * std::sqrt(std::max(r * (1 - r), 1e-6) / 4000.0) + 1e-12) << i;
    exact += r;
  }
  exact /= static_cast<double>(xs.size());
  EXPECT_NEAR(est.gamma, exact, 3.0 * est.std_error + 1e-3);
}

TEST(Roughness, ConstantClassifierIsSmooth) {
  const auto m = Model::linear(FeatureSpaceSpec::make(10), std::vector<double>(10, 0.0), 1.0);
  Rng rng(5);
  std::vector<BinarySample> xs;
  for (int i = 0; i < 10; ++i) xs.push_back(oracle::random_sample(rng, 10, 0.3, Label::kMalware));
  const auto est = roughness_gamma(m, xs, 5, 100, 1);
  EXPECT_DOUBLE_EQ(est.gamma, 0.0);
  EXPECT_DOUBLE_EQ(est.std_error, 0.0);
}

TEST(Roughness, StandardErrorShrinksWithDraws) {
  Rng rng(6);
  std::vector<double> w(20);
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  const auto m = Model::linear(FeatureSpaceSpec::make(20, MutationPolicy::kFlipAny), w, 0.0);
  std::vector<BinarySample> xs;
  for (int i = 0; i < 40; ++i) xs.push_back(oracle::random_sample(rng, 20, 0.4, Label::kMalware));
  const auto a = roughness_gamma(m, xs, 6, 2000, 3);
  const auto b = roughness_gamma(m, xs, 6, 4000, 3);
  ASSERT_GT(a.std_error, 0.0);
  EXPECT_NEAR(b.std_error / a.std_error, 1.0 / std::sqrt(2.0), 0.05);
}

TEST(Roughness, DeterministicAndWorkerIndependent) {
  Rng rng(7);
  std::vector<double> w(15);
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  const auto m = Model::linear(FeatureSpaceSpec::make(15), w, 0.2);
  std::vector<BinarySample> xs;
  for (int i = 0; i < 20; ++i) xs.push_back(oracle::random_sample(rng, 15, 0.3, Label::kMalware));
  const auto a = roughness_gamma(m, xs, 4, 300, 9);
  const auto b = roughness_gamma(m, xs, 4, 300, 9, 4);
  EXPECT_EQ(a.per_sample, b.per_sample);
}

TEST(Roughness, Preconditions) {
  const auto m = Model::linear(FeatureSpaceSpec::make(3), {1, 1, 1}, 0.0);
  const std::vector<BinarySample> xs{BinarySample{}};
  EXPECT_THROW(roughness_gamma(m, xs, 0, 10, 1), Error);
  EXPECT_THROW(roughness_gamma(m, xs, 2, 0, 1), Error);
}

TEST(Embedding, DenseRows) {
  Dataset ds;
  ds.space = FeatureSpaceSpec::make(4);
  ds.samples = {BinarySample::from_indices({0, 3}, Label::kMalware), BinarySample{{}, Label::kBenign}};
  std::ostringstream out;
  write_embedding_matrix(out, ds);
  EXPECT_EQ(out.str(), "1 0 0 1 1\n0 0 0 0 0\n");
}

}  // namespace
}  // namespace atbench
