// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The atbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "atbench/attacks.hpp"
#include "atbench/common.hpp"
#include "atbench/featurespace.hpp"
#include "atbench/models.hpp"
#include "atbench/robust_training.hpp"

namespace atbench {

// ---------------------------------------------------------------------------
// Joint feature importance.

/// Per-feature flip counts in two contexts: adversarial training (A) and an
/// evaluation attack (B).
struct FlipFrequencyTable {
  std::size_t dimension = 0;
  std::vector<std::size_t> at_counts;
  std::vector<std::size_t> attack_counts;

  std::size_t at_total() const {
    std::size_t n = 0;
    for (auto c : at_counts) n += c;
    return n;
  }
  std::size_t attack_total() const {
    std::size_t n = 0;
    for (auto c : attack_counts) n += c;
    return n;
  }
};

inline FlipFrequencyTable flip_frequency_table(const ATLog& at_log,
                                               std::span<const AttackOutcome> attack_traces) {
  FlipFrequencyTable t;
  t.dimension = at_log.dimension;
  for (const auto& e : at_log.epochs) {
    if (e.flip_counts.size() != t.dimension) {
      fail(ErrorCode::kDimension, "AT log epoch has " + std::to_string(e.flip_counts.size()) +
                                      " flip counts, expected " + std::to_string(t.dimension));
    }
  }
  t.at_counts = at_log.total_flip_counts();
  t.attack_counts.assign(t.dimension, 0);
  for (const auto& o : attack_traces) {
    for (const auto& step : o.trace) {
      for (auto j : step.flipped) {
        if (j >= t.dimension) {
          fail(ErrorCode::kDimension, "attack trace flips feature " + std::to_string(j) +
                                          " outside dimension " + std::to_string(t.dimension));
        }
        ++t.attack_counts[j];
      }
    }
  }
  return t;
}

struct JdpDensity {
  // (count_A, count_B) for every feature, in feature order.
  std::vector<std::pair<std::size_t, std::size_t>> raw;
  std::size_t grid = 0;
  double x_lo = 0.0, x_hi = 0.0, y_lo = 0.0, y_hi = 0.0;
  double bandwidth_x = 0.0, bandwidth_y = 0.0;
  // Cell masses, grid x grid, row-major over (x cell, y cell); sum to 1.
  std::vector<double> mass;
  // Set when no feature was flipped in either context; mass is then empty.
  bool all_zero = false;

  double cell(std::size_t ix, std::size_t iy) const { return mass[ix * grid + iy]; }

  std::pair<std::size_t, std::size_t> mode() const {
    const auto it = std::max_element(mass.begin(), mass.end());
    const auto k = static_cast<std::size_t>(it - mass.begin());
    return {k / grid, k % grid};
  }

  double x_edge(std::size_t i) const { return x_lo + (x_hi - x_lo) * static_cast<double>(i) / static_cast<double>(grid); }
  double y_edge(std::size_t i) const { return y_lo + (y_hi - y_lo) * static_cast<double>(i) / static_cast<double>(grid); }
};

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Gaussian product-kernel density over the (count_A, count_B) points of the
/// features flipped in at least one context. Each cell holds the exact kernel
/// mass over its rectangle, renormalized over the grid. Without an explicit
/// bandwidth each axis uses Silverman's 2-D rule sigma * n^(-1/6) (1 when the
/// axis has no spread).
inline JdpDensity jdp_density(const FlipFrequencyTable& table, std::size_t grid,
                              std::optional<double> bandwidth = std::nullopt) {
  if (grid == 0) fail(ErrorCode::kConfig, "density grid must be positive");
  if (bandwidth && !(*bandwidth > 0.0)) fail(ErrorCode::kConfig, "bandwidth must be positive");
  if (table.at_counts.size() != table.dimension || table.attack_counts.size() != table.dimension) {
    fail(ErrorCode::kDimension, "flip table is inconsistent with its dimension");
  }
  JdpDensity out;
  out.grid = grid;
  std::vector<double> xs, ys;
  for (std::size_t j = 0; j < table.dimension; ++j) {
    out.raw.emplace_back(table.at_counts[j], table.attack_counts[j]);
    if (table.at_counts[j] + table.attack_counts[j] > 0) {
      xs.push_back(static_cast<double>(table.at_counts[j]));
      ys.push_back(static_cast<double>(table.attack_counts[j]));
    }
  }
  if (xs.empty()) {
    out.all_zero = true;
    return out;
  }
  const double n = static_cast<double>(xs.size());
  auto silverman = [&](const std::vector<double>& v) {
    const double s = detail::sample_std(v);
    return s > 0.0 ? s * std::pow(n, -1.0 / 6.0) : 1.0;
  };
  out.bandwidth_x = bandwidth.value_or(silverman(xs));
  out.bandwidth_y = bandwidth.value_or(silverman(ys));
  const auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
  const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
  out.x_lo = *xmin - 3.0 * out.bandwidth_x;
  out.x_hi = *xmax + 3.0 * out.bandwidth_x;
  out.y_lo = *ymin - 3.0 * out.bandwidth_y;
  out.y_hi = *ymax + 3.0 * out.bandwidth_y;

  // Separable kernel: per-point per-axis cell masses, then outer products.
  std::vector<double> px(grid), py(grid);
  out.mass.assign(grid * grid, 0.0);
  for (std::size_t p = 0; p < xs.size(); ++p) {
    for (std::size_t i = 0; i < grid; ++i) {
      px[i] = detail::normal_cdf((out.x_edge(i + 1) - xs[p]) / out.bandwidth_x) -
              detail::normal_cdf((out.x_edge(i) - xs[p]) / out.bandwidth_x);
      py[i] = detail::normal_cdf((out.y_edge(i + 1) - ys[p]) / out.bandwidth_y) -
              detail::normal_cdf((out.y_edge(i) - ys[p]) / out.bandwidth_y);
    }
    for (std::size_t i = 0; i < grid; ++i) {
      for (std::size_t k = 0; k < grid; ++k) out.mass[i * grid + k] += px[i] * py[k];
    }
  }
  double total = 0.0;
  for (double m : out.mass) total += m;
  for (double& m : out.mass) m /= total;
  return out;
}

inline void write_flip_table_csv(std::ostream& out, const FlipFrequencyTable& t) {
  out << "feature,at_count,attack_count\n";
  for (std::size_t j = 0; j < t.dimension; ++j) {
    out << j << ',' << t.at_counts[j] << ',' << t.attack_counts[j] << '\n';
  }
}

inline void write_density_csv(std::ostream& out, const JdpDensity& d) {
  out << "x_lo,x_hi,y_lo,y_hi,mass\n";
  if (d.all_zero) return;
  for (std::size_t i = 0; i < d.grid; ++i) {
    for (std::size_t k = 0; k < d.grid; ++k) {
      out << format_double(d.x_edge(i)) << ',' << format_double(d.x_edge(i + 1)) << ','
          << format_double(d.y_edge(k)) << ',' << format_double(d.y_edge(k + 1)) << ','
          << format_double(d.cell(i, k)) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Decision-function roughness.

struct RoughnessEstimate {
  double gamma = 0.0;
  std::vector<double> per_sample;  // r per sample
  std::size_t m = 0;
  std::size_t epsilon = 0;
  std::uint64_t seed = 0;
  // Standard error of gamma from the per-sample binomial variances.
  double std_error = 0.0;
  static constexpr const char* kSampling = "radius-uniform-then-subset";
};

/// Features a draw may flip for x under the model's mutation policy.
inline std::vector<FeatureIndex> admissible_flips(const FeatureSpaceSpec& space,
                                                  const BinarySample& x) {
  std::vector<FeatureIndex> out;
  for (std::size_t j = 0; j < space.dimension; ++j) {
    const bool on = x.has(static_cast<FeatureIndex>(j));
    if (on ? space.policy == MutationPolicy::kFlipAny : space.is_addable(j)) {
      out.push_back(static_cast<FeatureIndex>(j));
    }
  }
  return out;
}

/// Per sample, m draws from its L0 ball: radius k uniform on {1..epsilon}
/// (capped at the number of admissible features), then k distinct admissible
/// features uniformly at random. r is the share of draws whose predicted
/// label differs from the sample's; gamma is the mean r.
inline RoughnessEstimate roughness_gamma(const Model& model, std::span<const BinarySample> samples,
                                         std::size_t epsilon, std::size_t m, std::uint64_t seed,
                                         std::size_t workers = 1) {
  if (epsilon == 0) fail(ErrorCode::kPrecondition, "roughness needs epsilon >= 1");
  if (m == 0) fail(ErrorCode::kPrecondition, "roughness needs m >= 1");
  RoughnessEstimate est;
  est.m = m;
  est.epsilon = epsilon;
  est.seed = seed;
  est.per_sample.assign(samples.size(), 0.0);
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    const auto& x = samples[i];
    const Label base = predict(model, x).label;
    auto pool = admissible_flips(model.space(), x);
    if (pool.empty()) return;
    const std::size_t max_k = std::min(epsilon, pool.size());
    Rng rng(derive_seed(seed, i));
    std::size_t changed = 0;
    for (std::size_t draw = 0; draw < m; ++draw) {
      const std::size_t k = 1 + rng.below(max_k);
      BinarySample z = x;
      for (std::size_t t = 0; t < k; ++t) {
        std::swap(pool[t], pool[t + rng.below(pool.size() - t)]);
        z.toggle(pool[t]);
      }
      if (predict(model, z).label != base) ++changed;
    }
    est.per_sample[i] = static_cast<double>(changed) / static_cast<double>(m);
  });
  if (!samples.empty()) {
    double sum = 0.0, var = 0.0;
    for (double r : est.per_sample) {
      sum += r;
      var += r * (1.0 - r) / static_cast<double>(m);
    }
    const double n = static_cast<double>(samples.size());
    est.gamma = sum / n;
    est.std_error = std::sqrt(var) / n;
  }
  return est;
}

// ---------------------------------------------------------------------------

/// Dense embedding export for external plotting tools: one row per sample,
/// d space-separated 0/1 columns followed by the label.
inline void write_embedding_matrix(std::ostream& out, const Dataset& ds) {
  const std::size_t d = ds.space.dimension;
  std::string row;
  for (const auto& s : ds.samples) {
    row.assign(2 * d, ' ');
    for (std::size_t j = 0; j < d; ++j) row[2 * j] = '0';
    for (auto j : s.active) row[2 * j] = '1';
    out << row << to_int(s.label) << '\n';
  }
}

}  // namespace atbench
