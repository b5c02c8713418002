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
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "atbench/common.hpp"

namespace atbench {

enum class Label : std::uint8_t { kBenign = 0, kMalware = 1 };

inline int to_int(Label y) { return static_cast<int>(y); }

enum class MutationPolicy { kAddOnly, kFlipAny };

inline std::string_view to_string(MutationPolicy p) {
  return p == MutationPolicy::kAddOnly ? "add-only" : "flip-any";
}

inline MutationPolicy parse_mutation_policy(std::string_view s) {
  if (s == "add-only") return MutationPolicy::kAddOnly;
  if (s == "flip-any") return MutationPolicy::kFlipAny;
  fail(ErrorCode::kConfig, "unknown mutation policy '" + std::string(s) + "'");
}

using FeatureIndex = std::uint32_t;

struct FeatureSpaceSpec {
  std::size_t dimension = 1;
  MutationPolicy policy = MutationPolicy::kAddOnly;
  // Features that an attacker may switch on. Empty means all addable.
  std::vector<bool> addable;

  static FeatureSpaceSpec make(std::size_t d,
                               MutationPolicy policy = MutationPolicy::kAddOnly) {
    FeatureSpaceSpec s;
    s.dimension = d;
    s.policy = policy;
    s.addable.assign(d, true);
    s.validate();
    return s;
  }

  bool is_addable(std::size_t j) const { return addable.empty() || addable[j]; }

  void validate() const {
    if (dimension < 1) fail(ErrorCode::kConfig, "feature space dimension must be >= 1");
    if (!addable.empty() && addable.size() != dimension) {
      fail(ErrorCode::kConfig, "addable flags length " + std::to_string(addable.size()) +
                                   " does not match dimension " + std::to_string(dimension));
    }
  }

  friend bool operator==(const FeatureSpaceSpec&, const FeatureSpaceSpec&) = default;
};

/// A binary feature vector stored as its sorted set of active indices.
struct BinarySample {
  std::vector<FeatureIndex> active;
  Label label = Label::kBenign;

  /// Sorts and deduplicates `indices`.
  static BinarySample from_indices(std::vector<FeatureIndex> indices, Label label) {
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    return BinarySample{std::move(indices), label};
  }

  bool has(FeatureIndex j) const {
    return std::binary_search(active.begin(), active.end(), j);
  }

  void set(FeatureIndex j) {
    auto it = std::lower_bound(active.begin(), active.end(), j);
    if (it == active.end() || *it != j) active.insert(it, j);
  }

  void clear(FeatureIndex j) {
    auto it = std::lower_bound(active.begin(), active.end(), j);
    if (it != active.end() && *it == j) active.erase(it);
  }

  void toggle(FeatureIndex j) {
    auto it = std::lower_bound(active.begin(), active.end(), j);
    if (it != active.end() && *it == j) {
      active.erase(it);
    } else {
      active.insert(it, j);
    }
  }

  bool is_consistent(std::size_t d) const {
    for (std::size_t i = 0; i < active.size(); ++i) {
      if (active[i] >= d) return false;
      if (i > 0 && active[i] <= active[i - 1]) return false;
    }
    return true;
  }

  std::vector<double> dense(std::size_t d) const {
    std::vector<double> x(d, 0.0);
    for (auto j : active) x[j] = 1.0;
    return x;
  }

  friend bool operator==(const BinarySample&, const BinarySample&) = default;
};

/// Number of coordinates where a and b differ.
inline std::size_t hamming(const BinarySample& a, const BinarySample& b) {
  std::size_t i = 0, j = 0, diff = 0;
  while (i < a.active.size() && j < b.active.size()) {
    if (a.active[i] == b.active[j]) {
      ++i;
      ++j;
    } else if (a.active[i] < b.active[j]) {
      ++diff;
      ++i;
    } else {
      ++diff;
      ++j;
    }
  }
  return diff + (a.active.size() - i) + (b.active.size() - j);
}

struct Dataset {
  FeatureSpaceSpec space;
  std::vector<BinarySample> samples;
  // Timestamp surrogate, empty or one per sample.
  std::vector<std::int64_t> order_keys;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  std::size_t count(Label y) const {
    return static_cast<std::size_t>(std::count_if(
        samples.begin(), samples.end(), [y](const BinarySample& s) { return s.label == y; }));
  }

  void validate() const {
    space.validate();
    if (!order_keys.empty() && order_keys.size() != samples.size()) {
      fail(ErrorCode::kConfig, "order keys must be absent or one per sample");
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!samples[i].is_consistent(space.dimension)) {
        fail(ErrorCode::kRange, "sample " + std::to_string(i) +
                                    " is inconsistent with dimension " +
                                    std::to_string(space.dimension));
      }
    }
  }

  Dataset subset(const std::vector<std::size_t>& indices) const {
    Dataset out;
    out.space = space;
    out.samples.reserve(indices.size());
    for (auto i : indices) out.samples.push_back(samples[i]);
    if (!order_keys.empty()) {
      for (auto i : indices) out.order_keys.push_back(order_keys[i]);
    }
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// Sparse text format: `<label> [qid:<order>] <idx>:1 <idx>:1 ...`, 0-based
// indices. `qid` carries the optional order key.

inline Dataset parse_sparse_dataset(std::istream& in, std::size_t d,
                                    MutationPolicy policy = MutationPolicy::kAddOnly) {
  Dataset ds;
  ds.space = FeatureSpaceSpec::make(d, policy);
  std::string line;
  std::size_t line_no = 0;
  bool any_order = false, all_order = true;
  std::vector<std::int64_t> keys;
  auto parse_error = [&](const std::string& what) {
    fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream tokens(line);
    std::string tok;
    if (!(tokens >> tok)) continue;  // blank line
    Label label;
    if (tok == "0") {
      label = Label::kBenign;
    } else if (tok == "1") {
      label = Label::kMalware;
    } else {
      parse_error("label must be 0 or 1, got '" + tok + "'");
    }
    std::vector<FeatureIndex> idx;
    std::optional<std::int64_t> order;
    while (tokens >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size()) {
        parse_error("expected <index>:1, got '" + tok + "'");
      }
      const std::string_view key(tok.data(), colon);
      const std::string_view value(tok.data() + colon + 1, tok.size() - colon - 1);
      if (key == "qid") {
        std::int64_t k = 0;
        auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), k);
        if (ec != std::errc() || p != value.data() + value.size()) {
          parse_error("bad qid '" + tok + "'");
        }
        order = k;
        continue;
      }
      std::uint64_t j = 0;
      auto [p, ec] = std::from_chars(key.data(), key.data() + key.size(), j);
      if (ec != std::errc() || p != key.data() + key.size()) {
        parse_error("bad feature index in '" + tok + "'");
      }
      if (value != "1" && value != "1.0" && value != "0" && value != "0.0") {
        parse_error("feature values must be binary, got '" + tok + "'");
      }
      if (j >= d) {
        fail(ErrorCode::kRange, "line " + std::to_string(line_no) + ": feature index " +
                                    std::to_string(j) + " out of range for dimension " +
                                    std::to_string(d));
      }
      if (value[0] == '1') idx.push_back(static_cast<FeatureIndex>(j));
    }
    ds.samples.push_back(BinarySample::from_indices(std::move(idx), label));
    any_order = any_order || order.has_value();
    all_order = all_order && order.has_value();
    keys.push_back(order.value_or(0));
  }
  if (any_order) {
    if (!all_order) fail(ErrorCode::kParse, "qid must be present on all lines or none");
    ds.order_keys = std::move(keys);
  }
  return ds;
}

inline Dataset load_sparse_dataset(const std::string& path, std::size_t d,
                                   MutationPolicy policy = MutationPolicy::kAddOnly) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open dataset '" + path + "'");
  return parse_sparse_dataset(in, d, policy);
}

inline void write_sparse_dataset(std::ostream& out, const Dataset& ds) {
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    out << to_int(s.label);
    if (!ds.order_keys.empty()) out << " qid:" << ds.order_keys[i];
    for (auto j : s.active) out << ' ' << j << ":1";
    out << '\n';
  }
}

inline void save_sparse_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write dataset '" + path + "'");
  write_sparse_dataset(out, ds);
}

// ---------------------------------------------------------------------------
// Synthetic data.

struct SyntheticSpec {
  std::size_t d = 200;
  std::size_t n = 5000;
  double malware_ratio = 0.10;
  // Per-class activation probabilities. When empty they are derived from
  // `overlap`, `min_rate`, `max_rate` and the seed.
  std::vector<double> benign_profile;
  std::vector<double> malware_profile;
  // 0 gives disjoint class supports, 1 identical profiles.
  double overlap = 0.3;
  double min_rate = 0.02;
  double max_rate = 0.20;
  // Share of features an attacker may add; the rest are marked non-addable.
  double addable_fraction = 1.0;
  MutationPolicy policy = MutationPolicy::kAddOnly;
  std::uint64_t seed = 0;
};

/// Builds the two class profiles. Each feature belongs to the support of one
/// class (a seeded half/half assignment) and fires there with a base rate r;
/// in the other class it fires with overlap * r.
inline std::pair<std::vector<double>, std::vector<double>> synthetic_profiles(
    const SyntheticSpec& spec) {
  if (!spec.benign_profile.empty() || !spec.malware_profile.empty()) {
    return {spec.benign_profile, spec.malware_profile};
  }
  Rng rng(derive_seed(spec.seed, 1));
  std::vector<std::size_t> perm(spec.d);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<double> benign(spec.d), malware(spec.d);
  for (std::size_t k = 0; k < spec.d; ++k) {
    const std::size_t j = perm[k];
    const double r = rng.uniform(spec.min_rate, spec.max_rate);
    const bool benign_support = k < spec.d / 2 + spec.d % 2;
    benign[j] = benign_support ? r : spec.overlap * r;
    malware[j] = benign_support ? spec.overlap * r : r;
  }
  return {benign, malware};
}

inline std::size_t synthetic_malware_count(const SyntheticSpec& spec) {
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(spec.n) * spec.malware_ratio));
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n == 0) fail(ErrorCode::kEmptySpec, "synthetic spec has n = 0");
  if (spec.d == 0) fail(ErrorCode::kEmptySpec, "synthetic spec has d = 0");
  if (!(spec.malware_ratio >= 0.0 && spec.malware_ratio <= 1.0)) {
    fail(ErrorCode::kConfig, "malware_ratio must lie in [0, 1]");
  }
  if (!(spec.overlap >= 0.0 && spec.overlap <= 1.0)) {
    fail(ErrorCode::kConfig, "overlap must lie in [0, 1]");
  }
  const auto [benign, malware] = synthetic_profiles(spec);
  if (benign.size() != spec.d || malware.size() != spec.d) {
    fail(ErrorCode::kConfig, "class profiles must have length d");
  }
  for (std::size_t j = 0; j < spec.d; ++j) {
    if (!(benign[j] >= 0.0 && benign[j] <= 1.0 && malware[j] >= 0.0 && malware[j] <= 1.0)) {
      fail(ErrorCode::kConfig, "profile probabilities must lie in [0, 1]");
    }
  }

  Dataset ds;
  ds.space = FeatureSpaceSpec::make(spec.d, spec.policy);
  if (spec.addable_fraction < 1.0) {
    Rng frng(derive_seed(spec.seed, 3));
    for (std::size_t j = 0; j < spec.d; ++j) {
      ds.space.addable[j] = frng.uniform() < spec.addable_fraction;
    }
  }

  const std::size_t n_malware = synthetic_malware_count(spec);
  std::vector<Label> labels(spec.n, Label::kBenign);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_malware),
            Label::kMalware);
  Rng rng(derive_seed(spec.seed, 2));
  rng.shuffle(labels);

  ds.samples.reserve(spec.n);
  ds.order_keys.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto& profile = labels[i] == Label::kMalware ? malware : benign;
    BinarySample s;
    s.label = labels[i];
    for (std::size_t j = 0; j < spec.d; ++j) {
      if (rng.uniform() < profile[j]) s.active.push_back(static_cast<FeatureIndex>(j));
    }
    ds.samples.push_back(std::move(s));
    ds.order_keys.push_back(static_cast<std::int64_t>(i));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Splits.

struct SplitSpec {
  double train_fraction = 0.67;
  double val_fraction_of_train = 0.10;
  bool stratified = true;
  // Most recent samples (by order key) go to test, then validation.
  bool ordered = false;

  void validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      fail(ErrorCode::kConfig, "train_fraction must lie in (0, 1)");
    }
    if (!(val_fraction_of_train > 0.0 && val_fraction_of_train < 1.0)) {
      fail(ErrorCode::kConfig, "val_fraction_of_train must lie in (0, 1)");
    }
  }
};

struct SplitResult {
  Dataset train;
  Dataset val;
  Dataset test;
};

namespace detail {

/// Splits `total` across groups proportionally: floor of each share, then the
/// leftover units go to the largest fractional remainders (lowest group first
/// on ties).
inline std::vector<std::size_t> apportion(const std::vector<std::size_t>& group_sizes,
                                          std::size_t total) {
  std::size_t n = 0;
  for (auto g : group_sizes) n += g;
  std::vector<std::size_t> out(group_sizes.size(), 0);
  if (n == 0) return out;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < group_sizes.size(); ++k) {
    const double exact =
        static_cast<double>(group_sizes[k]) * static_cast<double>(total) / static_cast<double>(n);
    out[k] = std::min(group_sizes[k], static_cast<std::size_t>(std::floor(exact + 1e-9)));
    assigned += out[k];
    remainders.emplace_back(exact - static_cast<double>(out[k]), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total && r < remainders.size(); ++r) {
    const auto k = remainders[r].second;
    if (out[k] < group_sizes[k]) {
      ++out[k];
      ++assigned;
    }
  }
  return out;
}

}  // namespace detail

/// test = round((1 - train_fraction) * n); val = floor(val_fraction * pool).
inline SplitResult split_dataset(const Dataset& ds, const SplitSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (ds.empty()) fail(ErrorCode::kPrecondition, "cannot split an empty dataset");
  if (spec.ordered && ds.order_keys.size() != ds.size()) {
    fail(ErrorCode::kPrecondition, "ordered split requires order keys");
  }
  const std::size_t n = ds.size();
  const std::size_t n_test = static_cast<std::size_t>(
      std::llround((1.0 - spec.train_fraction) * static_cast<double>(n)));
  const std::size_t n_pool = n - n_test;
  const std::size_t n_val = static_cast<std::size_t>(
      std::floor(spec.val_fraction_of_train * static_cast<double>(n_pool) + 1e-9));

  // Groups are the two classes when stratified, else a single group.
  std::vector<std::vector<std::size_t>> groups(spec.stratified ? 2 : 1);
  for (std::size_t i = 0; i < n; ++i) {
    groups[spec.stratified ? to_int(ds.samples[i].label) : 0].push_back(i);
  }
  if (spec.stratified) {
    for (std::size_t c = 0; c < 2; ++c) {
      if (!groups[c].empty() && groups[c].size() < 3) {
        fail(ErrorCode::kStratification,
             "class " + std::to_string(c) + " has " + std::to_string(groups[c].size()) +
                 " samples, fewer than the 3 splits");
      }
    }
  }

  Rng rng(seed);
  for (auto& g : groups) {
    if (spec.ordered) {
      // Oldest first; test and validation are taken from the tail.
      std::stable_sort(g.begin(), g.end(), [&](std::size_t a, std::size_t b) {
        return ds.order_keys[a] < ds.order_keys[b];
      });
      std::reverse(g.begin(), g.end());
    } else {
      rng.shuffle(g);
    }
  }

  std::vector<std::size_t> sizes;
  for (const auto& g : groups) sizes.push_back(g.size());
  const auto test_per_group = detail::apportion(sizes, n_test);
  std::vector<std::size_t> pool_sizes;
  for (std::size_t k = 0; k < groups.size(); ++k) pool_sizes.push_back(sizes[k] - test_per_group[k]);
  const auto val_per_group = detail::apportion(pool_sizes, n_val);

  std::vector<std::size_t> train_idx, val_idx, test_idx;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const auto& g = groups[k];
    std::size_t pos = 0;
    for (; pos < test_per_group[k]; ++pos) test_idx.push_back(g[pos]);
    for (std::size_t v = 0; v < val_per_group[k]; ++v, ++pos) val_idx.push_back(g[pos]);
    for (; pos < g.size(); ++pos) train_idx.push_back(g[pos]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return SplitResult{ds.subset(train_idx), ds.subset(val_idx), ds.subset(test_idx)};
}

}  // namespace atbench
