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
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "atbench/attacks.hpp"
#include "atbench/common.hpp"
#include "atbench/featurespace.hpp"
#include "atbench/models.hpp"

namespace atbench {

struct CleanReport {
  ConfusionMatrix confusion;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;

  static CleanReport from(const ConfusionMatrix& cm) {
    return {cm, cm.precision(), cm.recall(), cm.f1(), cm.accuracy()};
  }
};

inline CleanReport clean_eval(const Model& model, const Dataset& test) {
  return CleanReport::from(confusion(model, test));
}

struct RobustReport {
  AttackKind attack = AttackKind::kPgd;
  std::size_t epsilon = 0;
  double robust_accuracy = 100.0;  // percent of attacked true positives still detected
  std::size_t n_eval = 0;
  std::size_t n_requested = 0;
  std::size_t shortfall = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> sample_indices;  // into the test set
  std::vector<AttackOutcome> outcomes;
};

inline constexpr std::size_t kDefaultEvalSamples = 1000;

/// Attacks a seeded random subset of the model's true positives at the given
/// epsilon. A sample counts as robustly detected iff the returned x_adv is
/// still predicted malware. `n_eval` defaults to min(1000, #true positives);
/// asking for more than are available uses all of them and records the
/// shortfall.
inline RobustReport robust_eval(const Model& model, AttackSpec attack, std::size_t epsilon,
                                const Dataset& test, std::optional<std::size_t> n_eval,
                                std::uint64_t seed, std::size_t workers = 1) {
  attack.epsilon = epsilon;
  std::vector<std::size_t> tps;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& s = test.samples[i];
    if (s.label == Label::kMalware && predict(model, s).label == Label::kMalware) tps.push_back(i);
  }
  if (tps.empty()) fail(ErrorCode::kEvaluation, "model has no true positives on the test set");

  RobustReport r;
  r.attack = attack.kind;
  r.epsilon = epsilon;
  r.seed = seed;
  r.n_requested = n_eval.value_or(std::min(kDefaultEvalSamples, tps.size()));
  r.n_eval = std::min(r.n_requested, tps.size());
  r.shortfall = r.n_requested - r.n_eval;
  Rng rng(seed);
  rng.shuffle(tps);
  tps.resize(r.n_eval);
  std::sort(tps.begin(), tps.end());
  r.sample_indices = tps;
  r.outcomes.resize(r.n_eval);
  parallel_for(r.n_eval, workers, [&](std::size_t k) {
    const auto idx = r.sample_indices[k];
    r.outcomes[k] = run_attack(model, test.samples[idx], attack, derive_seed(seed, idx));
  });
  std::size_t detected = 0;
  for (const auto& o : r.outcomes) {
    if (predict(model, o.x_adv).label == Label::kMalware) ++detected;
  }
  r.robust_accuracy = 100.0 * static_cast<double>(detected) / static_cast<double>(r.n_eval);
  return r;
}

struct RelativeRobustness {
  double r_at = 0.0;   // R_h - R_v, may be negative
  double r_rel = 0.0;  // 100 * r_at / (100 - R_v)
};

/// Robustness gained over the vanilla model, absolute and normalized by the
/// vanilla model's remaining headroom.
inline RelativeRobustness relative_robustness(double r_v, double r_h) {
  if (!(r_v >= 0.0 && r_v <= 100.0) || !(r_h >= 0.0 && r_h <= 100.0)) {
    fail(ErrorCode::kRange, "robust accuracies must lie in [0, 100]");
  }
  if (r_v == 100.0) {
    fail(ErrorCode::kUndefined, "relative robustness is undefined when the vanilla model is 100% robust");
  }
  const double r_at = r_h - r_v;
  return {r_at, 100.0 * r_at / (100.0 - r_v)};
}

struct ConfidenceSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double max = 0.0;
};

struct ConfidenceReport {
  std::vector<double> losses;
  std::optional<ConfidenceSummary> summary;
};

/// Loss of each x_adv under the malware label; larger means the model is
/// more confidently wrong.
inline ConfidenceReport ae_confidence(const Model& model, std::span<const AttackOutcome> outcomes) {
  ConfidenceReport r;
  r.losses.reserve(outcomes.size());
  for (const auto& o : outcomes) r.losses.push_back(attack_loss(model, o.x_adv, Label::kMalware));
  if (!r.losses.empty()) {
    ConfidenceSummary s;
    s.count = r.losses.size();
    s.max = *std::max_element(r.losses.begin(), r.losses.end());
    double sum = 0.0;
    for (double v : r.losses) sum += v;
    s.mean = sum / static_cast<double>(s.count);
    r.summary = s;
  }
  return r;
}

// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const CleanReport& c) {
  return {{"tp", c.confusion.tp},       {"fp", c.confusion.fp},   {"fn", c.confusion.fn},
          {"tn", c.confusion.tn},       {"precision", c.precision}, {"recall", c.recall},
          {"f1", c.f1},                 {"accuracy", c.accuracy}};
}

inline nlohmann::json to_json(const RobustReport& r) {
  std::size_t evaded = 0, flips = 0;
  for (const auto& o : r.outcomes) {
    evaded += o.success ? 1 : 0;
    flips += o.flips_used;
  }
  return {{"attack", std::string(to_string(r.attack))},
          {"epsilon", r.epsilon},
          {"robust_accuracy", r.robust_accuracy},
          {"n_eval", r.n_eval},
          {"n_requested", r.n_requested},
          {"shortfall", r.shortfall},
          {"seed", r.seed},
          {"evaded", evaded},
          {"mean_flips", r.n_eval ? static_cast<double>(flips) / static_cast<double>(r.n_eval) : 0.0}};
}

inline nlohmann::json to_json(const AttackOutcome& o) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : o.trace) {
    trace.push_back({{"action", s.action}, {"flipped", s.flipped}, {"value", s.value}});
  }
  return {{"success", o.success},
          {"flips_used", o.flips_used},
          {"queries_used", o.queries_used},
          {"x_adv", o.x_adv.active},
          {"trace", trace}};
}

inline AttackOutcome outcome_from_json(const nlohmann::json& j) {
  AttackOutcome o;
  o.success = j.at("success").get<bool>();
  o.flips_used = j.at("flips_used").get<std::size_t>();
  o.queries_used = j.value("queries_used", std::size_t{0});
  o.x_adv.active = j.at("x_adv").get<std::vector<FeatureIndex>>();
  o.x_adv.label = Label::kMalware;
  for (const auto& s : j.at("trace")) {
    o.trace.push_back({s.at("action").get<std::string>(),
                       s.at("flipped").get<std::vector<FeatureIndex>>(), s.at("value").get<double>()});
  }
  return o;
}

}  // namespace atbench
