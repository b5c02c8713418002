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
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "atbench/common.hpp"
#include "atbench/featurespace.hpp"
#include "atbench/models.hpp"

namespace atbench {

/// L0 budget. query_limit is only consulted by the query-only attack.
struct Budget {
  std::size_t epsilon = 0;
  std::optional<std::size_t> query_limit;
};

/// Feature-space image of a problem-space transformation: the features it
/// switches on. Add-only by construction.
struct Transformation {
  std::string id;
  std::vector<FeatureIndex> adds;
};

class TransformationSet {
 public:
  TransformationSet() = default;
  explicit TransformationSet(std::vector<Transformation> items) : items_(std::move(items)) {
    for (auto& t : items_) {
      std::sort(t.adds.begin(), t.adds.end());
      t.adds.erase(std::unique(t.adds.begin(), t.adds.end()), t.adds.end());
    }
    std::set<std::string> seen;
    for (const auto& t : items_) {
      if (t.adds.empty()) fail(ErrorCode::kConfig, "transformation '" + t.id + "' adds nothing");
      if (!seen.insert(t.id).second) fail(ErrorCode::kConfig, "duplicate transformation id '" + t.id + "'");
    }
  }

  const std::vector<Transformation>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const Transformation& operator[](std::size_t i) const { return items_[i]; }

  void validate(std::size_t d) const {
    for (const auto& t : items_) {
      for (auto j : t.adds) {
        if (j >= d) {
          fail(ErrorCode::kRange, "transformation '" + t.id + "' index " + std::to_string(j) +
                                      " out of range for dimension " + std::to_string(d));
        }
      }
    }
  }

 private:
  std::vector<Transformation> items_;
};

/// One transformation per line: `id: i,j,k`. Blank lines and `#` comments
/// are ignored.
inline TransformationSet parse_transformations(std::istream& in, std::size_t d) {
  std::vector<Transformation> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": expected 'id: i,j,k'");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    Transformation t;
    t.id = trim(line.substr(0, colon));
    if (t.id.empty()) fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": empty id");
    std::stringstream list(line.substr(colon + 1));
    std::string item;
    while (std::getline(list, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      std::uint64_t j = 0;
      auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), j);
      if (ec != std::errc() || p != item.data() + item.size()) {
        fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": bad index '" + item + "'");
      }
      if (j >= d) {
        fail(ErrorCode::kRange, "line " + std::to_string(line_no) + ": index " +
                                    std::to_string(j) + " out of range");
      }
      t.adds.push_back(static_cast<FeatureIndex>(j));
    }
    items.push_back(std::move(t));
  }
  return TransformationSet(std::move(items));
}

inline TransformationSet load_transformations(const std::string& path, std::size_t d) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open transformations '" + path + "'");
  return parse_transformations(in, d);
}

inline void write_transformations(std::ostream& out, const TransformationSet& ts) {
  for (const auto& t : ts.items()) {
    out << t.id << ':';
    for (std::size_t k = 0; k < t.adds.size(); ++k) out << (k ? "," : " ") << t.adds[k];
    out << '\n';
  }
}

/// Harvests `count` transformations from benign donors: each one is a random
/// subset (1..max_size features) of a random benign sample's active set,
/// mimicking gadgets extracted from goodware.
inline TransformationSet harvest_transformations(const Dataset& donors, std::size_t count,
                                                 std::size_t max_size, std::uint64_t seed) {
  std::vector<const BinarySample*> benign;
  for (const auto& s : donors.samples) {
    if (s.label == Label::kBenign && !s.active.empty()) benign.push_back(&s);
  }
  if (benign.empty()) fail(ErrorCode::kConfig, "no benign donors with active features");
  if (max_size == 0) fail(ErrorCode::kConfig, "transformation max_size must be positive");
  Rng rng(seed);
  std::vector<Transformation> items;
  std::set<std::vector<FeatureIndex>> seen;
  std::size_t attempts = 0;
  while (items.size() < count && attempts < count * 50) {
    ++attempts;
    auto features = benign[rng.below(benign.size())]->active;
    rng.shuffle(features);
    const std::size_t k = 1 + rng.below(std::min(max_size, features.size()));
    features.resize(k);
    std::sort(features.begin(), features.end());
    if (!seen.insert(features).second) continue;
    items.push_back({"t" + std::to_string(items.size()), std::move(features)});
  }
  return TransformationSet(std::move(items));
}

// ---------------------------------------------------------------------------

enum class AttackKind { kPgd, kJsma, kGreedyPk, kQueryZk };

inline std::string_view to_string(AttackKind k) {
  switch (k) {
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kJsma: return "jsma";
    case AttackKind::kGreedyPk: return "greedy-pk";
    case AttackKind::kQueryZk: return "query-zk";
  }
  return "?";
}

inline AttackKind parse_attack_kind(std::string_view s) {
  if (s == "pgd") return AttackKind::kPgd;
  if (s == "jsma") return AttackKind::kJsma;
  if (s == "greedy-pk" || s == "pk-greedy") return AttackKind::kGreedyPk;
  if (s == "query-zk" || s == "evadedroid") return AttackKind::kQueryZk;
  fail(ErrorCode::kConfig, "unknown attack '" + std::string(s) + "'");
}

/// One step of an attack. `action` is `f<index>` for single flips,
/// `iter<k>` for a PGD iteration, or a transformation id. `value` is the
/// attack loss after the step (the malware margin g1 - g0 for query-zk).
struct TraceStep {
  std::string action;
  std::vector<FeatureIndex> flipped;
  double value = 0.0;
};

struct AttackOutcome {
  BinarySample x_adv;
  bool success = false;
  std::vector<TraceStep> trace;
  std::size_t flips_used = 0;
  std::size_t queries_used = 0;
};

/// Query-only view of a model: exposes predictions and nothing else.
class PredictOracle {
 public:
  explicit PredictOracle(const Model& model) : model_(&model) {}
  Prediction operator()(const BinarySample& x) const { return predict(*model_, x); }
  std::size_t dimension() const { return model_->dimension(); }

 private:
  const Model* model_;
};

namespace detail {

inline void require_malware_prediction(const Model& model, const BinarySample& x) {
  if (predict(model, x).label != Label::kMalware) {
    fail(ErrorCode::kPrecondition, "attack requires a sample predicted as malware");
  }
}

/// Objective maximized by the white-box search attacks. For the linear-margin
/// model this is the unclipped hinge 1 - m, which agrees with the hinge
/// wherever it is non-zero and keeps a direction on the flat region; the
/// other kinds use their cross-entropy.
inline double search_objective(const Model& model, const BinarySample& x) {
  if (model.kind() == ModelKind::kLinearMargin) {
    return 1.0 - predict(model, x).scores.malware;
  }
  return attack_loss(model, x, Label::kMalware);
}

inline std::vector<double> search_gradient(const Model& model, const BinarySample& x) {
  if (model.kind() == ModelKind::kLinearMargin) {
    const auto p = model.parameters();
    std::vector<double> g(model.dimension());
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = -p[j];
    return g;
  }
  return loss_and_grad_input(model, x, Label::kMalware).grad;
}

struct Candidate {
  double score;
  FeatureIndex index;
};

/// First-order gain of flipping each admissible, not-yet-flipped feature:
/// +grad for 0->1 (addable only), -grad for 1->0 (flip-any only). Sorted by
/// descending score then ascending index; only positive scores kept.
inline std::vector<Candidate> rank_flips(const FeatureSpaceSpec& space, const BinarySample& cur,
                                         const std::vector<bool>& frozen,
                                         const std::vector<double>& grad, MutationPolicy policy) {
  std::vector<Candidate> out;
  std::size_t a = 0;
  for (std::size_t j = 0; j < grad.size(); ++j) {
    while (a < cur.active.size() && cur.active[a] < j) ++a;
    const bool on = a < cur.active.size() && cur.active[a] == j;
    if (frozen[j]) continue;
    double score;
    if (!on) {
      if (!space.is_addable(j)) continue;
      score = grad[j];
    } else {
      if (policy != MutationPolicy::kFlipAny) continue;
      score = -grad[j];
    }
    if (score > 0.0) out.push_back({score, static_cast<FeatureIndex>(j)});
  }
  std::sort(out.begin(), out.end(), [](const Candidate& l, const Candidate& r) {
    return l.score > r.score || (l.score == r.score && l.index < r.index);
  });
  return out;
}

inline AttackOutcome finalize(const Model& model, const BinarySample& x, BinarySample best,
                              std::vector<TraceStep> trace, std::size_t keep_steps) {
  trace.resize(keep_steps);
  AttackOutcome out;
  out.flips_used = hamming(best, x);
  out.success = predict(model, best).label == Label::kBenign;
  out.x_adv = std::move(best);
  out.trace = std::move(trace);
  return out;
}

inline std::vector<FeatureIndex> new_features(const BinarySample& cur, const Transformation& t) {
  std::vector<FeatureIndex> out;
  std::set_difference(t.adds.begin(), t.adds.end(), cur.active.begin(), cur.active.end(),
                      std::back_inserter(out));
  return out;
}

}  // namespace detail

/// Iterative binary PGD. Each iteration ranks admissible flips by their
/// first-order objective gain and applies as many positive-gain flips as the
/// remaining L0 budget allows; a feature is flipped at most once. The
/// highest-objective iterate seen is returned.
inline AttackOutcome attack_pgd_binary(const Model& model, const BinarySample& x,
                                       const Budget& budget, std::size_t iters = 10,
                                       MutationPolicy policy = MutationPolicy::kAddOnly) {
  detail::require_malware_prediction(model, x);
  const std::size_t d = model.dimension();
  BinarySample cur = x;
  BinarySample best = x;
  double best_obj = detail::search_objective(model, x);
  std::size_t best_steps = 0;
  std::vector<bool> frozen(d, false);
  std::vector<TraceStep> trace;
  std::size_t used = 0;
  for (std::size_t it = 0; it < iters && used < budget.epsilon; ++it) {
    const auto grad = detail::search_gradient(model, cur);
    const auto ranked = detail::rank_flips(model.space(), cur, frozen, grad, policy);
    if (ranked.empty()) break;
    const std::size_t take = std::min(ranked.size(), budget.epsilon - used);
    TraceStep step;
    step.action = "iter" + std::to_string(it);
    for (std::size_t k = 0; k < take; ++k) {
      const auto j = ranked[k].index;
      cur.toggle(j);
      frozen[j] = true;
      step.flipped.push_back(j);
    }
    std::sort(step.flipped.begin(), step.flipped.end());
    used += take;
    step.value = attack_loss(model, cur, Label::kMalware);
    trace.push_back(std::move(step));
    const double obj = detail::search_objective(model, cur);
    if (obj > best_obj) {
      best_obj = obj;
      best = cur;
      best_steps = trace.size();
    }
  }
  return detail::finalize(model, x, std::move(best), std::move(trace), best_steps);
}

/// Saliency-greedy attack: one flip per step, the admissible feature with the
/// largest loss-gradient gain. Stops on evasion, an exhausted budget, or when
/// no flip has positive gain (including a flat loss).
inline AttackOutcome attack_jsma_binary(const Model& model, const BinarySample& x,
                                        const Budget& budget,
                                        MutationPolicy policy = MutationPolicy::kAddOnly) {
  detail::require_malware_prediction(model, x);
  const std::size_t d = model.dimension();
  BinarySample cur = x;
  BinarySample best = x;
  double best_loss = attack_loss(model, x, Label::kMalware);
  double best_margin = predict(model, x).scores.margin();
  std::size_t best_steps = 0;
  std::vector<bool> frozen(d, false);
  std::vector<TraceStep> trace;
  for (std::size_t used = 0; used < budget.epsilon; ++used) {
    const auto lg = loss_and_grad_input(model, cur, Label::kMalware);
    const auto ranked = detail::rank_flips(model.space(), cur, frozen, lg.grad, policy);
    if (ranked.empty()) break;
    const auto j = ranked.front().index;
    cur.toggle(j);
    frozen[j] = true;
    const auto pred = predict(model, cur);
    const double loss = attack_loss(model, cur, Label::kMalware);
    trace.push_back({"f" + std::to_string(j), {j}, loss});
    if (loss > best_loss || (loss == best_loss && pred.scores.margin() < best_margin)) {
      best_loss = loss;
      best_margin = pred.scores.margin();
      best = cur;
      best_steps = trace.size();
    }
    if (pred.label == Label::kBenign) break;
  }
  return detail::finalize(model, x, std::move(best), std::move(trace), best_steps);
}

/// Perfect-knowledge greedy search over realizable transformations. Each
/// step applies the transformation with the best objective gain per newly
/// set feature among those that fit the remaining budget. Features already
/// present cost nothing; transformations that add nothing are never chosen.
inline AttackOutcome attack_greedy_pk(const Model& model, const BinarySample& x,
                                      const TransformationSet& ts, const Budget& budget) {
  if (ts.empty()) fail(ErrorCode::kPrecondition, "greedy-pk needs a non-empty transformation set");
  ts.validate(model.dimension());
  detail::require_malware_prediction(model, x);
  BinarySample cur = x;
  double cur_obj = detail::search_objective(model, cur);
  std::vector<bool> applied(ts.size(), false);
  std::vector<TraceStep> trace;
  std::size_t used = 0;
  for (;;) {
    const std::size_t remaining = budget.epsilon - used;
    if (remaining == 0) break;
    std::optional<std::size_t> pick;
    double best_ratio = 0.0, best_obj = cur_obj;
    std::vector<FeatureIndex> best_new;
    for (std::size_t t = 0; t < ts.size(); ++t) {
      if (applied[t]) continue;
      auto fresh = detail::new_features(cur, ts[t]);
      if (fresh.empty() || fresh.size() > remaining) continue;
      BinarySample cand = cur;
      for (auto j : fresh) cand.set(j);
      const double obj = detail::search_objective(model, cand);
      const double ratio = (obj - cur_obj) / static_cast<double>(fresh.size());
      if (ratio > best_ratio) {
        best_ratio = ratio;
        best_obj = obj;
        pick = t;
        best_new = std::move(fresh);
      }
    }
    if (!pick) break;
    applied[*pick] = true;
    for (auto j : best_new) cur.set(j);
    used += best_new.size();
    cur_obj = best_obj;
    trace.push_back({ts[*pick].id, best_new, attack_loss(model, cur, Label::kMalware)});
    if (predict(model, cur).label == Label::kBenign) break;
  }
  const std::size_t steps = trace.size();
  return detail::finalize(model, x, std::move(cur), std::move(trace), steps);
}

/// Decision-based attack with query access only. Transformations are tried
/// in a seeded random order; each candidate costs one query and is kept iff
/// the malware margin g1 - g0 strictly decreases. The first query scores the
/// clean sample.
inline AttackOutcome attack_query_zk(const PredictOracle& oracle, const BinarySample& x,
                                     const TransformationSet& ts, const Budget& budget,
                                     std::uint64_t seed) {
  if (!budget.query_limit) fail(ErrorCode::kConfig, "query-zk requires a query_limit");
  ts.validate(oracle.dimension());
  const std::size_t limit = *budget.query_limit;
  AttackOutcome out;
  out.x_adv = x;
  if (limit == 0) return out;
  auto pred = oracle(x);
  out.queries_used = 1;
  if (pred.label != Label::kMalware) {
    fail(ErrorCode::kPrecondition, "attack requires a sample predicted as malware");
  }
  double margin = pred.scores.margin();
  std::vector<std::size_t> order(ts.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  for (auto t : order) {
    if (out.queries_used >= limit) break;
    auto fresh = detail::new_features(out.x_adv, ts[t]);
    if (fresh.empty() || out.flips_used + fresh.size() > budget.epsilon) continue;
    BinarySample cand = out.x_adv;
    for (auto j : fresh) cand.set(j);
    const auto p = oracle(cand);
    ++out.queries_used;
    if (p.scores.margin() < margin) {
      margin = p.scores.margin();
      out.x_adv = std::move(cand);
      out.flips_used += fresh.size();
      out.trace.push_back({ts[t].id, std::move(fresh), margin});
      if (p.label == Label::kBenign) {
        out.success = true;
        break;
      }
    }
  }
  return out;
}

inline AttackOutcome attack_query_zk(const Model& model, const BinarySample& x,
                                     const TransformationSet& ts, const Budget& budget,
                                     std::uint64_t seed) {
  return attack_query_zk(PredictOracle(model), x, ts, budget, seed);
}

// ---------------------------------------------------------------------------

/// Attack kind plus its parameters, as used by training and evaluation.
struct AttackSpec {
  AttackKind kind = AttackKind::kPgd;
  std::size_t epsilon = 0;
  std::size_t iters = 10;
  MutationPolicy policy = MutationPolicy::kAddOnly;
  std::optional<std::size_t> query_limit;
  std::shared_ptr<const TransformationSet> transformations;

  bool needs_transformations() const {
    return kind == AttackKind::kGreedyPk || kind == AttackKind::kQueryZk;
  }
};

/// Runs the configured attack. `seed` only matters for query-zk.
inline AttackOutcome run_attack(const Model& model, const BinarySample& x, const AttackSpec& spec,
                                std::uint64_t seed) {
  const Budget budget{spec.epsilon, spec.query_limit};
  auto need_ts = [&]() -> const TransformationSet& {
    if (!spec.transformations) {
      fail(ErrorCode::kConfig, std::string(to_string(spec.kind)) + " requires a transformation set");
    }
    return *spec.transformations;
  };
  switch (spec.kind) {
    case AttackKind::kPgd: return attack_pgd_binary(model, x, budget, spec.iters, spec.policy);
    case AttackKind::kJsma: return attack_jsma_binary(model, x, budget, spec.policy);
    case AttackKind::kGreedyPk: return attack_greedy_pk(model, x, need_ts(), budget);
    case AttackKind::kQueryZk: return attack_query_zk(PredictOracle(model), x, need_ts(), budget, seed);
  }
  fail(ErrorCode::kConfig, "unknown attack");
}

}  // namespace atbench
