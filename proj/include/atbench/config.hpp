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

// Experiment configuration: a flat `key = value` text format and its typed
// view. See README.md for the key reference.

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "atbench/attacks.hpp"
#include "atbench/common.hpp"
#include "atbench/featurespace.hpp"
#include "atbench/models.hpp"

namespace atbench {

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// Parses `key = value` lines. Blank lines and lines starting with '#' are
/// skipped; a repeated key is an error.
inline ConfigMap parse_config_text(std::istream& in) {
  ConfigMap out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kParse, "config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    if (key.empty()) fail(ErrorCode::kParse, "config line " + std::to_string(line_no) + ": empty key");
    if (out.count(key)) {
      fail(ErrorCode::kParse, "config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    out[key] = detail::trim(std::string_view(t).substr(eq + 1));
  }
  return out;
}

inline ConfigMap parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config_text(in);
}

inline ConfigMap load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config '" + path + "'");
  return parse_config_text(in);
}

// ---------------------------------------------------------------------------
// Typed value access. Errors name the offending field.

namespace detail {

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    fail(ErrorCode::kConfig, "field '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    fail(ErrorCode::kConfig, "field '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    fail(ErrorCode::kConfig, "field '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorCode::kConfig, "field '" + key + "': expected true or false, got '" + v + "'");
}

template <class F>
auto with_field(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kConfig || std::string(e.what()).rfind("field '", 0) == 0) throw;
    fail(ErrorCode::kConfig, "field '" + key + "': " + e.what());
  }
}

/// `name:k=v,k=v` references used for datasets and transformation sources.
struct Ref {
  std::string scheme;
  std::map<std::string, std::string> params;
};

inline Ref parse_ref(const std::string& key, const std::string& text) {
  Ref r;
  const auto colon = text.find(':');
  r.scheme = trim(std::string_view(text).substr(0, colon));
  if (colon == std::string::npos) return r;
  const std::string rest = text.substr(colon + 1);
  if (trim(rest).empty()) return r;
  for (const auto& item : split(rest, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kConfig, "field '" + key + "': expected k=v in '" + item + "'");
    }
    r.params[trim(std::string_view(item).substr(0, eq))] = trim(std::string_view(item).substr(eq + 1));
  }
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct EvalAttack {
  AttackKind kind = AttackKind::kPgd;
  std::size_t epsilon = 0;

  friend bool operator==(const EvalAttack&, const EvalAttack&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string dataset = "synthetic:d=200,n=5000,overlap=0.3";
  SplitSpec split;
  ModelKind model = ModelKind::kMlp;
  ModelOptions model_options;
  TrainConfig train = TrainConfig::defaults_for(ModelKind::kMlp);

  bool adversarial = false;
  AttackKind at_attack = AttackKind::kPgd;
  std::size_t at_epsilon = 10;
  double at_alpha = 0.5;
  bool at_regenerate = true;

  std::size_t attack_iters = 10;
  MutationPolicy attack_policy = MutationPolicy::kAddOnly;
  std::optional<std::size_t> query_limit = 200;
  std::string transformations = "harvest:count=500,max_size=3";

  std::vector<EvalAttack> eval_attacks;
  std::optional<std::size_t> n_eval;

  bool analysis_confidence = false;
  bool analysis_jdp = false;
  std::size_t jdp_grid = 32;
  bool analysis_roughness = false;
  std::size_t roughness_m = 1000;
  std::size_t roughness_samples = 100;
  std::optional<std::size_t> roughness_epsilon;

  // Thread count; never part of the canonical form.
  std::size_t workers = 1;
};

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "seed",
      "dataset",
      "split.train_fraction",
      "split.val_fraction",
      "split.stratified",
      "split.ordered",
      "model",
      "model.hidden",
      "model.max_depth",
      "model.lmbda",
      "train.learning_rate",
      "train.epochs",
      "train.batch_size",
      "train.weight_decay",
      "train.momentum",
      "train.margin_C",
      "mode",
      "at.attack",
      "at.epsilon",
      "at.alpha",
      "at.regenerate_each_epoch",
      "attack.iters",
      "attack.policy",
      "attack.query_limit",
      "attack.transformations",
      "eval.attacks",
      "eval.n_eval",
      "analysis.confidence",
      "analysis.jdp",
      "analysis.jdp.grid",
      "analysis.roughness",
      "analysis.roughness.m",
      "analysis.roughness.samples",
      "analysis.roughness.epsilon",
      "workers",
  };
  return keys;
}

inline bool is_config_key(const std::string& key) {
  const auto& keys = config_keys();
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

inline ExperimentConfig parse_experiment_config(const ConfigMap& kv) {
  using namespace detail;
  for (const auto& [key, value] : kv) {
    if (!is_config_key(key)) fail(ErrorCode::kConfig, "unknown field '" + key + "'");
  }
  auto get = [&](const std::string& key) -> const std::string* {
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };

  ExperimentConfig c;
  if (auto v = get("seed")) c.seed = parse_u64("seed", *v);
  if (auto v = get("dataset")) {
    if (v->empty()) fail(ErrorCode::kConfig, "field 'dataset': empty reference");
    c.dataset = *v;
  }
  if (auto v = get("split.train_fraction")) c.split.train_fraction = parse_real("split.train_fraction", *v);
  if (auto v = get("split.val_fraction")) c.split.val_fraction_of_train = parse_real("split.val_fraction", *v);
  if (auto v = get("split.stratified")) c.split.stratified = parse_flag("split.stratified", *v);
  if (auto v = get("split.ordered")) c.split.ordered = parse_flag("split.ordered", *v);
  with_field("split", [&] { c.split.validate(); return 0; });

  if (auto v = get("model")) c.model = with_field("model", [&] { return parse_model_kind(*v); });
  if (auto v = get("model.hidden")) {
    c.model_options.hidden.clear();
    if (!v->empty()) {
      for (const auto& w : split(*v, ',')) c.model_options.hidden.push_back(parse_count("model.hidden", w));
    }
  }
  if (auto v = get("model.max_depth")) c.model_options.max_depth = parse_count("model.max_depth", *v);
  if (auto v = get("model.lmbda")) c.model_options.lmbda = parse_real("model.lmbda", *v);
  if (c.model == ModelKind::kSoftTree && (c.model_options.max_depth == 0 || c.model_options.max_depth > 16)) {
    fail(ErrorCode::kConfig, "field 'model.max_depth': must lie in [1, 16]");
  }
  for (auto w : c.model_options.hidden) {
    if (w == 0) fail(ErrorCode::kConfig, "field 'model.hidden': layer widths must be positive");
  }

  c.train = TrainConfig::defaults_for(c.model);
  if (auto v = get("train.learning_rate")) c.train.learning_rate = parse_real("train.learning_rate", *v);
  if (auto v = get("train.epochs")) c.train.epochs = parse_count("train.epochs", *v);
  if (auto v = get("train.batch_size")) c.train.batch_size = parse_count("train.batch_size", *v);
  if (auto v = get("train.weight_decay")) c.train.weight_decay = parse_real("train.weight_decay", *v);
  if (auto v = get("train.momentum")) c.train.momentum = parse_real("train.momentum", *v);
  if (auto v = get("train.margin_C")) c.train.margin_C = parse_real("train.margin_C", *v);
  with_field("train", [&] { c.train.validate(); return 0; });

  if (auto v = get("mode")) {
    if (*v == "adversarial") c.adversarial = true;
    else if (*v != "standard") fail(ErrorCode::kConfig, "field 'mode': expected standard or adversarial");
  }
  if (!c.adversarial) {
    for (const auto& [key, value] : kv) {
      if (key.rfind("at.", 0) == 0) {
        fail(ErrorCode::kConfig, "field '" + key + "' is only valid with mode = adversarial");
      }
    }
  }
  if (auto v = get("at.attack")) c.at_attack = with_field("at.attack", [&] { return parse_attack_kind(*v); });
  if (auto v = get("at.epsilon")) c.at_epsilon = parse_count("at.epsilon", *v);
  if (auto v = get("at.alpha")) c.at_alpha = parse_real("at.alpha", *v);
  if (auto v = get("at.regenerate_each_epoch")) c.at_regenerate = parse_flag("at.regenerate_each_epoch", *v);
  if (!(c.at_alpha >= 0.0 && c.at_alpha <= 1.0)) fail(ErrorCode::kConfig, "field 'at.alpha': must lie in [0, 1]");

  if (auto v = get("attack.iters")) c.attack_iters = parse_count("attack.iters", *v);
  if (c.attack_iters == 0) fail(ErrorCode::kConfig, "field 'attack.iters': must be positive");
  if (auto v = get("attack.policy")) {
    c.attack_policy = with_field("attack.policy", [&] { return parse_mutation_policy(*v); });
  }
  if (auto v = get("attack.query_limit")) {
    if (*v == "none") c.query_limit.reset();
    else c.query_limit = parse_count("attack.query_limit", *v);
  }
  if (auto v = get("attack.transformations")) {
    const auto ref = parse_ref("attack.transformations", *v);
    if (ref.scheme != "harvest" && ref.scheme != "file") {
      fail(ErrorCode::kConfig, "field 'attack.transformations': expected harvest:... or file:path=...");
    }
    c.transformations = *v;
  }

  if (auto v = get("eval.attacks")) {
    if (!v->empty()) {
      for (const auto& item : split(*v, ',')) {
        const auto colon = item.find(':');
        EvalAttack a;
        a.kind = with_field("eval.attacks", [&] { return parse_attack_kind(trim(item.substr(0, colon))); });
        if (colon != std::string::npos) {
          a.epsilon = parse_count("eval.attacks", trim(item.substr(colon + 1)));
        } else if (c.adversarial) {
          a.epsilon = c.at_epsilon;  // matched bounds
        } else {
          fail(ErrorCode::kConfig, "field 'eval.attacks': '" + item + "' needs an explicit epsilon in standard mode");
        }
        c.eval_attacks.push_back(a);
      }
    }
  } else if (c.adversarial) {
    c.eval_attacks.push_back({c.at_attack, c.at_epsilon});
  }
  if (auto v = get("eval.n_eval")) {
    if (*v != "auto") c.n_eval = parse_count("eval.n_eval", *v);
  }

  if (auto v = get("analysis.confidence")) c.analysis_confidence = parse_flag("analysis.confidence", *v);
  if (auto v = get("analysis.jdp")) c.analysis_jdp = parse_flag("analysis.jdp", *v);
  if (auto v = get("analysis.jdp.grid")) c.jdp_grid = parse_count("analysis.jdp.grid", *v);
  if (auto v = get("analysis.roughness")) c.analysis_roughness = parse_flag("analysis.roughness", *v);
  if (auto v = get("analysis.roughness.m")) c.roughness_m = parse_count("analysis.roughness.m", *v);
  if (auto v = get("analysis.roughness.samples")) {
    c.roughness_samples = parse_count("analysis.roughness.samples", *v);
  }
  if (auto v = get("analysis.roughness.epsilon")) {
    if (*v != "auto") c.roughness_epsilon = parse_count("analysis.roughness.epsilon", *v);
  }
  if (c.analysis_jdp && !c.adversarial) {
    fail(ErrorCode::kConfig, "field 'analysis.jdp' requires mode = adversarial");
  }
  if (c.analysis_jdp && c.eval_attacks.empty()) {
    fail(ErrorCode::kConfig, "field 'analysis.jdp' requires at least one evaluation attack");
  }
  if (c.jdp_grid == 0) fail(ErrorCode::kConfig, "field 'analysis.jdp.grid': must be positive");
  if (c.roughness_m == 0) fail(ErrorCode::kConfig, "field 'analysis.roughness.m': must be positive");
  if (c.analysis_roughness && !c.roughness_epsilon && !c.adversarial && c.eval_attacks.empty()) {
    fail(ErrorCode::kConfig, "field 'analysis.roughness.epsilon' is required when no epsilon can be inferred");
  }
  if (auto v = get("workers")) c.workers = std::max<std::size_t>(1, parse_count("workers", *v));
  return c;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  return parse_experiment_config(parse_config_string(text));
}

/// Epsilon used by the roughness analysis: explicit, else the training
/// budget, else the first evaluation budget.
inline std::size_t roughness_epsilon(const ExperimentConfig& c) {
  if (c.roughness_epsilon) return *c.roughness_epsilon;
  if (c.adversarial) return c.at_epsilon;
  return c.eval_attacks.empty() ? 0 : c.eval_attacks.front().epsilon;
}

namespace detail {

inline std::string join_counts(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::string flag(bool b) { return b ? "true" : "false"; }

}  // namespace detail

/// Every training-relevant field, resolved. The vanilla baseline of an
/// experiment depends on exactly these (plus the master seed).
inline ConfigMap training_fields(const ExperimentConfig& c) {
  using detail::flag;
  ConfigMap m;
  m["dataset"] = c.dataset;
  m["split.train_fraction"] = format_double(c.split.train_fraction);
  m["split.val_fraction"] = format_double(c.split.val_fraction_of_train);
  m["split.stratified"] = flag(c.split.stratified);
  m["split.ordered"] = flag(c.split.ordered);
  m["model"] = std::string(to_string(c.model));
  if (c.model == ModelKind::kMlp) m["model.hidden"] = detail::join_counts(c.model_options.hidden);
  if (c.model == ModelKind::kSoftTree) {
    m["model.max_depth"] = std::to_string(c.model_options.max_depth);
    m["model.lmbda"] = format_double(c.model_options.lmbda);
  }
  m["train.learning_rate"] = format_double(c.train.learning_rate);
  m["train.epochs"] = std::to_string(c.train.epochs);
  m["train.batch_size"] = std::to_string(c.train.batch_size);
  m["train.weight_decay"] = format_double(c.train.weight_decay);
  m["train.momentum"] = format_double(c.train.momentum);
  if (c.model == ModelKind::kLinearMargin) m["train.margin_C"] = format_double(c.train.margin_C);
  return m;
}

/// Fully resolved form: every field that affects results, defaults filled
/// in, `workers` left out. Parsing it back yields the same configuration.
inline ConfigMap canonical_fields(const ExperimentConfig& c) {
  using detail::flag;
  ConfigMap m = training_fields(c);
  m["seed"] = std::to_string(c.seed);
  m["mode"] = c.adversarial ? "adversarial" : "standard";
  if (c.adversarial) {
    m["at.attack"] = std::string(to_string(c.at_attack));
    m["at.epsilon"] = std::to_string(c.at_epsilon);
    m["at.alpha"] = format_double(c.at_alpha);
    m["at.regenerate_each_epoch"] = flag(c.at_regenerate);
  }
  m["attack.iters"] = std::to_string(c.attack_iters);
  m["attack.policy"] = std::string(to_string(c.attack_policy));
  m["attack.query_limit"] = c.query_limit ? std::to_string(*c.query_limit) : "none";
  m["attack.transformations"] = c.transformations;
  std::string attacks;
  for (std::size_t i = 0; i < c.eval_attacks.size(); ++i) {
    attacks += (i ? "," : "") + std::string(to_string(c.eval_attacks[i].kind)) + ":" +
               std::to_string(c.eval_attacks[i].epsilon);
  }
  m["eval.attacks"] = attacks;
  m["eval.n_eval"] = c.n_eval ? std::to_string(*c.n_eval) : "auto";
  m["analysis.confidence"] = flag(c.analysis_confidence);
  m["analysis.jdp"] = flag(c.analysis_jdp);
  if (c.analysis_jdp) m["analysis.jdp.grid"] = std::to_string(c.jdp_grid);
  m["analysis.roughness"] = flag(c.analysis_roughness);
  if (c.analysis_roughness) {
    m["analysis.roughness.m"] = std::to_string(c.roughness_m);
    m["analysis.roughness.samples"] = std::to_string(c.roughness_samples);
    m["analysis.roughness.epsilon"] = std::to_string(roughness_epsilon(c));
  }
  return m;
}

inline std::string to_text(const ConfigMap& m) {
  std::string out;
  for (const auto& [k, v] : m) out += k + " = " + v + "\n";
  return out;
}

inline std::string canonical_text(const ExperimentConfig& c) { return to_text(canonical_fields(c)); }

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(canonical_text(c))); }

/// Seed for everything the vanilla baseline depends on (split, init, SGD,
/// harvested transformations). Shared by all experiments that differ only
/// in AT, attack or analysis fields, so they compare against one baseline.
inline std::uint64_t training_seed(const ExperimentConfig& c) {
  return derive_seed(c.seed, fnv1a64(to_text(training_fields(c))));
}

/// Seed for attack evaluation and analyses.
inline std::uint64_t experiment_seed(const ExperimentConfig& c) {
  return derive_seed(c.seed, fnv1a64(canonical_text(c)));
}

// ---------------------------------------------------------------------------
// Dataset references:
//   synthetic:d=..,n=..,overlap=..,malware_ratio=..,min_rate=..,max_rate=..,
//             addable_fraction=..,policy=..,seed=..
//   file:path=..,d=..[,policy=..]

inline Dataset resolve_dataset(const std::string& ref_text) {
  using namespace detail;
  const auto ref = parse_ref("dataset", ref_text);
  auto take = [&](const std::string& k) -> std::optional<std::string> {
    const auto it = ref.params.find(k);
    if (it == ref.params.end()) return std::nullopt;
    return it->second;
  };
  auto reject_unknown = [&](std::initializer_list<const char*> allowed) {
    for (const auto& [k, v] : ref.params) {
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
        fail(ErrorCode::kConfig, "dataset '" + ref_text + "': unknown parameter '" + k + "'");
      }
    }
  };
  if (ref.scheme == "synthetic") {
    reject_unknown({"d", "n", "overlap", "malware_ratio", "min_rate", "max_rate", "addable_fraction",
                    "policy", "seed"});
    SyntheticSpec s;
    if (auto v = take("d")) s.d = parse_count("dataset.d", *v);
    if (auto v = take("n")) s.n = parse_count("dataset.n", *v);
    if (auto v = take("overlap")) s.overlap = parse_real("dataset.overlap", *v);
    if (auto v = take("malware_ratio")) s.malware_ratio = parse_real("dataset.malware_ratio", *v);
    if (auto v = take("min_rate")) s.min_rate = parse_real("dataset.min_rate", *v);
    if (auto v = take("max_rate")) s.max_rate = parse_real("dataset.max_rate", *v);
    if (auto v = take("addable_fraction")) s.addable_fraction = parse_real("dataset.addable_fraction", *v);
    if (auto v = take("policy")) s.policy = parse_mutation_policy(*v);
    if (auto v = take("seed")) s.seed = parse_u64("dataset.seed", *v);
    return generate_synthetic(s);
  }
  if (ref.scheme == "file") {
    reject_unknown({"path", "d", "policy"});
    const auto path = take("path");
    const auto d = take("d");
    if (!path || !d) fail(ErrorCode::kConfig, "dataset '" + ref_text + "': file references need path= and d=");
    const auto policy = take("policy") ? parse_mutation_policy(*take("policy")) : MutationPolicy::kAddOnly;
    return load_sparse_dataset(*path, parse_count("dataset.d", *d), policy);
  }
  fail(ErrorCode::kConfig, "unresolvable dataset reference '" + ref_text + "'");
}

/// Builds the transformation set named by `attack.transformations`.
/// Harvested sets draw from the benign training samples.
inline TransformationSet resolve_transformations(const std::string& ref_text, const Dataset& train,
                                                 std::uint64_t seed) {
  using namespace detail;
  const auto ref = parse_ref("attack.transformations", ref_text);
  if (ref.scheme == "harvest") {
    std::size_t count = 500, max_size = 3;
    for (const auto& [k, v] : ref.params) {
      if (k == "count") count = parse_count("attack.transformations.count", v);
      else if (k == "max_size") max_size = parse_count("attack.transformations.max_size", v);
      else fail(ErrorCode::kConfig, "field 'attack.transformations': unknown parameter '" + k + "'");
    }
    return harvest_transformations(train, count, max_size, seed);
  }
  if (ref.scheme == "file") {
    const auto it = ref.params.find("path");
    if (it == ref.params.end()) fail(ErrorCode::kConfig, "field 'attack.transformations': file needs path=");
    return load_transformations(it->second, train.space.dimension);
  }
  fail(ErrorCode::kConfig, "field 'attack.transformations': unknown source '" + ref.scheme + "'");
}

}  // namespace atbench
