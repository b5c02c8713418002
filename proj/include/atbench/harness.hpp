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

#include <chrono>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "atbench/analysis.hpp"
#include "atbench/attacks.hpp"
#include "atbench/common.hpp"
#include "atbench/config.hpp"
#include "atbench/evaluation.hpp"
#include "atbench/featurespace.hpp"
#include "atbench/models.hpp"
#include "atbench/robust_training.hpp"

namespace atbench {

using nlohmann::json;

/// Split data and vanilla model shared by every experiment with the same
/// training fields and master seed.
struct PreparedBaseline {
  SplitResult data;
  Model init;
  Model model;
  TrainConfig train;
  std::size_t best_epoch = 0;
  double best_val_f1 = 0.0;
  double train_seconds = 0.0;
  std::shared_ptr<const TransformationSet> transformations;
};

inline PreparedBaseline prepare_baseline(const ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t seed = training_seed(c);
  const Dataset ds = resolve_dataset(c.dataset);
  auto data = split_dataset(ds, c.split, derive_seed(seed, 1));
  Model init = Model::create(c.model, ds.space, c.model_options, derive_seed(seed, 2));
  TrainConfig train = c.train;
  train.seed = derive_seed(seed, 3);
  auto fit = fit_standard(init, data.train, data.val, train);
  PreparedBaseline b{std::move(data), std::move(init), std::move(fit.model), train, fit.best_epoch,
                     fit.best_val_f1, 0.0, nullptr};
  b.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return b;
}

/// Thread-safe memo of prepared baselines keyed by the training fields and
/// master seed; concurrent requests for one key train it once.
class BaselineCache {
 public:
  std::shared_ptr<const PreparedBaseline> get(const ExperimentConfig& c) {
    const std::string key = std::to_string(c.seed) + "\n" + to_text(training_fields(c));
    std::shared_future<std::shared_ptr<const PreparedBaseline>> fut;
    std::promise<std::shared_ptr<const PreparedBaseline>> promise;
    bool owner = false;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = entries_.find(key);
      if (it == entries_.end()) {
        fut = promise.get_future().share();
        entries_.emplace(key, fut);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (owner) {
      try {
        promise.set_value(std::make_shared<const PreparedBaseline>(prepare_baseline(c)));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return fut.get();
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_future<std::shared_ptr<const PreparedBaseline>>> entries_;
};

inline json to_json(const RoughnessEstimate& r) {
  return {{"gamma", r.gamma},     {"std_error", r.std_error}, {"m", r.m},
          {"epsilon", r.epsilon}, {"seed", r.seed},           {"samples", r.per_sample.size()},
          {"sampling", RoughnessEstimate::kSampling}};
}

inline json record_skeleton(const ExperimentConfig& c) {
  return {{"config_hash", config_hash(c)},
          {"seed", experiment_seed(c)},
          {"config", canonical_fields(c)}};
}

/// Trains (standard or adversarial), evaluates clean and robust accuracy
/// for each configured attack, derives R_AT and R_rel against the vanilla
/// baseline, runs the enabled analyses and returns one result record.
/// `metrics` is a pure function of the configuration; wall-clock figures
/// live under `timing`.
inline json run_experiment(const ExperimentConfig& c, BaselineCache* cache = nullptr) {
  using clock = std::chrono::steady_clock;
  const auto wall0 = clock::now();
  BaselineCache local;
  auto base = (cache ? cache : &local)->get(c);
  const auto& data = base->data;
  const std::uint64_t seed = experiment_seed(c);

  auto make_attack = [&](AttackKind kind, std::size_t eps) {
    AttackSpec a;
    a.kind = kind;
    a.epsilon = eps;
    a.iters = c.attack_iters;
    a.policy = c.attack_policy;
    a.query_limit = c.query_limit;
    return a;
  };
  std::shared_ptr<const TransformationSet> ts;
  auto attach = [&](AttackSpec& a) {
    if (!a.needs_transformations()) return;
    if (!ts) {
      ts = std::make_shared<const TransformationSet>(
          resolve_transformations(c.transformations, data.train, derive_seed(training_seed(c), 4)));
    }
    a.transformations = ts;
  };

  json metrics = json::object();
  json timing = {{"baseline_train_seconds", base->train_seconds}};

  const Model* hardened = &base->model;
  std::optional<ATResult> at;
  if (c.adversarial) {
    ATConfig cfg;
    cfg.attack = make_attack(c.at_attack, c.at_epsilon);
    attach(cfg.attack);
    cfg.epsilon = c.at_epsilon;
    cfg.alpha = c.at_alpha;
    cfg.train = base->train;
    cfg.regenerate_each_epoch = c.at_regenerate;
    cfg.workers = c.workers;
    const auto t0 = clock::now();
    at = adversarial_train(base->init, data.train, data.val, cfg);
    timing["at_train_seconds"] = std::chrono::duration<double>(clock::now() - t0).count();
    hardened = &at->model;

    double ae_seconds = 0.0;
    std::size_t evading = 0;
    for (const auto& e : at->log.epochs) {
      ae_seconds += e.mean_seconds_per_ae;
      evading += e.ae_evading;
    }
    timing["mean_seconds_per_ae"] =
        at->log.epochs.empty() ? 0.0 : ae_seconds / static_cast<double>(at->log.epochs.size());
    metrics["at"] = {{"epochs", at->log.epochs.size()},
                     {"total_aes", at->log.total_aes()},
                     {"total_flips", at->log.total_flips()},
                     {"ae_evading", evading},
                     {"best_epoch", at->best_epoch},
                     {"best_val_f1", at->best_val_f1}};
    metrics["baseline_clean"] = to_json(clean_eval(base->model, data.test));
  }
  metrics["clean"] = to_json(clean_eval(*hardened, data.test));
  metrics["best_epoch"] = c.adversarial ? at->best_epoch : base->best_epoch;
  metrics["best_val_f1"] = c.adversarial ? at->best_val_f1 : base->best_val_f1;

  const auto te = clock::now();
  json robust = json::array();
  json confidence = json::array();
  std::optional<RobustReport> first_report;
  for (std::size_t k = 0; k < c.eval_attacks.size(); ++k) {
    const auto& ea = c.eval_attacks[k];
    auto spec = make_attack(ea.kind, ea.epsilon);
    attach(spec);
    const std::uint64_t eval_seed = derive_seed(seed, 1 + k);
    auto rh = robust_eval(*hardened, spec, ea.epsilon, data.test, c.n_eval, eval_seed, c.workers);
    json entry = to_json(rh);
    if (c.adversarial) {
      const auto rv = robust_eval(base->model, spec, ea.epsilon, data.test, c.n_eval, eval_seed, c.workers);
      entry["baseline_robust_accuracy"] = rv.robust_accuracy;
      entry["r_at"] = rh.robust_accuracy - rv.robust_accuracy;
      // R_rel is undefined when the baseline already resists every attack.
      entry["r_rel"] = rv.robust_accuracy < 100.0
                           ? json(relative_robustness(rv.robust_accuracy, rh.robust_accuracy).r_rel)
                           : json(nullptr);
    }
    robust.push_back(entry);
    if (c.analysis_confidence) {
      const auto conf = ae_confidence(*hardened, rh.outcomes);
      json cj = {{"attack", std::string(to_string(ea.kind))}, {"epsilon", ea.epsilon}};
      if (conf.summary) {
        cj["count"] = conf.summary->count;
        cj["mean_loss"] = conf.summary->mean;
        cj["max_loss"] = conf.summary->max;
      } else {
        cj["count"] = 0;
      }
      confidence.push_back(cj);
    }
    if (k == 0) first_report = std::move(rh);
  }
  metrics["robust"] = robust;
  if (c.analysis_confidence) metrics["confidence"] = confidence;
  timing["eval_seconds"] = std::chrono::duration<double>(clock::now() - te).count();

  if (c.analysis_jdp) {
    const auto table = flip_frequency_table(at->log, first_report->outcomes);
    const auto density = jdp_density(table, c.jdp_grid);
    json j = {{"at_total", table.at_total()},
              {"attack_total", table.attack_total()},
              {"grid", c.jdp_grid},
              {"all_zero", density.all_zero}};
    if (!density.all_zero) {
      const auto [mx, my] = density.mode();
      j["mode_cell"] = {mx, my};
      j["mode_center"] = {0.5 * (density.x_edge(mx) + density.x_edge(mx + 1)),
                          0.5 * (density.y_edge(my) + density.y_edge(my + 1))};
      j["bandwidth"] = {density.bandwidth_x, density.bandwidth_y};
    }
    metrics["jdp"] = j;
  }
  if (c.analysis_roughness) {
    const std::size_t n = std::min(c.roughness_samples, data.test.size());
    const std::span<const BinarySample> samples(data.test.samples.data(), n);
    const auto eps = roughness_epsilon(c);
    const auto rs = derive_seed(seed, 0x70c4);
    json r = to_json(roughness_gamma(*hardened, samples, eps, c.roughness_m, rs, c.workers));
    if (c.adversarial) {
      r["baseline_gamma"] = roughness_gamma(base->model, samples, eps, c.roughness_m, rs, c.workers).gamma;
    }
    metrics["roughness"] = r;
  }

  json rec = record_skeleton(c);
  rec["status"] = "ok";
  rec["metrics"] = metrics;
  timing["wall_seconds"] = std::chrono::duration<double>(clock::now() - wall0).count();
  rec["timing"] = timing;
  return rec;
}

inline json failure_record(const json& skeleton, const Error& e) {
  json rec = skeleton;
  rec["status"] = "error";
  rec["error"] = {{"code", error_code_name(e.code())}, {"message", e.what()}};
  return rec;
}

/// Checks that a record is well formed and that its config echo reproduces
/// its hash. Throws kParse describing the first problem.
inline void validate_record(const json& rec) {
  auto need = [&](const char* key, json::value_t type) {
    if (!rec.contains(key)) fail(ErrorCode::kParse, std::string("record lacks '") + key + "'");
    const auto t = rec.at(key).type();
    const bool ok = t == type || (type == json::value_t::number_unsigned && t == json::value_t::number_integer);
    if (!ok) fail(ErrorCode::kParse, std::string("record field '") + key + "' has the wrong type");
  };
  need("status", json::value_t::string);
  need("config_hash", json::value_t::string);
  need("seed", json::value_t::number_unsigned);
  need("config", json::value_t::object);
  const auto status = rec.at("status").get<std::string>();
  ConfigMap kv;
  for (const auto& [k, v] : rec.at("config").items()) {
    if (!v.is_string()) fail(ErrorCode::kParse, "config echo value for '" + k + "' is not a string");
    kv[k] = v.get<std::string>();
  }
  if (status == "ok") {
    need("metrics", json::value_t::object);
    need("timing", json::value_t::object);
    const auto& m = rec.at("metrics");
    if (!m.contains("clean") || !m.contains("robust") || !m.at("robust").is_array()) {
      fail(ErrorCode::kParse, "record metrics lack clean or robust results");
    }
    ExperimentConfig c;
    try {
      c = parse_experiment_config(kv);
    } catch (const Error& e) {
      fail(ErrorCode::kParse, std::string("config echo does not parse: ") + e.what());
    }
    if (config_hash(c) != rec.at("config_hash").get<std::string>()) {
      fail(ErrorCode::kParse, "config echo does not reproduce config_hash");
    }
    if (experiment_seed(c) != rec.at("seed").get<std::uint64_t>()) {
      fail(ErrorCode::kParse, "config echo does not reproduce seed");
    }
  } else if (status == "error") {
    need("error", json::value_t::object);
  } else {
    fail(ErrorCode::kParse, "record status must be ok or error");
  }
}

// ---------------------------------------------------------------------------
// Grids.

struct GridAxis {
  std::string name;
  // Config key the axis sets; empty for `representation`, whose values are
  // dataset reference templates with `{dataset}` standing for the dataset
  // axis value.
  std::string key;
  std::vector<std::string> values;
};

struct GridSpec {
  ConfigMap base;
  std::vector<GridAxis> axes;

  void validate() const {
    std::set<std::string> names;
    for (const auto& a : axes) {
      if (a.values.empty()) fail(ErrorCode::kConfig, "grid axis '" + a.name + "' is empty");
      if (!names.insert(a.name).second) fail(ErrorCode::kConfig, "grid axis '" + a.name + "' given twice");
    }
  }
};

/// Axis name to config key. Any other config key may also be used as an axis.
inline std::optional<std::string> grid_axis_key(const std::string& name) {
  static const std::map<std::string, std::string> named = {
      {"dataset", "dataset"},     {"representation", ""},      {"model", "model"},
      {"epsilon", "at.epsilon"},  {"alpha", "at.alpha"},       {"train_attack", "at.attack"},
      {"eval_attack", "eval.attacks"}};
  if (auto it = named.find(name); it != named.end()) return it->second;
  if (is_config_key(name) && name != "workers") return name;
  return std::nullopt;
}

/// Config text with `grid.<axis> = v1 | v2 | ...` lines; all other lines form
/// the base configuration.
inline GridSpec parse_grid(const ConfigMap& kv) {
  GridSpec g;
  for (const auto& [k, v] : kv) {
    if (k.rfind("grid.", 0) != 0) {
      g.base[k] = v;
      continue;
    }
    GridAxis a;
    a.name = k.substr(5);
    const auto key = grid_axis_key(a.name);
    if (!key) fail(ErrorCode::kConfig, "unknown grid axis '" + a.name + "'");
    a.key = *key;
    if (!detail::trim(v).empty()) a.values = detail::split(v, '|');
    for (const auto& x : a.values) {
      if (x.empty()) fail(ErrorCode::kConfig, "grid axis '" + a.name + "' has an empty value");
    }
    g.axes.push_back(std::move(a));
  }
  g.validate();
  return g;
}

inline std::uint64_t count_grid(const GridSpec& g) {
  g.validate();
  std::uint64_t n = 1;
  for (const auto& a : g.axes) n *= a.values.size();
  return n;
}

/// Cartesian product in odometer order (last axis fastest).
inline std::vector<ConfigMap> expand_grid(const GridSpec& g) {
  g.validate();
  std::vector<ConfigMap> out;
  std::vector<std::size_t> pos(g.axes.size(), 0);
  const std::uint64_t total = count_grid(g);
  out.reserve(total);
  for (std::uint64_t n = 0; n < total; ++n) {
    ConfigMap kv = g.base;
    const std::string* representation = nullptr;
    for (std::size_t a = 0; a < g.axes.size(); ++a) {
      const auto& v = g.axes[a].values[pos[a]];
      if (g.axes[a].key.empty()) representation = &v;
      else kv[g.axes[a].key] = v;
    }
    if (representation) {
      std::string ref = *representation;
      const std::string dataset = kv.count("dataset") ? kv["dataset"] : "";
      for (auto p = ref.find("{dataset}"); p != std::string::npos; p = ref.find("{dataset}")) {
        ref.replace(p, 9, dataset);
      }
      kv["dataset"] = ref;
    }
    out.push_back(std::move(kv));
    for (std::size_t a = g.axes.size(); a-- > 0;) {
      if (++pos[a] < g.axes[a].values.size()) break;
      pos[a] = 0;
    }
  }
  return out;
}

/// Hashes of the successful records in a JSON-lines sink. Unreadable lines
/// (e.g. a write cut short by a crash) are ignored.
inline std::set<std::string> completed_hashes(const std::string& path) {
  std::set<std::string> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    if (j.value("status", "") == "ok" && j.contains("config_hash")) {
      out.insert(j.at("config_hash").get<std::string>());
    }
  }
  return out;
}

struct GridRunOptions {
  std::size_t workers = 1;
  std::string sink_path;  // JSON-lines, appended; empty keeps records in memory only
  bool resume = false;
};

/// Runs every grid point, `workers` experiments at a time. Records are
/// appended to the sink in completion order; a failing experiment yields an
/// error record and the grid continues. With `resume`, points whose hash
/// already has a successful record are skipped.
inline std::vector<json> run_grid(const GridSpec& g, const GridRunOptions& opts) {
  const auto points = expand_grid(g);
  std::set<std::string> done;
  if (opts.resume && !opts.sink_path.empty()) done = completed_hashes(opts.sink_path);

  std::ofstream sink;
  if (!opts.sink_path.empty()) {
    // A crash can leave a partial last line; start on a fresh one so the
    // next record stays parseable.
    bool torn = false;
    if (std::ifstream prev(opts.sink_path, std::ios::binary | std::ios::ate); prev && prev.tellg() > 0) {
      prev.seekg(-1, std::ios::end);
      torn = prev.get() != '\n';
    }
    sink.open(opts.sink_path, std::ios::app);
    if (!sink) fail(ErrorCode::kIo, "cannot open result sink '" + opts.sink_path + "'");
    if (torn) sink << '\n';
  }
  std::mutex sink_mu;
  std::vector<json> records;
  BaselineCache cache;

  parallel_for(points.size(), opts.workers, [&](std::size_t i) {
    json rec;
    try {
      auto cfg = parse_experiment_config(points[i]);
      cfg.workers = 1;
      if (done.count(config_hash(cfg))) return;
      try {
        rec = run_experiment(cfg, &cache);
      } catch (const Error& e) {
        rec = failure_record(record_skeleton(cfg), e);
      } catch (const std::exception& e) {
        rec = failure_record(record_skeleton(cfg), Error(ErrorCode::kNumeric, e.what()));
      }
    } catch (const Error& e) {
      // The point itself is invalid; echo it raw.
      rec = {{"config_hash", hex64(fnv1a64(to_text(points[i])))}, {"seed", 0}, {"config", points[i]}};
      rec = failure_record(rec, e);
    }
    std::lock_guard<std::mutex> lock(sink_mu);
    if (sink.is_open()) sink << rec.dump() << '\n' << std::flush;
    records.push_back(std::move(rec));
  });
  return records;
}

inline std::vector<json> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open results '" + path + "'");
  std::vector<json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::kParse, path + ":" + std::to_string(line_no) + ": not JSON");
    out.push_back(std::move(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV views of result records.

namespace detail {

inline std::string cfg_field(const json& rec, const char* key) {
  const auto& c = rec.at("config");
  return c.contains(key) ? c.at(key).get<std::string>() : "";
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

inline std::string num(const json& v) {
  return v.is_number() ? format_double(v.get<double>()) : "";
}

}  // namespace detail

/// One row per (successful record, evaluation attack).
inline void write_summary_csv(std::ostream& out, const std::vector<json>& records) {
  using namespace detail;
  out << "config_hash,dataset,model,mode,train_attack,train_epsilon,alpha,eval_attack,eval_epsilon,"
         "clean_f1,robust_accuracy,baseline_robust_accuracy,r_at,r_rel\n";
  for (const auto& rec : records) {
    if (rec.value("status", "") != "ok") continue;
    const auto& m = rec.at("metrics");
    for (const auto& r : m.at("robust")) {
      out << rec.at("config_hash").get<std::string>() << ',' << csv_escape(cfg_field(rec, "dataset")) << ','
          << cfg_field(rec, "model") << ',' << cfg_field(rec, "mode") << ',' << cfg_field(rec, "at.attack")
          << ',' << cfg_field(rec, "at.epsilon") << ',' << cfg_field(rec, "at.alpha") << ','
          << r.at("attack").get<std::string>() << ',' << r.at("epsilon").get<std::size_t>() << ','
          << num(m.at("clean").at("f1")) << ',' << num(r.at("robust_accuracy")) << ','
          << num(r.value("baseline_robust_accuracy", json())) << ',' << num(r.value("r_at", json())) << ','
          << num(r.value("r_rel", json())) << '\n';
    }
  }
}

/// Mean r_rel against evaluation epsilon, one curve per (dataset, model,
/// training attack, alpha, evaluation attack); averages over seeds and any
/// other varying fields. Undefined r_rel values are skipped and counted.
inline void write_curves_csv(std::ostream& out, const std::vector<json>& records) {
  using namespace detail;
  struct Acc {
    double sum = 0.0;
    std::size_t n = 0, undefined = 0;
  };
  std::map<std::tuple<std::string, std::string, std::string, std::string, std::string, std::size_t>, Acc> acc;
  for (const auto& rec : records) {
    if (rec.value("status", "") != "ok" || cfg_field(rec, "mode") != "adversarial") continue;
    for (const auto& r : rec.at("metrics").at("robust")) {
      auto& a = acc[{cfg_field(rec, "dataset"), cfg_field(rec, "model"), cfg_field(rec, "at.attack"),
                     cfg_field(rec, "at.alpha"), r.at("attack").get<std::string>(),
                     r.at("epsilon").get<std::size_t>()}];
      if (r.at("r_rel").is_number()) {
        a.sum += r.at("r_rel").get<double>();
        ++a.n;
      } else {
        ++a.undefined;
      }
    }
  }
  out << "dataset,model,train_attack,alpha,eval_attack,epsilon,mean_r_rel,n,undefined\n";
  for (const auto& [k, a] : acc) {
    const auto& [dataset, model, train_attack, alpha, eval_attack, eps] = k;
    out << csv_escape(dataset) << ',' << model << ',' << train_attack << ',' << alpha << ',' << eval_attack
        << ',' << eps << ',' << (a.n ? format_double(a.sum / static_cast<double>(a.n)) : "") << ',' << a.n
        << ',' << a.undefined << '\n';
  }
}

}  // namespace atbench
