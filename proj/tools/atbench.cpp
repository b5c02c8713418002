// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The atbench Authors

// Command-line front end. Every subcommand prints JSON (or CSV for table
// exports) on stdout; failures print {"error": {...}} on stderr and exit
// nonzero.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "atbench/harness.hpp"

namespace {

using namespace atbench;
using nlohmann::json;

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, mode);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  return in;
}

// Writes to `path`, or stdout when it is empty or "-".
template <typename F>
void emit(const std::string& path, F&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
  } else {
    auto out = open_out(path);
    write(out);
  }
}

json dataset_summary(const Dataset& ds) {
  std::size_t nnz = 0, max_active = 0;
  for (const auto& s : ds.samples) {
    nnz += s.active.size();
    max_active = std::max(max_active, s.active.size());
  }
  std::size_t addable = 0;
  for (std::size_t j = 0; j < ds.space.dimension; ++j) addable += ds.space.is_addable(j);
  return {{"samples", ds.size()},
          {"malware", ds.count(Label::kMalware)},
          {"benign", ds.count(Label::kBenign)},
          {"dimension", ds.space.dimension},
          {"policy", std::string(to_string(ds.space.policy))},
          {"addable_features", addable},
          {"mean_active", ds.empty() ? 0.0 : static_cast<double>(nnz) / static_cast<double>(ds.size())},
          {"max_active", max_active}};
}

// Options shared by the commands that attack a saved model.
struct AttackOptions {
  std::string kind = "pgd";
  std::size_t epsilon = 10;
  std::size_t iters = 10;
  std::string policy;  // defaults to the model's
  std::size_t query_limit = 200;
  std::string transformations;
  std::uint64_t seed = 0;

  void add(CLI::App* cmd) {
    cmd->add_option("--attack", kind, "pgd | jsma | greedy-pk | query-zk")->capture_default_str();
    cmd->add_option("--epsilon", epsilon, "L0 budget")->capture_default_str();
    cmd->add_option("--iters", iters, "PGD iterations")->capture_default_str();
    cmd->add_option("--policy", policy, "add-only | flip-any (default: the model's)");
    cmd->add_option("--query-limit", query_limit, "query-zk query budget")->capture_default_str();
    cmd->add_option("--transformations", transformations, "transformation file (id: i,j,k per line)");
    cmd->add_option("--seed", seed, "attack seed")->capture_default_str();
  }

  AttackSpec build(const Model& m, const Dataset& donors_ds) const {
    AttackSpec a;
    a.kind = parse_attack_kind(kind);
    a.epsilon = epsilon;
    a.iters = iters;
    a.policy = policy.empty() ? m.space().policy : parse_mutation_policy(policy);
    a.query_limit = query_limit;
    if (a.needs_transformations()) {
      a.transformations = std::make_shared<const TransformationSet>(
          transformations.empty() ? harvest_transformations(donors_ds, 500, 3, derive_seed(seed, 4))
                                  : load_transformations(transformations, m.dimension()));
    }
    return a;
  }
};

Dataset load_for_model(const std::string& path, const Model& m) {
  auto ds = load_sparse_dataset(path, m.dimension(), m.space().policy);
  ds.space = m.space();
  return ds;
}

int run(int argc, char** argv) {
  CLI::App app{"atbench: adversarial training benchmark for binary-feature malware classifiers"};
  app.require_subcommand(1);

  // dataset ------------------------------------------------------------------
  auto* dataset = app.add_subcommand("dataset", "generate or inspect sparse binary datasets");
  dataset->require_subcommand(1);
  std::string gen_spec, gen_out;
  auto* gen = dataset->add_subcommand("gen", "materialize a dataset reference as a sparse file");
  gen->add_option("--spec", gen_spec, "dataset reference, e.g. synthetic:d=200,n=5000,overlap=0.3")->required();
  gen->add_option("--out", gen_out, "output path")->required();
  gen->callback([&] {
    const auto ds = resolve_dataset(gen_spec);
    save_sparse_dataset(gen_out, ds);
    json j = dataset_summary(ds);
    j["path"] = gen_out;
    std::cout << j.dump(2) << '\n';
  });

  std::string insp_path, insp_policy = "add-only";
  std::size_t insp_d = 0;
  auto* inspect = dataset->add_subcommand("inspect", "summarize a sparse dataset file");
  inspect->add_option("--path", insp_path, "sparse dataset file")->required();
  inspect->add_option("--dimension", insp_d, "feature dimension")->required();
  inspect->add_option("--policy", insp_policy, "add-only | flip-any")->capture_default_str();
  inspect->callback([&] {
    const auto ds = load_sparse_dataset(insp_path, insp_d, parse_mutation_policy(insp_policy));
    std::cout << dataset_summary(ds).dump(2) << '\n';
  });

  // train --------------------------------------------------------------------
  std::string train_cfg, train_out, train_log;
  auto* train = app.add_subcommand("train", "train a model (standard or adversarial) from a config");
  train->add_option("--config", train_cfg, "experiment config")->required();
  train->add_option("--out", train_out, "model checkpoint path")->required();
  train->add_option("--log", train_log, "write the adversarial-training log (JSON lines)");
  train->callback([&] {
    const auto c = parse_experiment_config(load_config(train_cfg));
    const auto base = prepare_baseline(c);
    json j = {{"config_hash", config_hash(c)}, {"mode", c.adversarial ? "adversarial" : "standard"}};
    if (c.adversarial) {
      ATConfig cfg;
      cfg.attack.kind = c.at_attack;
      cfg.attack.epsilon = c.at_epsilon;
      cfg.attack.iters = c.attack_iters;
      cfg.attack.policy = c.attack_policy;
      cfg.attack.query_limit = c.query_limit;
      if (cfg.attack.needs_transformations()) {
        cfg.attack.transformations = std::make_shared<const TransformationSet>(
            resolve_transformations(c.transformations, base.data.train, derive_seed(training_seed(c), 4)));
      }
      cfg.epsilon = c.at_epsilon;
      cfg.alpha = c.at_alpha;
      cfg.train = base.train;
      cfg.regenerate_each_epoch = c.at_regenerate;
      cfg.workers = c.workers;
      const auto at = adversarial_train(base.init, base.data.train, base.data.val, cfg);
      save_model(train_out, at.model);
      if (!train_log.empty()) {
        auto out = open_out(train_log);
        write_atlog(out, at.log);
      }
      j["best_epoch"] = at.best_epoch;
      j["best_val_f1"] = at.best_val_f1;
      j["clean"] = to_json(clean_eval(at.model, base.data.test));
      j["total_aes"] = at.log.total_aes();
    } else {
      save_model(train_out, base.model);
      j["best_epoch"] = base.best_epoch;
      j["best_val_f1"] = base.best_val_f1;
      j["clean"] = to_json(clean_eval(base.model, base.data.test));
    }
    j["model"] = train_out;
    std::cout << j.dump(2) << '\n';
  });

  // attack -------------------------------------------------------------------
  std::string atk_model, atk_data, atk_out;
  std::vector<std::size_t> atk_index;
  AttackOptions atk;
  auto* attack = app.add_subcommand("attack", "attack samples of a dataset with a saved model");
  attack->add_option("--model", atk_model, "model checkpoint")->required();
  attack->add_option("--data", atk_data, "sparse dataset file")->required();
  attack->add_option("--index", atk_index, "sample indices (default: every sample predicted malware)");
  attack->add_option("--out", atk_out, "outcomes as JSON lines (default: stdout)");
  atk.add(attack);
  attack->callback([&] {
    const auto m = load_model(atk_model);
    const auto ds = load_for_model(atk_data, m);
    const auto spec = atk.build(m, ds);
    std::vector<std::size_t> idx = atk_index;
    if (idx.empty()) {
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (predict(m, ds.samples[i]).label == Label::kMalware) idx.push_back(i);
      }
    }
    emit(atk_out, [&](std::ostream& out) {
      for (auto i : idx) {
        if (i >= ds.size()) fail(ErrorCode::kRange, "sample index " + std::to_string(i) + " out of range");
        auto j = to_json(run_attack(m, ds.samples[i], spec, derive_seed(atk.seed, i)));
        j["index"] = i;
        out << j.dump() << '\n';
      }
    });
  });

  // evaluate -----------------------------------------------------------------
  std::string ev_model, ev_data, ev_baseline, ev_traces;
  std::optional<std::size_t> ev_n;
  AttackOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "clean and robust accuracy of a saved model");
  evaluate->add_option("--model", ev_model, "model checkpoint")->required();
  evaluate->add_option("--data", ev_data, "test set (sparse file)")->required();
  evaluate->add_option("--baseline", ev_baseline, "vanilla model checkpoint; adds r_at and r_rel");
  evaluate->add_option("--n-eval", ev_n, "attacked true positives (default min(1000, #TP))");
  evaluate->add_option("--traces", ev_traces, "write attack outcomes as JSON lines");
  ev.add(evaluate);
  evaluate->callback([&] {
    const auto m = load_model(ev_model);
    const auto ds = load_for_model(ev_data, m);
    const auto spec = ev.build(m, ds);
    const auto r = robust_eval(m, spec, ev.epsilon, ds, ev_n, ev.seed);
    json j = {{"clean", to_json(clean_eval(m, ds))}, {"robust", to_json(r)}};
    const auto conf = ae_confidence(m, r.outcomes);
    if (conf.summary) j["confidence"] = {{"mean_loss", conf.summary->mean}, {"max_loss", conf.summary->max}};
    if (!ev_baseline.empty()) {
      const auto b = load_model(ev_baseline);
      const auto rv = robust_eval(b, spec, ev.epsilon, ds, ev_n, ev.seed);
      j["baseline_robust_accuracy"] = rv.robust_accuracy;
      j["r_at"] = rv.robust_accuracy == 100.0 ? json(r.robust_accuracy - 100.0)
                                              : json(relative_robustness(rv.robust_accuracy, r.robust_accuracy).r_at);
      j["r_rel"] = rv.robust_accuracy == 100.0
                       ? json()
                       : json(relative_robustness(rv.robust_accuracy, r.robust_accuracy).r_rel);
    }
    if (!ev_traces.empty()) {
      auto out = open_out(ev_traces);
      for (const auto& o : r.outcomes) out << to_json(o).dump() << '\n';
    }
    std::cout << j.dump(2) << '\n';
  });

  // run ----------------------------------------------------------------------
  std::string run_cfg, run_out;
  auto* run_cmd = app.add_subcommand("run", "run one experiment and print its result record");
  run_cmd->add_option("--config", run_cfg, "experiment config")->required();
  run_cmd->add_option("--out", run_out, "append the record to this JSON-lines sink");
  run_cmd->callback([&] {
    const auto c = parse_experiment_config(load_config(run_cfg));
    const auto rec = run_experiment(c);
    if (!run_out.empty()) open_out(run_out, std::ios::app) << rec.dump() << '\n';
    std::cout << rec.dump(2) << '\n';
  });

  // grid ---------------------------------------------------------------------
  auto* grid = app.add_subcommand("grid", "expand, count and run experiment grids");
  grid->require_subcommand(1);
  std::string grid_cfg, grid_out, grid_summary;
  std::size_t grid_workers = 1;
  auto grid_common = [&](CLI::App* cmd, bool running) {
    cmd->add_option("--config", grid_cfg, "grid config (grid.<axis> = a | b | ...)")->required();
    if (running) {
      cmd->add_option("--out", grid_out, "JSON-lines result sink")->required();
      cmd->add_option("--workers", grid_workers, "concurrent experiments")->capture_default_str();
      cmd->add_option("--summary", grid_summary, "also write a CSV summary of the sink");
    }
  };
  auto run_grid_cmd = [&](bool resume) {
    const auto g = parse_grid(load_config(grid_cfg));
    GridRunOptions opts;
    opts.workers = std::max<std::size_t>(1, grid_workers);
    opts.sink_path = grid_out;
    opts.resume = resume;
    const auto recs = run_grid(g, opts);
    std::size_t errors = 0;
    for (const auto& r : recs) errors += r.value("status", "") != "ok";
    if (!grid_summary.empty()) {
      auto out = open_out(grid_summary);
      write_summary_csv(out, read_records(grid_out));
    }
    std::cout << json{{"points", count_grid(g)}, {"ran", recs.size()}, {"errors", errors}, {"sink", grid_out}}.dump(2)
              << '\n';
  };
  auto* grid_run = grid->add_subcommand("run", "run every grid point");
  grid_common(grid_run, true);
  grid_run->callback([&] { run_grid_cmd(false); });
  auto* grid_resume = grid->add_subcommand("resume", "run the grid points missing from the sink");
  grid_common(grid_resume, true);
  grid_resume->callback([&] { run_grid_cmd(true); });
  bool grid_list = false;
  auto* grid_count = grid->add_subcommand("count", "print the number of grid points");
  grid_common(grid_count, false);
  grid_count->add_flag("--list", grid_list, "also print each point's canonical config hash");
  grid_count->callback([&] {
    const auto g = parse_grid(load_config(grid_cfg));
    std::cout << count_grid(g) << '\n';
    if (grid_list) {
      for (const auto& kv : expand_grid(g)) std::cout << config_hash(parse_experiment_config(kv)) << '\n';
    }
  });

  // analyze ------------------------------------------------------------------
  auto* analyze = app.add_subcommand("analyze", "analyses and plot-data exports");
  analyze->require_subcommand(1);

  std::string jdp_log, jdp_traces, jdp_table, jdp_out;
  std::size_t jdp_grid = 32;
  std::optional<double> jdp_bw;
  auto* jdp = analyze->add_subcommand("jdp", "joint flip-frequency density of training and attack flips");
  jdp->add_option("--atlog", jdp_log, "adversarial-training log (JSON lines)")->required();
  jdp->add_option("--traces", jdp_traces, "attack outcomes (JSON lines)")->required();
  jdp->add_option("--grid", jdp_grid, "cells per axis")->capture_default_str();
  jdp->add_option("--bandwidth", jdp_bw, "kernel bandwidth (default: Silverman per axis)");
  jdp->add_option("--table", jdp_table, "write the per-feature flip table as CSV");
  jdp->add_option("--out", jdp_out, "density CSV (default: stdout)");
  jdp->callback([&] {
    auto log_in = open_in(jdp_log);
    const auto log = read_atlog(log_in);
    std::vector<AttackOutcome> outcomes;
    auto tr_in = open_in(jdp_traces);
    std::string line;
    while (std::getline(tr_in, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line, nullptr, false);
      if (j.is_discarded()) fail(ErrorCode::kParse, "traces: line is not JSON");
      outcomes.push_back(outcome_from_json(j));
    }
    const auto table = flip_frequency_table(log, outcomes);
    if (!jdp_table.empty()) {
      auto out = open_out(jdp_table);
      write_flip_table_csv(out, table);
    }
    const auto d = jdp_density(table, jdp_grid, jdp_bw);
    emit(jdp_out, [&](std::ostream& out) { write_density_csv(out, d); });
  });

  std::string rough_model, rough_data;
  std::size_t rough_eps = 10, rough_m = 1000, rough_samples = 100;
  std::uint64_t rough_seed = 0;
  auto* rough = analyze->add_subcommand("roughness", "Monte-Carlo decision-function roughness");
  rough->add_option("--model", rough_model, "model checkpoint")->required();
  rough->add_option("--data", rough_data, "sparse dataset file")->required();
  rough->add_option("--epsilon", rough_eps, "L0 radius")->capture_default_str();
  rough->add_option("--m", rough_m, "draws per sample")->capture_default_str();
  rough->add_option("--samples", rough_samples, "samples used (first N)")->capture_default_str();
  rough->add_option("--seed", rough_seed, "sampling seed")->capture_default_str();
  rough->callback([&] {
    const auto m = load_model(rough_model);
    auto ds = load_for_model(rough_data, m);
    if (ds.samples.size() > rough_samples) ds.samples.resize(rough_samples);
    const auto est = roughness_gamma(m, ds.samples, rough_eps, rough_m, rough_seed);
    std::cout << to_json(est).dump(2) << '\n';
  });

  std::string emb_data, emb_out, emb_policy = "add-only";
  std::size_t emb_d = 0;
  auto* emb = analyze->add_subcommand("export-embeddings", "dense 0/1 matrix with a label column");
  emb->add_option("--data", emb_data, "sparse dataset file")->required();
  emb->add_option("--dimension", emb_d, "feature dimension")->required();
  emb->add_option("--out", emb_out, "output path (default: stdout)");
  emb->add_option("--policy", emb_policy, "add-only | flip-any")->capture_default_str();
  emb->callback([&] {
    const auto ds = load_sparse_dataset(emb_data, emb_d, parse_mutation_policy(emb_policy));
    emit(emb_out, [&](std::ostream& out) { write_embedding_matrix(out, ds); });
  });

  std::string cur_results, cur_out;
  bool cur_summary = false;
  auto* curves = analyze->add_subcommand("curves", "mean r_rel vs epsilon curves from grid results");
  curves->add_option("--results", cur_results, "JSON-lines result sink")->required();
  curves->add_option("--out", cur_out, "CSV output (default: stdout)");
  curves->add_flag("--summary", cur_summary, "emit the per-record summary table instead");
  curves->callback([&] {
    const auto recs = read_records(cur_results);
    emit(cur_out, [&](std::ostream& out) {
      if (cur_summary) write_summary_csv(out, recs);
      else write_curves_csv(out, recs);
    });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", {{"code", "usage_error"}, {"message", e.what()}}}}.dump() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const atbench::Error& e) {
    std::cerr << json{{"error", {{"code", atbench::error_code_name(e.code())}, {"message", e.what()}}}}.dump()
              << '\n';
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", "internal_error"}, {"message", e.what()}}}}.dump() << '\n';
  }
  return 1;
}
