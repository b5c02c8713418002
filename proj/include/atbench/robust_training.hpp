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
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "atbench/attacks.hpp"
#include "atbench/common.hpp"
#include "atbench/featurespace.hpp"
#include "atbench/models.hpp"

namespace atbench {

struct ATConfig {
  AttackSpec attack;
  std::size_t epsilon = 0;
  double alpha = 0.0;
  TrainConfig train;
  // When false, the AE of each malware sample is crafted the first time it
  // is selected and reused afterwards.
  bool regenerate_each_epoch = true;
  // Threads used for AE generation. Results do not depend on it.
  std::size_t workers = 1;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorCode::kConfig, "alpha must lie in [0, 1]");
    if (attack.epsilon != epsilon) {
      fail(ErrorCode::kConfig, "attack epsilon " + std::to_string(attack.epsilon) +
                                   " differs from the training epsilon " + std::to_string(epsilon));
    }
    train.validate();
  }
};

struct ATEpochLog {
  std::size_t epoch = 0;
  std::size_t ae_count = 0;
  std::size_t ae_evading = 0;
  double mean_ae_loss = 0.0;
  std::size_t flips_total = 0;
  // Per-feature number of AEs in which the feature was flipped.
  std::vector<std::size_t> flip_counts;
  double mean_seconds_per_ae = 0.0;
  double epoch_seconds = 0.0;
  double train_loss = 0.0;
  double val_f1 = 0.0;
};

struct ATLog {
  std::size_t dimension = 0;
  std::vector<ATEpochLog> epochs;

  std::vector<std::size_t> total_flip_counts() const {
    std::vector<std::size_t> total(dimension, 0);
    for (const auto& e : epochs) {
      for (std::size_t j = 0; j < dimension && j < e.flip_counts.size(); ++j) total[j] += e.flip_counts[j];
    }
    return total;
  }

  std::size_t total_flips() const {
    std::size_t n = 0;
    for (const auto& e : epochs) n += e.flips_total;
    return n;
  }

  std::size_t total_aes() const {
    std::size_t n = 0;
    for (const auto& e : epochs) n += e.ae_count;
    return n;
  }
};

struct ATResult {
  Model model;
  ATLog log;
  std::size_t best_epoch = 0;
  double best_val_f1 = 0.0;
};

inline std::size_t adversarial_count(double alpha, std::size_t n_malware) {
  return static_cast<std::size_t>(std::llround(alpha * static_cast<double>(n_malware)));
}

/// Robust training. Each epoch a seeded resample of round(alpha * #malware)
/// malware samples is replaced in place by the attack's output against the
/// current parameters (best-so-far when the attack fails), then one epoch of
/// standard training runs on the result. Samples the model already labels
/// benign are used unchanged. The checkpoint with the best clean validation
/// F1 is returned. With alpha = 0 this is exactly fit_standard.
inline ATResult adversarial_train(const Model& init, const Dataset& train, const Dataset& val,
                                  const ATConfig& cfg) {
  cfg.validate();
  if (train.empty()) fail(ErrorCode::kConfig, "empty training set");
  if (train.space.dimension != init.dimension() ||
      (!val.empty() && val.space.dimension != init.dimension())) {
    fail(ErrorCode::kDimension, "dataset dimension does not match the model");
  }
  std::vector<std::size_t> malware;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train.samples[i].label == Label::kMalware) malware.push_back(i);
  }
  if (cfg.alpha > 0.0 && malware.empty()) {
    fail(ErrorCode::kConfig, "alpha > 0 but the training set has no malware");
  }
  const std::size_t k = adversarial_count(cfg.alpha, malware.size());

  Trainer trainer(init, cfg.train, train.size());
  Rng select_rng(derive_seed(cfg.train.seed, 0xa1fa));
  ATLog log;
  log.dimension = init.dimension();
  std::map<std::size_t, BinarySample> cache;
  using clock = std::chrono::steady_clock;

  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const auto epoch_start = clock::now();
    std::vector<BinarySample> samples = train.samples;
    ATEpochLog entry;
    entry.epoch = epoch + 1;
    entry.flip_counts.assign(init.dimension(), 0);

    if (k > 0) {
      auto order = malware;
      select_rng.shuffle(order);
      order.resize(k);
      std::sort(order.begin(), order.end());

      const Model& snapshot = trainer.model();
      std::vector<BinarySample> aes(k);
      std::vector<double> seconds(k, 0.0);
      std::vector<bool> fresh(k, false);
      for (std::size_t s = 0; s < k; ++s) {
        if (!cfg.regenerate_each_epoch) {
          if (auto it = cache.find(order[s]); it != cache.end()) aes[s] = it->second;
          else fresh[s] = true;
        } else {
          fresh[s] = true;
        }
      }
      parallel_for(k, cfg.workers, [&](std::size_t s) {
        if (!fresh[s]) return;
        const auto t0 = clock::now();
        const auto& x = train.samples[order[s]];
        if (predict(snapshot, x).label != Label::kMalware) {
          aes[s] = x;
        } else {
          const auto seed = derive_seed(derive_seed(cfg.train.seed, epoch + 1), order[s]);
          aes[s] = run_attack(snapshot, x, cfg.attack, seed).x_adv;
        }
        seconds[s] = std::chrono::duration<double>(clock::now() - t0).count();
      });

      double loss_sum = 0.0, time_sum = 0.0;
      std::size_t generated = 0;
      for (std::size_t s = 0; s < k; ++s) {
        const auto& x = train.samples[order[s]];
        auto& ae = aes[s];
        ae.label = Label::kMalware;
        const std::size_t flips = hamming(ae, x);
        if (flips > cfg.epsilon) {
          fail(ErrorCode::kNumeric, "adversarial example exceeds the L0 budget");
        }
        // Features that differ between x and its AE.
        std::vector<FeatureIndex> changed;
        std::set_symmetric_difference(x.active.begin(), x.active.end(), ae.active.begin(),
                                      ae.active.end(), std::back_inserter(changed));
        for (auto j : changed) ++entry.flip_counts[j];
        entry.flips_total += flips;
        loss_sum += attack_loss(snapshot, ae, Label::kMalware);
        if (predict(snapshot, ae).label == Label::kBenign) ++entry.ae_evading;
        if (fresh[s]) {
          time_sum += seconds[s];
          ++generated;
          if (!cfg.regenerate_each_epoch) cache[order[s]] = ae;
        }
        samples[order[s]] = ae;
      }
      entry.ae_count = k;
      entry.mean_ae_loss = loss_sum / static_cast<double>(k);
      entry.mean_seconds_per_ae = generated ? time_sum / static_cast<double>(generated) : 0.0;
    }

    entry.train_loss = trainer.run_epoch(samples);
    trainer.finish_epoch(val, entry.train_loss);
    entry.val_f1 = trainer.log().back().val_f1;
    entry.epoch_seconds = std::chrono::duration<double>(clock::now() - epoch_start).count();
    log.epochs.push_back(std::move(entry));
  }
  auto fit = trainer.result();
  return ATResult{std::move(fit.model), std::move(log), fit.best_epoch, fit.best_val_f1};
}

// ---------------------------------------------------------------------------
// JSON-lines log: one object per epoch. flip_counts is stored sparsely as
// [[feature, count], ...].

inline nlohmann::json to_json(const ATEpochLog& e, std::size_t dimension) {
  nlohmann::json flips = nlohmann::json::array();
  for (std::size_t j = 0; j < e.flip_counts.size(); ++j) {
    if (e.flip_counts[j]) flips.push_back({j, e.flip_counts[j]});
  }
  return {{"epoch", e.epoch},
          {"dimension", dimension},
          {"ae_count", e.ae_count},
          {"ae_evading", e.ae_evading},
          {"mean_ae_loss", e.mean_ae_loss},
          {"flips_total", e.flips_total},
          {"flip_counts", flips},
          {"mean_seconds_per_ae", e.mean_seconds_per_ae},
          {"epoch_seconds", e.epoch_seconds},
          {"train_loss", e.train_loss},
          {"val_f1", e.val_f1}};
}

inline void write_atlog(std::ostream& out, const ATLog& log) {
  for (const auto& e : log.epochs) out << to_json(e, log.dimension).dump() << '\n';
}

inline ATLog read_atlog(std::istream& in) {
  ATLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const std::size_t d = j.at("dimension").get<std::size_t>();
      if (log.epochs.empty()) log.dimension = d;
      if (d != log.dimension) fail(ErrorCode::kDimension, "AT log mixes dimensions");
      ATEpochLog e;
      e.epoch = j.at("epoch").get<std::size_t>();
      e.ae_count = j.at("ae_count").get<std::size_t>();
      e.ae_evading = j.value("ae_evading", std::size_t{0});
      e.mean_ae_loss = j.at("mean_ae_loss").get<double>();
      e.flips_total = j.at("flips_total").get<std::size_t>();
      e.flip_counts.assign(d, 0);
      for (const auto& pair : j.at("flip_counts")) {
        const auto f = pair.at(0).get<std::size_t>();
        if (f >= d) fail(ErrorCode::kDimension, "AT log feature index out of range");
        e.flip_counts[f] = pair.at(1).get<std::size_t>();
      }
      e.mean_seconds_per_ae = j.value("mean_seconds_per_ae", 0.0);
      e.epoch_seconds = j.value("epoch_seconds", 0.0);
      e.train_loss = j.value("train_loss", 0.0);
      e.val_f1 = j.value("val_f1", 0.0);
      log.epochs.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::kParse, "AT log line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return log;
}

}  // namespace atbench
