// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "refseg/dataset.hpp"
#include "refseg/losses.hpp"
#include "refseg/maskfilter.hpp"
#include "refseg/model.hpp"
#include "refseg/optim.hpp"

namespace refseg {

struct GammaSchedule {
  double gamma0 = 0.9;
  double gamma_max = 1.0;
  int rounds = 4;  // 4 at 30% labels, 7 at 10% by default
  enum class Kind { linear, step, cosine };
  Kind kind = Kind::linear;
};

// gamma0 at round 0, gamma_max at round R-1, non-decreasing in between.
double gamma_at(const GammaSchedule& s, int round);

int default_rounds_for_label_rate(double x_percent);

struct ScorerSpec {
  enum class Kind { oracle, noisy, remote };
  Kind kind = Kind::noisy;
  double floor = 0.05;
  double confusion = 0.1;  // noisy only
  std::string host = "127.0.0.1";
  int port = 8900;
  int timeout_ms = 2000;
  int max_inflight = 4;
};

struct RunConfig {
  uint64_t seed = 1;
  double label_rate = 30.0;

  // data: either existing directories or generated on the fly
  std::string train_dir;
  std::string eval_dir;
  int train_scenes = 400;
  int eval_scenes = 100;
  GenConfig gen;

  ModelConfig model;
  AmcrConfig loss;
  AdamWConfig optim;
  int batch_size = 32;
  int epochs_initial = 15;
  int epochs_round = 8;
  double warmup_frac = 0.05;   // fraction of phase steps with linear warmup
  double decay_at_frac = 0.75; // LR times decay_ratio beyond this point
  double decay_ratio = 0.1;

  GammaSchedule schedule;
  MvfConfig mvf;
  ProposalConfig proposals;
  ScorerSpec scorer;

  bool use_mvf = true;        // accept-all bootstrap when false
  bool disable_cross = false; // ablation arm without the fusion branch
  int threads = 2;

  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// FNV-1a over the canonical serialized form.
uint64_t config_hash(const RunConfig& c);

}  // namespace refseg
