// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "refseg/checkpoint.hpp"
#include "refseg/config.hpp"
#include "refseg/dataset.hpp"
#include "refseg/losses.hpp"
#include "refseg/model.hpp"
#include "refseg/optim.hpp"

namespace refseg {

// A prepared training sample: tokenized text, target token sequence, and the
// mask downsampled to the attention grid.
struct TrainItem {
  int sample_id = -1;  // record index in the dataset
  int scene_id = 0;
  std::vector<int> text_ids;
  std::vector<int> seq;
  Eigen::VectorXd mask_grid;
  bool is_pseudo = false;
};

// From an annotated record (requires mask).
TrainItem make_train_item(const Model& model, const SampleRecord& rec, int sample_id);

// From a pseudo-label contour.
TrainItem make_pseudo_item(const Model& model, const SampleRecord& rec, int sample_id,
                           const ContourSequence& contour);

struct PhaseConfig {
  int epochs = 1;
  int batch_size = 32;
  double lambda = 0.4;
  AmcrConfig amcr;
  // Eq. 4 weighting; gamma_active is false during the initial phase
  bool gamma_active = false;
  double gamma = 1.0;
  double gamma0 = 0.9;
  double gamma_max = 1.0;
  bool disable_cross = false;
  int threads = 2;
  double lr_scale = 1.0;
  double warmup_frac = 0.05;
  double decay_at_frac = 0.75;
  double decay_ratio = 0.1;
  uint64_t shuffle_seed = 0;
  std::string dump_dir;  // divergence diagnostics target
};

struct PhaseResult {
  int64_t steps = 0;
  double final_loss = 0.0;
};

// Teacher-forced training over mixed ground-truth and pseudo items.
// Per batch: per-group (GT / pseudo) CE token mean plus sample-mean AMCR,
// combined per Eq. 3; groups combined per Eq. 4 when gamma is active.
// Deterministic for fixed seeds regardless of thread count. Non-finite loss
// aborts with a diagnostic dump of the offending batch.
PhaseResult train_phase(Model& model, AdamW& opt, const std::vector<ImageRgb>& scene_images,
                        const std::vector<TrainItem>& items, const PhaseConfig& pc,
                        std::ostream* metrics, TrainState& state);

// Mean IoU of greedy-decoded masks against ground truth over annotated
// records; invalid decodes score 0. Order-invariant over the eval set.
double evaluate_miou(Model& model, const Dataset& ds, int threads, bool disable_cross = false);

}  // namespace refseg
