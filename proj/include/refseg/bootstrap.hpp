// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "refseg/config.hpp"
#include "refseg/trainer.hpp"
#include "refseg/zsrec.hpp"

namespace refseg {

// Accepted pseudo-labels with provenance; later rounds supersede earlier
// entries for the same sample. Ground-truth samples never enter the store.
class PseudoLabelStore {
public:
  struct Entry {
    ContourSequence contour;
    int round = -1;
    double dsc = 0.0;
  };

  void upsert(int sample_id, Entry e, const std::set<int>& annotated_ids);
  const std::map<int, Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  static void append_jsonl(const std::string& path, int sample_id, const Entry& e);
  // rebuild from the append-only log, keeping entries with round <= max_round
  static PseudoLabelStore load_jsonl(const std::string& path, int max_round,
                                     const std::set<int>& annotated_ids);

private:
  std::map<int, Entry> entries_;
};

// Builds per-scene scorers from the spec; remote scorers share one client.
class ScorerFactory {
public:
  ScorerFactory(const ScorerSpec& spec, uint64_t seed);
  std::unique_ptr<Scorer> for_scene(const Scene& scene);

private:
  ScorerSpec spec_;
  uint64_t seed_;
  std::shared_ptr<RemoteScorer> remote_;
};

struct LoadedData {
  Dataset train;
  Dataset eval;
  std::vector<Scene> train_scenes;  // regenerated, for proposals and scorers
};

// Reads datasets from configured directories or generates them from the run
// seed; applies the label-rate split when the training set is fully
// annotated.
LoadedData load_run_data(const RunConfig& cfg);

struct RoundReport {
  int round = -1;
  double gamma = 0.0;
  int processed = 0;  // unlabeled samples decoded
  int accepted = 0;
  double acceptance_rate = 0.0;
  int train_size = 0;  // GT + pseudo items in the retrain phase
  double miou = 0.0;
  nlohmann::json to_json() const;
};

struct BootstrapReport {
  int schema_version = 1;
  std::string config_hash;
  uint64_t seed = 0;
  double label_rate = 0.0;
  double initial_miou = 0.0;
  std::vector<RoundReport> rounds;
  double final_miou = 0.0;
  double wall_clock_sec = 0.0;  // stripped for reproducibility comparisons
  nlohmann::json to_json() const;
};

// Step 1 (initial training) followed by `rounds` iterations of
// pseudo-labeling + gamma-weighted retraining. Fully resumable from any
// completed phase; a config-hash mismatch against an existing run directory
// is an error. stop_after_round >= 0 ends the run early after that round
// completes (used to exercise resumability).
BootstrapReport run_bootstrap(const RunConfig& cfg, const std::string& run_dir,
                              int stop_after_round = -1);

// CLI building blocks: Step 1 alone, and a single pseudo-labeling pass
// against the latest checkpoint in the run directory.
double train_initial_only(const RunConfig& cfg, const std::string& run_dir);
int pseudo_label_only(const RunConfig& cfg, const std::string& run_dir, int round);

}  // namespace refseg
