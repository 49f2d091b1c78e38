#pragma once

#include <optional>
#include <string>

#include "higo/datagen.hpp"
#include "higo/metrics.hpp"
#include "higo/model.hpp"

namespace higo {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  int epochs = 100;
  int batch = 4;
  int horizon_steps = 1;
  double grad_clip = 1.0;  // global norm ceiling; 0 disables
  double val_fraction = 0.15;  // chronological tail of the train period
  uint64_t seed = 0;
  SolverConfig solver;
  ModelConfig model;  // h/w/cx/cz/k are filled from the dataset
  std::vector<std::string> driver_mask;
};

struct AdamWState {
  std::vector<Vec> m, v;
  long step = 0;
};

/// Decoupled weight decay update with bias-corrected moments.
void adamw_step(const std::vector<Parameter*>& params, AdamWState& state, double lr_t,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double wd = 0.0);

double cosine_lr(long step, long total_steps, double lr_max, double lr_min = 0.0);

/// Zeroes the named channel groups of an already-normalized sample.
CubeSample mask_drivers(const CubeSample& sample, const std::vector<std::string>& groups,
                        const std::vector<std::string>& channel_names);

struct EpochRecord {
  int epoch = 0;
  double loss = 0;
  double val_auprc = -1;  // -1 when undefined (no positives)
};

struct TrainState {
  Model model;
  AdamWState opt;
  NormStats norm;
  Vec class_weights;
  std::vector<Vec> best_params;  // snapshot selected by validation AUPRC
  double best_val_auprc = -1;
  int best_epoch = -1;
  int epochs_done = 0;
  std::string rng_state;
  std::vector<EpochRecord> history;
  TrainConfig cfg;
  std::vector<double> quant_boundaries;

  explicit TrainState(const TrainConfig& c) : model(c.model, c.seed), cfg(c) {}

  void load_best();  // copy the selected snapshot into the live parameters
};

/// Runs the training loop over the chronological train split of `dataset`,
/// continuing from `state` (fresh or checkpoint-loaded) up to cfg.epochs
/// total epochs. `stop_after_epochs` interrupts the run early (for
/// checkpointing) without changing the learning-rate schedule; -1 runs to
/// completion.
void train(TrainState& state, const Dataset& dataset, int stop_after_epochs = -1);

struct MetricRow {
  double horizon_days;
  std::string metric;
  double value;
};

struct EvalOptions {
  std::vector<std::string> mask_groups;
  bool persistence_baseline = false;
  bool interp_baseline = false;  // linear interpolation of endpoint probability maps
  std::string dump_maps_dir;     // empty = no dumps
};

std::vector<MetricRow> evaluate(const Model& model, const Dataset& test, const NormStats& norm,
                                const std::vector<double>& horizons_days,
                                const SolverConfig& solver, const EvalOptions& opts = {});

// HGK1 checkpoint: magic, JSON header, f64 payload (params, moments, best
// snapshot), trailing CRC32. Reload + continue reproduces an uninterrupted
// run bit for bit.
void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

}  // namespace higo
