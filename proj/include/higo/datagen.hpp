#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "higo/array.hpp"

namespace higo {

/// One timestep: normalized driver fields, global index signals and the
/// quantized burned-area map.
struct CubeSample {
  Array drivers;             // [H, W, C_x]
  Vec indices;               // [C_z]
  std::vector<uint8_t> ba;   // H*W entries in {0..K-1}
  int time_index = 0;
};

struct Dataset {
  int h = 0, w = 0, cx = 0, cz = 0, k = 0;
  std::vector<std::string> channel_names;
  std::vector<CubeSample> samples;
};

struct QuantizerSpec {
  int k = 2;
  std::vector<double> boundaries;  // K-2 ascending positive reals
  bool fallback_equal_width = false;
};

struct NormStats {
  std::vector<double> mean;  // per driver channel
  std::vector<double> std;   // degenerate channels get 1
};

struct GenConfig {
  int h = 16, w = 32;
  int cx = 6, cz = 4;
  int steps = 250;
  uint64_t seed = 0;
  double ignition_rate = 1.0;  // scales spontaneous ignition; 0 disables fire
  double target_fire_fraction = 0.02;
};

/// Continuous burned-area fields before quantization, one per step.
struct RawCube {
  int h = 0, w = 0, cx = 0, cz = 0;
  std::vector<std::string> channel_names;
  std::vector<Array> drivers;       // [H, W, C_x] per step
  std::vector<Vec> indices;         // [C_z] per step
  std::vector<Vec> ba_continuous;   // H*W per step, >= 0
};

RawCube generate_raw(const GenConfig& config);

/// Full pipeline: generate, fit a K-level quantizer on the training
/// fraction of the run, quantize every step.
Dataset generate_synthetic(const GenConfig& config, int k, double train_fraction = 0.8);

Array log1p_transform(const Array& field);
QuantizerSpec fit_quantizer(const std::vector<double>& training_ba, int k);
int quantize(double value, const QuantizerSpec& spec);
Array coarsen_block_mean(const Array& field, int factor);

struct Split {
  Dataset train;
  Dataset test;
};
Split split_chronological(const Dataset& dataset, double train_fraction);

NormStats fit_norm_stats(const Dataset& train);
Array normalize_drivers(const Array& drivers, const NormStats& stats);

/// Driver group names for the masking ablation.
std::vector<std::string> driver_groups();
std::string channel_group(const std::string& channel_name);
std::vector<std::string> default_channel_names(int cx);

}  // namespace higo
