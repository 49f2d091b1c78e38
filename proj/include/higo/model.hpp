#pragma once

#include "higo/dynamics.hpp"
#include "higo/fusion.hpp"
#include "higo/head.hpp"
#include "higo/mixer.hpp"

namespace higo {

struct ModelConfig {
  int h = 16, w = 32;
  int cx = 6, cz = 4;
  int d = 32;
  int k = 4;
  int levels = 3;
  int spectral_modes = 8;
  bool wrap_lon = false;
  bool sigmoid_gate = false;
  bool residual_drivers = false;
  bool sigmoid_binary = false;
  MpMode mp_mode = MpMode::adaptive;
};

/// The full forecasting model: gated fusion -> mixer -> hierarchical graph
/// ODE -> decoder.
struct Model {
  ModelConfig cfg;
  Hierarchy hier;
  FusionParams fusion;
  MixerParams mixer;
  DynamicsParams dyn;
  HeadParams head;

  Model(const ModelConfig& config, uint64_t seed);

  std::vector<Parameter*> parameters();
  void zero_grad();

  struct Forward {
    Array probs;                  // [H*W, K] at the target horizon
    std::vector<Array> interior;  // probabilities at requested interior times
  };

  /// drivers must already be normalized. Horizon is in units of 8-day steps.
  Forward forward(Tape* t, const Array& drivers, const Vec& indices,
                  const std::vector<uint8_t>& ba, double horizon, const SolverConfig& solver,
                  const std::vector<double>& interior_times = {}) const;
};

}  // namespace higo
