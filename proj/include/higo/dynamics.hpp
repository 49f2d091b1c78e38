#pragma once

#include "higo/hiergraph.hpp"
#include "higo/nn.hpp"
#include "higo/odeint.hpp"

namespace higo {

enum class MpMode { adaptive, mean };

/// Per-level message passing and derivative networks.
struct LevelDynamicsParams {
  Mlp2 edge_score;  // [x_i | x_j | e_ij] -> 1
  Mlp2 edge_msg;    // [x_i | x_j | e_ij] -> D
  Mlp2 node_deriv;  // [x | m] -> D

  LevelDynamicsParams() = default;
  LevelDynamicsParams(int level, int d, InitRng& rng);
  void collect(std::vector<Parameter*>& out);
};

/// Attention-based down/up transition between adjacent levels.
struct TransitionParams {
  Mlp2 down;           // concatenated 4 children -> 4 logits
  Parameter up_ln_g;   // [D]
  Parameter up_ln_b;   // [D]

  TransitionParams() = default;
  TransitionParams(int level, int d, InitRng& rng);
  void collect(std::vector<Parameter*>& out);
};

struct DynamicsParams {
  std::vector<LevelDynamicsParams> levels;      // one per level
  std::vector<TransitionParams> transitions;    // one per level pair

  DynamicsParams() = default;
  DynamicsParams(int num_levels, int d, InitRng& rng);
  void collect(std::vector<Parameter*>& out);
};

/// Adaptive message passing (Eq. 8-9 style): learned per-neighborhood
/// softmax weights over learned edge messages. In mean mode the weights are
/// uniform (the low-pass ablation).
Array admp(Tape* t, const Array& state, const LevelGraph& graph, const LevelDynamicsParams& p,
           MpMode mode, int* isolated_count = nullptr);

struct DownResult {
  Array parent;  // [N_parent, D]
  Array beta;    // [N_child, 1], the blend weight of each child
};
DownResult downsample(Tape* t, const Array& child_state, const Hierarchy& hier, int level,
                      const TransitionParams& p);

Array upsample(Tape* t, const Array& child_state, const Array& parent_state, const Array& beta,
               const Hierarchy& hier, int level, const TransitionParams& p);

Array level_derivative(Tape* t, const Array& state, const LevelGraph& graph,
                       const LevelDynamicsParams& p, MpMode mode);

struct EvolveResult {
  Array fine;                   // level-1 state at t1
  std::vector<Array> interior;  // level-1 states at requested interior times
};

/// Single V-cycle: downsample to the coarsest level, integrate every
/// level's ODE independently over [t0, t1], then upsample with the cached
/// blend weights. With a tape attached the integration is fixed-step RK4
/// unrolled onto the tape; detached evolution honors cfg.method and serves
/// interior-time queries from the solver's dense output.
EvolveResult evolve(Tape* t, const Array& x0, const Hierarchy& hier, const DynamicsParams& p,
                    double t0, double t1, const SolverConfig& cfg, MpMode mode,
                    const std::vector<double>& interior_times = {});

}  // namespace higo
