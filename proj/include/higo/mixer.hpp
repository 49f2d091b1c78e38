#pragma once

#include <cstdint>

#include "higo/nn.hpp"

namespace higo {

/// Burned-area state encoder and driver/state cross-attention producing the
/// initial ODE state.
struct MixerParams {
  Linear ba_proj;            // 1 -> D
  Parameter wq, wk, wv;      // [D, D]
  Mlp2 ffn;                  // D -> D -> D
  Parameter ln_g, ln_b;      // [D]
  bool residual_drivers = false;  // ablation: residual from the driver features instead

  MixerParams() = default;
  MixerParams(int d, InitRng& rng);

  void collect(std::vector<Parameter*>& out);
};

Array encode_ba(Tape* t, const std::vector<uint8_t>& ba, int h, int w, int k,
                const MixerParams& p);
Array cross_attention(Tape* t, const Array& hf, const Array& bhat, const MixerParams& p);
Array mix(Tape* t, const Array& hf, const Array& bhat, const MixerParams& p);

}  // namespace higo
