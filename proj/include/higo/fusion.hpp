#pragma once

#include <array>

#include "higo/nn.hpp"

namespace higo {

/// Climate-informed gated feature fusion: driver encoder, three mask
/// attention vectors from the climate indices, and a bank of three
/// convolutional operator branches combined residually.
struct FusionParams {
  Mlp2 enc;                  // C_x -> D -> D
  std::array<Mlp2, 3> att;   // C_z -> D/2 -> D
  Parameter conv1_w;         // [D, D]
  Parameter conv1_b;         // [D]
  Parameter dw_w;            // [3, 3, D]
  Parameter spec_w;          // [M, M, D, 2]
  bool sigmoid_gate = false; // ablation flag; default follows the plain linear head

  FusionParams() = default;
  FusionParams(int cx, int cz, int d, int modes, InitRng& rng);

  void collect(std::vector<Parameter*>& out);
};

Array encode_drivers(Tape* t, const Array& drivers, const FusionParams& p);
std::array<Array, 3> climate_attention(Tape* t, const Vec& indices, const FusionParams& p);
Array gated_fuse(Tape* t, const Array& z, const std::array<Array, 3>& a, const FusionParams& p);

}  // namespace higo
