#pragma once

#include <cstdint>

#include "higo/nn.hpp"

namespace higo {

struct HeadParams {
  Mlp2 dec;                    // D -> D -> K
  bool sigmoid_binary = false; // printed single-logit head, only valid for K = 2

  HeadParams() = default;
  HeadParams(int d, int k, InitRng& rng);
  void collect(std::vector<Parameter*>& out);
};

/// Per-cell class probabilities [N, K].
Array decode(Tape* t, const Array& fine_state, const HeadParams& p);

/// Binary fire probability 1 - p(class 0), detached.
Vec fire_probability(const Array& probs);

/// Inverse-frequency class weights, renormalized to mean 1. Absent classes
/// inherit the weight of the rarest present class.
Vec class_weights(const std::vector<uint8_t>& train_labels, int k);

Array weighted_ce(Tape* t, const Array& probs, const std::vector<uint8_t>& labels,
                  const Vec& weights);

}  // namespace higo
