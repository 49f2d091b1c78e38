#pragma once

#include <random>
#include <string>
#include <vector>

#include "higo/array.hpp"
#include "higo/ops.hpp"

namespace higo {

/// Single seeded RNG stream used for all parameter initialization.
struct InitRng {
  std::mt19937_64 gen;
  explicit InitRng(uint64_t seed) : gen(seed) {}

  // Uniform in +-sqrt(6 / fan_in).
  Array uniform_fan_in(std::vector<int> shape, int fan_in) {
    double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Array a = zeros(std::move(shape));
    for (int i = 0; i < a.size(); ++i) a.data[i] = dist(gen);
    return a;
  }
};

inline Array use(Tape* t, Parameter& p) { return t ? t->leaf(p) : p.value; }

struct Linear {
  Parameter w;  // [in, out]
  Parameter b;  // [out]

  Linear() = default;
  Linear(const std::string& name, int in, int out, InitRng& rng)
      : w(name + ".W", rng.uniform_fan_in({in, out}, in)), b(name + ".b", zeros({out})) {}

  Array apply(Tape* t, const Array& x) const {
    auto& self = const_cast<Linear&>(*this);
    return add(matmul(x, use(t, self.w)), use(t, self.b));
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

/// Two-layer MLP with GeLU between the layers.
struct Mlp2 {
  Linear l1, l2;

  Mlp2() = default;
  Mlp2(const std::string& name, int in, int hidden, int out, InitRng& rng)
      : l1(name + ".1", in, hidden, rng), l2(name + ".2", hidden, out, rng) {}

  Array apply(Tape* t, const Array& x) const { return l2.apply(t, gelu(l1.apply(t, x))); }

  void collect(std::vector<Parameter*>& out) {
    l1.collect(out);
    l2.collect(out);
  }
};

}  // namespace higo
