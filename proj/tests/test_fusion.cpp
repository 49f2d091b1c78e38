#include <doctest.h>

#include "grad_check.hpp"
#include "higo/fusion.hpp"

using namespace higo;
using testutil::grad_check;

namespace {

FusionParams make_params(int cx = 3, int cz = 2, int d = 4, int modes = 2, uint64_t seed = 1) {
  InitRng rng(seed);
  return FusionParams(cx, cz, d, modes, rng);
}

Array rand_drivers(int h, int w, int cx, uint64_t seed) {
  InitRng rng(seed);
  return rng.uniform_fan_in({h, w, cx}, 1);
}

}  // namespace

TEST_CASE("encode_drivers shapes and validation") {
  FusionParams p = make_params();
  Array drv = rand_drivers(4, 4, 3, 2);
  Array z = encode_drivers(nullptr, drv, p);
  CHECK(z.shape == std::vector<int>{4, 4, 4});

  Array bad = rand_drivers(4, 4, 5, 2);
  CHECK_THROWS_AS(encode_drivers(nullptr, bad, p), ShapeError);
  Array rank2 = zeros({4, 4});
  CHECK_THROWS_AS(encode_drivers(nullptr, rank2, p), ShapeError);
}

TEST_CASE("climate attention produces three D-wide gates") {
  FusionParams p = make_params();
  Vec idx = testutil::vec({0.3, -0.7});
  auto a = climate_attention(nullptr, idx, p);
  for (const Array& g : a) CHECK(g.shape == std::vector<int>{1, 4});

  // distinct branches: the three gates differ
  CHECK(a[0].data != a[1].data);
  CHECK(a[1].data != a[2].data);
}

TEST_CASE("sigmoid_gate keeps gates in (0,1)") {
  FusionParams p = make_params();
  p.sigmoid_gate = true;
  auto a = climate_attention(nullptr, testutil::vec({2.0, -3.0}), p);
  for (const Array& g : a)
    for (int i = 0; i < g.size(); ++i) {
      CHECK(g.data[i] > 0.0);
      CHECK(g.data[i] < 1.0);
    }
}

TEST_CASE("gated_fuse with zero gates is the identity") {
  FusionParams p = make_params();
  Array z = rand_drivers(4, 4, 4, 3);
  std::array<Array, 3> a{zeros({1, 4}), zeros({1, 4}), zeros({1, 4})};
  Array h = gated_fuse(nullptr, z, a, p);
  CHECK((h.data - z.data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gated_fuse responds to each branch gate") {
  FusionParams p = make_params();
  Array z = rand_drivers(4, 4, 4, 3);
  for (int branch = 0; branch < 3; ++branch) {
    std::array<Array, 3> a{zeros({1, 4}), zeros({1, 4}), zeros({1, 4})};
    a[static_cast<size_t>(branch)] = ones({1, 4});
    Array h = gated_fuse(nullptr, z, a, p);
    CHECK((h.data - z.data).cwiseAbs().maxCoeff() > 1e-8);
  }
}

TEST_CASE("fusion pipeline gradients match finite differences") {
  FusionParams p = make_params(3, 2, 4, 2, 5);
  Array drv = rand_drivers(4, 4, 3, 6);
  Vec idx = testutil::vec({0.4, -0.2});
  std::vector<Parameter*> params;
  p.collect(params);

  auto f = [&](Tape* t) {
    Array z = encode_drivers(t, drv, p);
    auto a = climate_attention(t, idx, p);
    Array h = gated_fuse(t, z, a, p);
    return scale(sum(mul(h, h)), 1.0 / h.size());
  };
  CHECK(grad_check(f, params) < 1e-4);
}

TEST_CASE("fusion gradients with sigmoid gate") {
  FusionParams p = make_params(3, 2, 4, 2, 7);
  p.sigmoid_gate = true;
  Array drv = rand_drivers(2, 4, 3, 8);
  Vec idx = testutil::vec({-0.5, 0.9});
  std::vector<Parameter*> params;
  p.collect(params);

  auto f = [&](Tape* t) {
    Array z = encode_drivers(t, drv, p);
    auto a = climate_attention(t, idx, p);
    Array h = gated_fuse(t, z, a, p);
    return scale(sum(mul(h, h)), 1.0 / h.size());
  };
  CHECK(grad_check(f, params) < 1e-4);
}
