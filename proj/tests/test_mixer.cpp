#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "higo/mixer.hpp"

using namespace higo;
using testutil::grad_check;

namespace {

MixerParams make_params(int d, uint64_t seed = 1) {
  InitRng rng(seed);
  return MixerParams(d, rng);
}

}  // namespace

TEST_CASE("encode_ba scales classes to [0,1] before projecting") {
  MixerParams p = make_params(3);
  std::vector<uint8_t> ba{0, 1, 2, 3};
  Array b = encode_ba(nullptr, ba, 2, 2, 4, p);
  CHECK(b.shape == std::vector<int>{2, 2, 3});

  // projection of scaled input c/(K-1): cell with class 3 equals w + bias
  const Vec& w = p.ba_proj.w.value.data;
  const Vec& bias = p.ba_proj.b.value.data;
  for (int c = 0; c < 3; ++c) {
    CHECK(b.data[3 * 3 + c] == doctest::Approx(w[c] + bias[c]).epsilon(1e-12));
    CHECK(b.data[0 * 3 + c] == doctest::Approx(bias[c]).epsilon(1e-12));
    CHECK(b.data[1 * 3 + c] ==
          doctest::Approx(w[c] / 3.0 + bias[c]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(encode_ba(nullptr, ba, 3, 3, 4, p), ShapeError);
  std::vector<uint8_t> bad{0, 5, 0, 0};
  CHECK_THROWS_AS(encode_ba(nullptr, bad, 2, 2, 4, p), ValueError);
}

TEST_CASE("single-cell attention passes the value straight through") {
  MixerParams p = make_params(4);
  InitRng rng(3);
  Array hf = rng.uniform_fan_in({1, 1, 4}, 1);
  Array bh = rng.uniform_fan_in({1, 1, 4}, 1);
  Array out = cross_attention(nullptr, hf, bh, p);
  // with one key, softmax is 1 and the output is exactly v = bhat * Wv
  Array v = matmul(reshape(bh, {1, 4}), p.wv.value);
  CHECK((out.data - v.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero query weights give uniform attention") {
  MixerParams p = make_params(4);
  p.wq.value.data.setZero();
  InitRng rng(4);
  Array hf = rng.uniform_fan_in({2, 3, 4}, 1);
  Array bh = rng.uniform_fan_in({2, 3, 4}, 1);
  Array out = cross_attention(nullptr, hf, bh, p);
  // logits all zero -> every row of the output is the column mean of v
  Array v = matmul(reshape(bh, {6, 4}), p.wv.value);
  Vec mean = v.mat().colwise().mean().transpose();
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 4; ++c)
      CHECK(out.data[i * 4 + c] == doctest::Approx(mean[c]).epsilon(1e-12));
}

TEST_CASE("two-cell scalar attention matches the hand formula") {
  MixerParams p = make_params(1);
  p.wq.value.data[0] = 1.0;
  p.wk.value.data[0] = 1.0;
  p.wv.value.data[0] = 2.0;
  Array hf = testutil::arr({2, 1, 1}, {1.0, -1.0});
  Array bh = testutil::arr({2, 1, 1}, {0.5, 1.5});
  Array out = cross_attention(nullptr, hf, bh, p);
  for (int i = 0; i < 2; ++i) {
    double q = hf.data[i];
    double l0 = q * 0.5, l1 = q * 1.5;  // D=1 so the 1/sqrt(D) factor is 1
    double a0 = std::exp(l0) / (std::exp(l0) + std::exp(l1));
    double expect = a0 * (2.0 * 0.5) + (1 - a0) * (2.0 * 1.5);
    CHECK(out.data[i] == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("mix is equivariant to a shared cell permutation") {
  MixerParams p = make_params(4);
  InitRng rng(5);
  Array hf = rng.uniform_fan_in({2, 2, 4}, 1);
  Array bh = rng.uniform_fan_in({2, 2, 4}, 1);
  Array out = mix(nullptr, hf, bh, p);

  std::vector<int> perm{2, 0, 3, 1};
  Array hf2 = gather_rows(reshape(hf, {4, 4}), perm);
  Array bh2 = gather_rows(reshape(bh, {4, 4}), perm);
  Array out2 = mix(nullptr, reshape(hf2, {2, 2, 4}), reshape(bh2, {2, 2, 4}), p);
  Array ref = gather_rows(reshape(out, {4, 4}), perm);
  CHECK((out2.data - ref.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mix residual source follows the ablation flag") {
  MixerParams p = make_params(4);
  InitRng rng(6);
  Array hf = rng.uniform_fan_in({2, 2, 4}, 1);
  Array bh = rng.uniform_fan_in({2, 2, 4}, 1);
  Array base = mix(nullptr, hf, bh, p);
  p.residual_drivers = true;
  Array alt = mix(nullptr, hf, bh, p);
  // switching the residual from bhat to hf shifts the output by hf - bhat
  Array diff = sub(alt, base);
  Array expect = sub(hf, bh);
  CHECK((diff.data - expect.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mixer gradients match finite differences") {
  MixerParams p = make_params(4, 9);
  std::vector<uint8_t> ba{0, 2, 1, 3};
  InitRng rng(10);
  Array drv_feat = rng.uniform_fan_in({2, 2, 4}, 1);
  std::vector<Parameter*> params;
  p.collect(params);

  auto f = [&](Tape* t) {
    Array hf = t ? t->input(drv_feat) : drv_feat;
    Array bh = encode_ba(t, ba, 2, 2, 4, p);
    Array x0 = mix(t, hf, bh, p);
    return scale(sum(mul(x0, x0)), 1.0 / x0.size());
  };
  CHECK(grad_check(f, params) < 1e-4);
}
