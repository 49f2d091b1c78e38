#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "higo/dynamics.hpp"

using namespace higo;
using testutil::grad_check;

namespace {

Array rand_state(int n, int d, uint64_t seed) {
  InitRng rng(seed);
  return rng.uniform_fan_in({n, d}, 1);
}

}  // namespace

TEST_CASE("alpha weights sum to one per neighborhood") {
  Hierarchy hier = build_hierarchy(3, 3, 1);
  const LevelGraph& g = hier.levels[0];
  InitRng rng(1);
  LevelDynamicsParams p(1, 4, rng);
  Array state = rand_state(9, 4, 2);

  // recompute alpha exactly as admp does and verify the segment sums
  Array xi = gather_rows(state, g.edge_dst);
  Array xj = gather_rows(state, g.edge_src);
  Vec ef = Vec::Ones(g.num_edges());
  Array feat = concat_cols({xi, xj, from_vec({g.num_edges(), 1}, ef)});
  Array alpha = segment_softmax(p.edge_score.apply(nullptr, feat), g.edge_dst, 9);
  Array sums = segment_sum(alpha, g.edge_dst, 9);
  for (int i = 0; i < 9; ++i) CHECK(sums.data[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("symmetric states collapse adaptive and mean modes") {
  // constant state: every edge looks identical, so the softmax is uniform
  // and the two modes agree exactly
  Hierarchy hier = build_hierarchy(4, 4, 1);
  InitRng rng(3);
  LevelDynamicsParams p(1, 4, rng);
  Array state = full({16, 4}, 0.7);
  Array ma = admp(nullptr, state, hier.levels[0], p, MpMode::adaptive);
  Array mm = admp(nullptr, state, hier.levels[0], p, MpMode::mean);
  CHECK((ma.data - mm.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("modes differ on asymmetric states") {
  Hierarchy hier = build_hierarchy(4, 4, 1);
  InitRng rng(4);
  LevelDynamicsParams p(1, 4, rng);
  Array state = rand_state(16, 4, 5);
  Array ma = admp(nullptr, state, hier.levels[0], p, MpMode::adaptive);
  Array mm = admp(nullptr, state, hier.levels[0], p, MpMode::mean);
  CHECK((ma.data - mm.data).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("two-node mean aggregation matches the hand trace") {
  // 1x2 grid: two nodes, each with exactly one incoming edge, so the
  // aggregated message is just the message on that edge
  Hierarchy hier = build_hierarchy(1, 2, 1);
  const LevelGraph& g = hier.levels[0];
  REQUIRE(g.num_edges() == 2);
  InitRng rng(6);
  LevelDynamicsParams p(1, 2, rng);
  Array state = testutil::arr({2, 2}, {0.1, 0.2, 0.3, 0.4});

  Array m = admp(nullptr, state, g, p, MpMode::mean);
  for (int node = 0; node < 2; ++node) {
    int other = 1 - node;
    Vec feat(5);
    feat << state.data[node * 2], state.data[node * 2 + 1], state.data[other * 2],
        state.data[other * 2 + 1], 1.0;
    Array msg = p.edge_msg.apply(nullptr, from_vec({1, 5}, feat));
    CHECK(std::abs(m.data[node * 2] - msg.data[0]) < 1e-12);
    CHECK(std::abs(m.data[node * 2 + 1] - msg.data[1]) < 1e-12);
  }
}

TEST_CASE("admp counts isolated nodes and rejects bad shapes") {
  Hierarchy hier = build_hierarchy(2, 2, 1);
  InitRng rng(7);
  LevelDynamicsParams p(1, 2, rng);
  int isolated = -1;
  admp(nullptr, rand_state(4, 2, 8), hier.levels[0], p, MpMode::adaptive, &isolated);
  CHECK(isolated == 0);
  CHECK_THROWS_AS(admp(nullptr, rand_state(5, 2, 8), hier.levels[0], p, MpMode::adaptive),
                  ShapeError);
}

TEST_CASE("downsample blend weights are a convex combination") {
  Hierarchy hier = build_hierarchy(4, 4, 2);
  InitRng rng(9);
  TransitionParams p(1, 3, rng);
  Array child = rand_state(16, 3, 10);
  DownResult dr = downsample(nullptr, child, hier, 0, p);
  REQUIRE(dr.parent.shape == std::vector<int>{4, 3});
  REQUIRE(dr.beta.shape == std::vector<int>{16, 1});

  // each parent lies inside the convex hull of its children, per channel
  for (int pi = 0; pi < 4; ++pi) {
    const auto& kids = hier.children[0][static_cast<size_t>(pi)];
    for (int c = 0; c < 3; ++c) {
      double lo = 1e30, hi = -1e30, bsum = 0;
      for (int k : kids) {
        lo = std::min(lo, child.data[k * 3 + c]);
        hi = std::max(hi, child.data[k * 3 + c]);
      }
      double v = dr.parent.data[pi * 3 + c];
      CHECK(v >= lo - 1e-12);
      CHECK(v <= hi + 1e-12);
      for (int k : kids) bsum += dr.beta.data[k];
      CHECK(bsum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  CHECK_THROWS_AS(downsample(nullptr, child, hier, 1, p), ConfigError);
}

TEST_CASE("identical children reproduce their value in the parent") {
  Hierarchy hier = build_hierarchy(2, 2, 2);
  InitRng rng(11);
  TransitionParams p(1, 2, rng);
  Array child = full({4, 2}, 0.5);
  DownResult dr = downsample(nullptr, child, hier, 0, p);
  // any convex combination of identical children equals the child value
  for (int c = 0; c < 2; ++c) CHECK(dr.parent.data[c] == doctest::Approx(0.5).epsilon(1e-12));
  double bsum = 0;
  for (int i = 0; i < 4; ++i) bsum += dr.beta.data[i];
  CHECK(bsum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("upsample limit cases") {
  Hierarchy hier = build_hierarchy(2, 2, 2);
  InitRng rng(12);
  TransitionParams p(1, 3, rng);
  Array child = rand_state(4, 3, 13);
  Array parent = rand_state(1, 3, 14);

  // beta = 0 keeps the child, beta = 1 copies the parent (then layer norm)
  Array ln_g = p.up_ln_g.value;
  Array ln_b = p.up_ln_b.value;
  Array u0 = upsample(nullptr, child, parent, zeros({4, 1}), hier, 0, p);
  Array want0 = layer_norm(child, ln_g, ln_b);
  CHECK((u0.data - want0.data).cwiseAbs().maxCoeff() < 1e-12);

  Array u1 = upsample(nullptr, child, parent, ones({4, 1}), hier, 0, p);
  Array want1 = layer_norm(gather_rows(parent, {0, 0, 0, 0}), ln_g, ln_b);
  CHECK((u1.data - want1.data).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(upsample(nullptr, child, parent, zeros({3, 1}), hier, 0, p), ValueError);
}

TEST_CASE("zero derivative weights freeze the state") {
  Hierarchy hier = build_hierarchy(2, 2, 1);
  InitRng rng(15);
  LevelDynamicsParams p(1, 2, rng);
  p.node_deriv.l2.w.value.data.setZero();
  p.node_deriv.l2.b.value.data.setZero();
  Array state = rand_state(4, 2, 16);
  Array d = level_derivative(nullptr, state, hier.levels[0], p, MpMode::adaptive);
  CHECK(d.data.cwiseAbs().maxCoeff() == 0.0);

  DynamicsParams dp(1, 2, rng);
  dp.levels[0] = p;
  SolverConfig cfg;
  EvolveResult ev = evolve(nullptr, state, hier, dp, 0, 1, cfg, MpMode::adaptive);
  // L = 1 and a frozen field: evolve returns the initial state untouched
  CHECK((ev.fine.data - state.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("frozen two-level evolve is a pure down/up round trip") {
  InitRng rng(17);
  Hierarchy hier = build_hierarchy(4, 4, 2);
  DynamicsParams dp(2, 4, rng);
  for (auto& lv : dp.levels) {
    lv.node_deriv.l2.w.value.data.setZero();
    lv.node_deriv.l2.b.value.data.setZero();
  }
  Array state = rand_state(16, 4, 18);
  SolverConfig cfg;
  EvolveResult ev = evolve(nullptr, state, hier, dp, 0, 1, cfg, MpMode::adaptive);

  DownResult dr = downsample(nullptr, state, hier, 0, dp.transitions[0]);
  Array want = upsample(nullptr, state, dr.parent, dr.beta, hier, 0, dp.transitions[0]);
  CHECK((ev.fine.data - want.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("t1 == t0 skips the integration") {
  InitRng rng(19);
  Hierarchy hier = build_hierarchy(2, 2, 1);
  DynamicsParams dp(1, 3, rng);
  Array state = rand_state(4, 3, 20);
  SolverConfig cfg;
  EvolveResult ev = evolve(nullptr, state, hier, dp, 2.0, 2.0, cfg, MpMode::adaptive);
  CHECK(ev.fine.data == state.data);
}

TEST_CASE("taped single-level evolve matches the detached rk4 integration") {
  InitRng rng(21);
  Hierarchy hier = build_hierarchy(2, 2, 1);
  DynamicsParams dp(1, 3, rng);
  Array state = rand_state(4, 3, 22);
  SolverConfig cfg;
  cfg.rk4_steps_per_unit = 2;

  Tape tape;
  EvolveResult taped = evolve(&tape, tape.input(state), hier, dp, 0, 1, cfg, MpMode::adaptive);
  EvolveResult plain = evolve(nullptr, state, hier, dp, 0, 1, cfg, MpMode::adaptive);
  CHECK(taped.fine.data == plain.fine.data);
}

TEST_CASE("interior times are rejected on the tape but served detached") {
  InitRng rng(23);
  Hierarchy hier = build_hierarchy(2, 2, 1);
  DynamicsParams dp(1, 3, rng);
  Array state = rand_state(4, 3, 24);
  SolverConfig cfg;

  Tape tape;
  CHECK_THROWS_AS(
      evolve(&tape, tape.input(state), hier, dp, 0, 1, cfg, MpMode::adaptive, {0.5}),
      ConfigError);

  EvolveResult ev = evolve(nullptr, state, hier, dp, 0, 1, cfg, MpMode::adaptive, {0.0, 0.5});
  REQUIRE(ev.interior.size() == 2);
  // the t = t0 query reproduces the identity up-down round trip of x0
  EvolveResult at0 = evolve(nullptr, state, hier, dp, 0, 0, cfg, MpMode::adaptive);
  CHECK((ev.interior[0].data - at0.fine.data).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ev.interior[1].data - ev.fine.data).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("derivative field is Lipschitz-bounded near a reference state") {
  InitRng rng(25);
  Hierarchy hier = build_hierarchy(3, 3, 1);
  LevelDynamicsParams p(1, 4, rng);
  Array x = rand_state(9, 4, 26);
  Array f0 = level_derivative(nullptr, x, hier.levels[0], p, MpMode::adaptive);
  double worst = 0;
  for (int trial = 0; trial < 5; ++trial) {
    Array dx = rand_state(9, 4, 30 + static_cast<uint64_t>(trial));
    double eps = 1e-4;
    Array x2 = add(x, scale(dx, eps));
    Array f2 = level_derivative(nullptr, x2, hier.levels[0], p, MpMode::adaptive);
    double num = (f2.data - f0.data).norm();
    double den = (x2.data - x.data).norm();
    worst = std::max(worst, num / den);
  }
  CHECK(worst < 100.0);  // smooth nets at init: modest local Lipschitz constant
}

TEST_CASE("gradients through a two-level evolve match finite differences") {
  InitRng rng(27);
  Hierarchy hier = build_hierarchy(4, 4, 2);
  DynamicsParams dp(2, 4, rng);
  Array state = rand_state(16, 4, 28);
  SolverConfig cfg;
  cfg.rk4_steps_per_unit = 2;
  std::vector<Parameter*> params;
  dp.collect(params);

  auto f = [&](Tape* t) {
    Array x0 = t ? t->input(state) : state;
    EvolveResult ev = evolve(t, x0, hier, dp, 0, 1, cfg, MpMode::adaptive);
    return scale(sum(mul(ev.fine, ev.fine)), 1.0 / ev.fine.size());
  };
  CHECK(grad_check(f, params, 4) < 1e-3);
}
