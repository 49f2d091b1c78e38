#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "grad_check.hpp"
#include "higo/trainer.hpp"

using namespace higo;
namespace fs = std::filesystem;

namespace {

Dataset tiny_dataset(int steps = 24, uint64_t seed = 0) {
  GenConfig gc;
  gc.h = 4;
  gc.w = 4;
  gc.steps = steps;
  gc.seed = seed;
  gc.target_fire_fraction = 0.1;  // denser fire so the tiny grid has positives
  return generate_synthetic(gc, 3);
}

TrainConfig tiny_config(int epochs = 2) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch = 4;
  cfg.lr = 1e-3;
  cfg.model.h = 4;
  cfg.model.w = 4;
  cfg.model.cx = 6;
  cfg.model.cz = 4;
  cfg.model.k = 3;
  cfg.model.d = 8;
  cfg.model.levels = 2;
  cfg.model.spectral_modes = 2;
  cfg.solver.rk4_steps_per_unit = 2;
  return cfg;
}

std::vector<Vec> snapshot(Model& m) {
  std::vector<Vec> out;
  for (Parameter* p : m.parameters()) out.push_back(p->value.data);
  return out;
}

}  // namespace

TEST_CASE("adamw hand example") {
  Parameter p("p", testutil::arr({1}, {1.0}));
  p.grad = testutil::vec({0.5});
  AdamWState st;
  adamw_step({&p}, st, 0.1);
  // first step: bias-corrected mhat = g, vhat = g^2, so the update is
  // -lr * g / (|g| + eps) ~= -lr * sign(g)
  CHECK(p.value.data[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(st.step == 1);

  // pure decay: zero gradient shrinks the weight by lr * wd exactly
  Parameter q("q", testutil::arr({1}, {2.0}));
  q.grad = testutil::vec({0.0});
  AdamWState st2;
  adamw_step({&q}, st2, 0.1, 0.9, 0.999, 1e-8, 0.01);
  CHECK(q.value.data[0] == doctest::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-12));
}

TEST_CASE("adamw converges on a quadratic") {
  Parameter p("p", testutil::arr({2}, {3.0, -2.0}));
  AdamWState st;
  for (int i = 0; i < 500; ++i) {
    p.grad = p.value.data;  // d/dp (0.5 p^2)
    adamw_step({&p}, st, 0.05);
  }
  CHECK(p.value.data.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_lr(0, 100, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_lr(100, 100, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, 1.0, 0.2) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_lr(101, 100, 1.0), ValueError);
  CHECK_THROWS_AS(cosine_lr(-1, 100, 1.0), ValueError);
}

TEST_CASE("driver masking") {
  Dataset ds = tiny_dataset();
  const CubeSample& s = ds.samples[0];

  CubeSample same = mask_drivers(s, {}, ds.channel_names);
  CHECK(same.drivers.data == s.drivers.data);
  CHECK(same.indices == s.indices);

  CubeSample landless = mask_drivers(s, {"land"}, ds.channel_names);
  for (int cell = 0; cell < 16; ++cell)
    for (int c = 0; c < ds.cx; ++c) {
      double v = landless.drivers.data[cell * ds.cx + c];
      if (channel_group(ds.channel_names[static_cast<size_t>(c)]) == "land")
        CHECK(v == 0.0);
      else
        CHECK(v == s.drivers.data[cell * ds.cx + c]);
    }

  CubeSample no_idx = mask_drivers(s, {"indices"}, ds.channel_names);
  CHECK(no_idx.indices.cwiseAbs().maxCoeff() == 0.0);
  CHECK(no_idx.drivers.data == s.drivers.data);

  std::vector<std::string> all = driver_groups();
  CubeSample empty = mask_drivers(s, all, ds.channel_names);
  CHECK(empty.drivers.data.cwiseAbs().maxCoeff() == 0.0);
  CHECK(empty.indices.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(mask_drivers(s, {"plasma"}, ds.channel_names), ConfigError);
}

TEST_CASE("two-epoch training smoke run") {
  Dataset ds = tiny_dataset();
  TrainState state(tiny_config(2));
  train(state, ds);
  CHECK(state.epochs_done == 2);
  REQUIRE(state.history.size() == 2);
  for (const EpochRecord& r : state.history) {
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss > 0.0);
  }
  CHECK(state.best_epoch >= 0);
  CHECK_FALSE(state.best_params.empty());
}

TEST_CASE("training is deterministic in the seed") {
  Dataset ds = tiny_dataset();
  TrainState a(tiny_config(2));
  TrainState b(tiny_config(2));
  train(a, ds);
  train(b, ds);
  auto pa = snapshot(a.model), pb = snapshot(b.model);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
  CHECK(a.history[1].loss == b.history[1].loss);

  TrainConfig seeded = tiny_config(2);
  seeded.seed = 99;
  seeded.model.h = 4;
  TrainState c(seeded);
  train(c, ds);
  CHECK(c.history[1].loss != a.history[1].loss);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Dataset ds = tiny_dataset();
  TrainState state(tiny_config(2));
  train(state, ds);

  fs::path path = fs::temp_directory_path() / "higo_test_ckpt.hgk1";
  save_checkpoint(path.string(), state);
  TrainState back = load_checkpoint(path.string());

  CHECK(back.epochs_done == state.epochs_done);
  CHECK(back.best_epoch == state.best_epoch);
  CHECK(back.best_val_auprc == state.best_val_auprc);
  CHECK(back.rng_state == state.rng_state);
  CHECK(back.norm.mean == state.norm.mean);
  CHECK(back.norm.std == state.norm.std);
  CHECK(back.class_weights == state.class_weights);
  REQUIRE(back.history.size() == state.history.size());
  for (size_t i = 0; i < state.history.size(); ++i)
    CHECK(back.history[i].loss == state.history[i].loss);

  auto pa = snapshot(state.model), pb = snapshot(back.model);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
  REQUIRE(back.opt.m.size() == state.opt.m.size());
  for (size_t i = 0; i < state.opt.m.size(); ++i) {
    CHECK(back.opt.m[i] == state.opt.m[i]);
    CHECK(back.opt.v[i] == state.opt.v[i]);
  }
  CHECK(back.opt.step == state.opt.step);

  // corruption is detected
  fs::resize_file(path, fs::file_size(path) - 9);
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
}

TEST_CASE("resumed training equals the uninterrupted run") {
  Dataset ds = tiny_dataset();

  TrainState full(tiny_config(4));
  train(full, ds);

  // same 4-epoch configuration, interrupted after 2 epochs
  TrainState half(tiny_config(4));
  train(half, ds, 2);
  fs::path path = fs::temp_directory_path() / "higo_test_resume.hgk1";
  save_checkpoint(path.string(), half);

  TrainState resumed = load_checkpoint(path.string());
  train(resumed, ds);
  fs::remove(path);

  CHECK(resumed.epochs_done == 4);
  auto pa = snapshot(full.model), pb = snapshot(resumed.model);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
  REQUIRE(resumed.history.size() == full.history.size());
  for (size_t i = 0; i < full.history.size(); ++i) {
    CHECK(resumed.history[i].loss == full.history[i].loss);
    CHECK(resumed.history[i].val_auprc == full.history[i].val_auprc);
  }
}

TEST_CASE("evaluate emits the expected metric rows") {
  Dataset ds = tiny_dataset();
  TrainState state(tiny_config(1));
  train(state, ds);
  state.load_best();

  Split sp = split_chronological(ds, 0.8);
  EvalOptions opts;
  opts.persistence_baseline = true;
  auto rows = evaluate(state.model, sp.test, state.norm, {8.0}, state.cfg.solver, opts);

  bool has_auprc = false, has_f1 = false, has_persist = false;
  for (const MetricRow& r : rows) {
    CHECK(r.horizon_days == 8.0);
    if (r.metric == "auprc") has_auprc = true;
    if (r.metric == "m_f1") has_f1 = true;
    if (r.metric == "persistence_auprc") has_persist = true;
    // AUPRC is NaN by design when the window has no positive labels
    if (r.metric.find("auprc") == std::string::npos) CHECK(std::isfinite(r.value));
  }
  CHECK(has_auprc);
  CHECK(has_f1);
  CHECK(has_persist);
}
