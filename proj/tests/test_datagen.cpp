#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "grad_check.hpp"
#include "higo/cube_io.hpp"
#include "higo/datagen.hpp"

using namespace higo;
namespace fs = std::filesystem;

namespace {

GenConfig small_cfg() {
  GenConfig cfg;
  cfg.h = 8;
  cfg.w = 8;
  cfg.steps = 40;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  Dataset a = generate_synthetic(small_cfg(), 4);
  Dataset b = generate_synthetic(small_cfg(), 4);
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t t = 0; t < a.samples.size(); ++t) {
    CHECK(a.samples[t].drivers.data == b.samples[t].drivers.data);
    CHECK(a.samples[t].indices == b.samples[t].indices);
    CHECK(a.samples[t].ba == b.samples[t].ba);
  }

  GenConfig other = small_cfg();
  other.seed = 8;
  Dataset c = generate_synthetic(other, 4);
  bool any_diff = false;
  for (size_t t = 0; t < a.samples.size() && !any_diff; ++t)
    any_diff = a.samples[t].ba != c.samples[t].ba;
  CHECK(any_diff);
}

TEST_CASE("zero ignition rate produces no fire") {
  GenConfig cfg = small_cfg();
  cfg.ignition_rate = 0.0;
  Dataset ds = generate_synthetic(cfg, 4);
  for (const CubeSample& s : ds.samples)
    for (uint8_t c : s.ba) CHECK(c == 0);
}

TEST_CASE("long run hits the target fire prevalence within 3x") {
  GenConfig cfg;
  cfg.steps = 200;
  cfg.seed = 0;
  Dataset ds = generate_synthetic(cfg, 4);
  double burning = 0, total = 0;
  for (const CubeSample& s : ds.samples)
    for (uint8_t c : s.ba) {
      burning += c > 0 ? 1.0 : 0.0;
      total += 1.0;
    }
  double frac = burning / total;
  CHECK(frac > cfg.target_fire_fraction / 3.0);
  CHECK(frac < cfg.target_fire_fraction * 3.0);
}

TEST_CASE("log1p transform") {
  Array f = testutil::arr({2, 2}, {0.0, 1.0, std::exp(1.0) - 1.0, 3.0});
  Array out = log1p_transform(f);
  CHECK(out.data[0] == 0.0);
  CHECK(out.data[1] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(out.data[2] == doctest::Approx(1.0).epsilon(1e-12));
  Array neg = testutil::arr({1, 1}, {-0.5});
  CHECK_THROWS_AS(log1p_transform(neg), ValueError);
}

TEST_CASE("fit_quantizer quantiles") {
  QuantizerSpec spec = fit_quantizer({0.0, 1.0, 2.0, 3.0, 4.0}, 3);
  REQUIRE(spec.boundaries.size() == 1);
  CHECK(spec.boundaries[0] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK_FALSE(spec.fallback_equal_width);

  QuantizerSpec two = fit_quantizer({0.0, 0.7}, 2);
  CHECK(two.boundaries.empty());

  CHECK_THROWS_AS(fit_quantizer({0.0, 0.0}, 3), ValueError);   // no nonzero values
  CHECK_THROWS_AS(fit_quantizer({1.0, 2.0}, 1), ConfigError);  // K too small
  CHECK_THROWS_AS(fit_quantizer({-1.0, 2.0}, 3), ValueError);  // negative value
}

TEST_CASE("fit_quantizer falls back to equal width on degenerate data") {
  QuantizerSpec spec = fit_quantizer({0.0, 5.0, 5.0, 5.0}, 4);
  CHECK(spec.fallback_equal_width);
  REQUIRE(spec.boundaries.size() == 2);
  CHECK(spec.boundaries[1] > spec.boundaries[0]);  // nudged strictly increasing
}

TEST_CASE("quantize rules") {
  QuantizerSpec spec;
  spec.k = 4;
  spec.boundaries = {1.0, 2.0};
  CHECK(quantize(0.0, spec) == 0);
  CHECK(quantize(0.5, spec) == 1);
  CHECK(quantize(1.0, spec) == 1);  // boundary values stay in the lower class
  CHECK(quantize(1.5, spec) == 2);
  CHECK(quantize(99.0, spec) == 3);  // clamped to K-1
  CHECK_THROWS_AS(quantize(-0.1, spec), ValueError);
}

TEST_CASE("coarsen_block_mean") {
  Array f = testutil::arr({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Array c = coarsen_block_mean(f, 2);
  REQUIRE(c.shape == std::vector<int>{1, 1});
  CHECK(c.data[0] == doctest::Approx(2.5).epsilon(1e-12));

  Array f4 = zeros({4, 4});
  for (int i = 0; i < 16; ++i) f4.data[i] = i;
  Array c2 = coarsen_block_mean(f4, 2);
  CHECK(c2.data.mean() == doctest::Approx(f4.data.mean()).epsilon(1e-12));
  CHECK(coarsen_block_mean(f4, 1).data == f4.data);
  CHECK_THROWS_AS(coarsen_block_mean(f4, 3), ShapeError);
}

TEST_CASE("chronological split") {
  Dataset ds = generate_synthetic(small_cfg(), 3);
  Split sp = split_chronological(ds, 0.8);
  CHECK(sp.train.samples.size() == 32);
  CHECK(sp.test.samples.size() == 8);
  CHECK(sp.train.samples.back().time_index < sp.test.samples.front().time_index);
  CHECK(sp.train.k == ds.k);
  CHECK_THROWS_AS(split_chronological(ds, 0.0), ValueError);
}

TEST_CASE("norm stats standardize the training drivers") {
  Dataset ds = generate_synthetic(small_cfg(), 3);
  NormStats st = fit_norm_stats(ds);
  REQUIRE(static_cast<int>(st.mean.size()) == ds.cx);
  // Recompute the mean/std of the normalized data: should be ~N(0,1).
  std::vector<double> mean(static_cast<size_t>(ds.cx), 0.0);
  double n_cells = 0;
  for (const CubeSample& s : ds.samples) {
    Array norm = normalize_drivers(s.drivers, st);
    int cells = s.drivers.dim(0) * s.drivers.dim(1);
    for (int i = 0; i < cells; ++i)
      for (int c = 0; c < ds.cx; ++c) mean[static_cast<size_t>(c)] += norm.data[i * ds.cx + c];
    n_cells += cells;
  }
  for (double m : mean) CHECK(std::abs(m / n_cells) < 1e-9);

  NormStats bad = st;
  bad.mean.pop_back();
  bad.std.pop_back();
  CHECK_THROWS_AS(normalize_drivers(ds.samples[0].drivers, bad), ShapeError);
}

TEST_CASE("driver group lookup") {
  CHECK(channel_group("lst") == "land");
  CHECK(channel_group("moisture") == "land");
  CHECK(channel_group("fuel") == "land");
  CHECK(channel_group("sst") == "ocean");
  CHECK(channel_group("pop_dens") == "anthropy");
  CHECK(channel_group("mslp") == "atmosphere");
  auto groups = driver_groups();
  CHECK(std::find(groups.begin(), groups.end(), "indices") != groups.end());
}

TEST_CASE("cube file round trip") {
  Dataset ds = generate_synthetic(small_cfg(), 4);
  fs::path path = fs::temp_directory_path() / "higo_test_cube.hgc1";
  write_cube(path.string(), ds);
  Dataset back = read_cube(path.string());
  CHECK(back.h == ds.h);
  CHECK(back.w == ds.w);
  CHECK(back.cx == ds.cx);
  CHECK(back.cz == ds.cz);
  CHECK(back.k == ds.k);
  CHECK(back.channel_names == ds.channel_names);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (size_t t = 0; t < ds.samples.size(); ++t) {
    CHECK(back.samples[t].drivers.data == ds.samples[t].drivers.data);
    CHECK(back.samples[t].indices == ds.samples[t].indices);
    CHECK(back.samples[t].ba == ds.samples[t].ba);
    CHECK(back.samples[t].time_index == ds.samples[t].time_index);
  }
  fs::remove(path);
}

TEST_CASE("cube file corruption is detected") {
  Dataset ds = generate_synthetic(small_cfg(), 4);
  fs::path path = fs::temp_directory_path() / "higo_test_cube_bad.hgc1";
  write_cube(path.string(), ds);

  SUBCASE("corrupt magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(read_cube(path.string()), IoError);
  }
  SUBCASE("payload bit flip fails the checksum") {
    auto size = fs::file_size(path);
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(static_cast<std::streamoff>(size / 2));
    char c = static_cast<char>(f.get());
    f.seekp(static_cast<std::streamoff>(size / 2));
    f.put(static_cast<char>(c ^ 0x1));
    f.close();
    CHECK_THROWS_AS(read_cube(path.string()), IoError);
  }
  SUBCASE("truncation") {
    fs::resize_file(path, fs::file_size(path) - 16);
    CHECK_THROWS_AS(read_cube(path.string()), IoError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_cube((path.string() + ".nope")), IoError);
  }
  fs::remove(path);
}

TEST_CASE("empty dataset round-trips") {
  Dataset ds;
  ds.h = 2;
  ds.w = 2;
  ds.cx = 4;
  ds.cz = 1;
  ds.k = 2;
  ds.channel_names = default_channel_names(4);
  fs::path path = fs::temp_directory_path() / "higo_test_cube_empty.hgc1";
  write_cube(path.string(), ds);
  Dataset back = read_cube(path.string());
  CHECK(back.samples.empty());
  CHECK(back.h == 2);
  CHECK(back.k == 2);
  CHECK(back.channel_names == ds.channel_names);
  fs::remove(path);
}
