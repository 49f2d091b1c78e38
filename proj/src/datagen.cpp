#include "higo/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <random>

namespace higo {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

float as_f32(double x) { return static_cast<float>(x); }

// A smooth random field: a handful of low-wavenumber spatial modes whose
// phases drift slowly in time.
struct SmoothField {
  struct Mode {
    double amp, kx, ky, phase, omega;
  };
  std::vector<Mode> modes;

  SmoothField(std::mt19937_64& rng, int n_modes, double amp_scale) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> kdist(0, 3);
    for (int i = 0; i < n_modes; ++i) {
      Mode m;
      m.amp = amp_scale * (0.4 + 0.6 * u01(rng)) / n_modes * 2.0;
      m.kx = kdist(rng);
      m.ky = kdist(rng);
      if (m.kx == 0 && m.ky == 0) m.kx = 1;
      m.phase = 2.0 * std::numbers::pi * u01(rng);
      m.omega = 0.02 + 0.06 * u01(rng);
      modes.push_back(m);
    }
  }

  double at(int i, int j, int h, int w, double t) const {
    double v = 0;
    for (const Mode& m : modes)
      v += m.amp * std::cos(2.0 * std::numbers::pi *
                                (m.kx * static_cast<double>(j) / w +
                                 m.ky * static_cast<double>(i) / h) +
                            m.phase + m.omega * t);
    return v;
  }
};

}  // namespace

std::vector<std::string> default_channel_names(int cx) {
  std::vector<std::string> names = {"lst", "moisture", "fuel", "sst", "mslp", "pop_dens"};
  if (cx < static_cast<int>(names.size())) names.resize(static_cast<size_t>(cx));
  for (int i = static_cast<int>(names.size()); i < cx; ++i)
    names.push_back("aux" + std::to_string(i));
  return names;
}

std::vector<std::string> driver_groups() {
  return {"land", "ocean", "atmosphere", "anthropy", "indices"};
}

std::string channel_group(const std::string& name) {
  if (name == "lst" || name == "moisture" || name == "fuel" || name == "ndvi" || name == "swvl1")
    return "land";
  if (name == "sst") return "ocean";
  if (name == "pop_dens") return "anthropy";
  return "atmosphere";
}

RawCube generate_raw(const GenConfig& cfg) {
  if (cfg.steps < 1) throw ConfigError("generate: steps must be >= 1");
  if (cfg.cx < 4) throw ConfigError("generate: need at least 4 driver channels");
  if (cfg.cz < 1) throw ConfigError("generate: need at least 1 climate index");
  const int h = cfg.h, w = cfg.w, n = h * w;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // One smooth field per channel except fuel, which is dynamic state.
  std::vector<SmoothField> fields;
  for (int c = 0; c < cfg.cx; ++c) fields.emplace_back(rng, 5, 1.0);

  // Climate index periods, in 8-day steps.
  std::vector<double> periods, iphase;
  for (int m = 0; m < cfg.cz; ++m) {
    periods.push_back(19.0 + 14.0 * m + 3.0 * u01(rng));
    iphase.push_back(2.0 * std::numbers::pi * u01(rng));
  }

  // Fire state.
  std::vector<double> fuel(static_cast<size_t>(n)), intensity(static_cast<size_t>(n), 0.0);
  SmoothField fuel_init(rng, 4, 1.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      fuel[static_cast<size_t>(i) * w + j] =
          std::clamp(0.6 + 0.3 * fuel_init.at(i, j, h, w, 0.0), 0.05, 1.0);

  // Spread-rule constants, tuned so that roughly the target fraction of
  // cells carries nonzero burned area each step.
  const double decay = 0.25, spread_c = 0.30, burn_rate = 0.85, regrow = 0.03;
  const double spark_p = 0.004 * cfg.ignition_rate * (cfg.target_fire_fraction / 0.02);

  RawCube cube;
  cube.h = h;
  cube.w = w;
  cube.cx = cfg.cx;
  cube.cz = cfg.cz;
  cube.channel_names = default_channel_names(cfg.cx);

  for (int t = 0; t < cfg.steps; ++t) {
    Vec z(cfg.cz);
    for (int m = 0; m < cfg.cz; ++m)
      z[m] = std::sin(2.0 * std::numbers::pi * t / periods[static_cast<size_t>(m)] +
                      iphase[static_cast<size_t>(m)]);

    // Driver snapshot; temperature and moisture are modulated by the
    // first two indices.
    Array drv = zeros({h, w, cfg.cx});
    std::vector<double> temp(static_cast<size_t>(n)), moist(static_cast<size_t>(n));
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        int cell = i * w + j;
        double tv = fields[0].at(i, j, h, w, t) + 0.5 * z[0];
        double mv = fields[1].at(i, j, h, w, t) + (cfg.cz > 1 ? 0.5 * z[1] : 0.0);
        temp[static_cast<size_t>(cell)] = tv;
        moist[static_cast<size_t>(cell)] = mv;
        for (int c = 0; c < cfg.cx; ++c) {
          double v;
          if (c == 0) v = tv;
          else if (c == 1) v = mv;
          else if (c == 2) v = fuel[static_cast<size_t>(cell)];
          else v = fields[static_cast<size_t>(c)].at(i, j, h, w, c == 5 ? 0.0 : t);
          drv.data[(static_cast<Eigen::Index>(cell)) * cfg.cx + c] = as_f32(v);
        }
      }

    // Advance the fire state and record this step's continuous burned area.
    std::vector<double> new_int(static_cast<size_t>(n));
    Vec ba = Vec::Zero(n);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        int cell = i * w + j;
        double risk = sigmoid(3.0 * temp[static_cast<size_t>(cell)] -
                              3.0 * moist[static_cast<size_t>(cell)] - 2.0) *
                      fuel[static_cast<size_t>(cell)];
        double spread = 0;
        if (i > 0) spread += intensity[static_cast<size_t>(cell - w)];
        if (i + 1 < h) spread += intensity[static_cast<size_t>(cell + w)];
        if (j > 0) spread += intensity[static_cast<size_t>(cell - 1)];
        if (j + 1 < w) spread += intensity[static_cast<size_t>(cell + 1)];
        double v = intensity[static_cast<size_t>(cell)] * decay + spread_c * spread * risk;
        if (cfg.ignition_rate > 0 && u01(rng) < spark_p * risk) v += 0.6;
        new_int[static_cast<size_t>(cell)] = std::clamp(v, 0.0, 1.0);
      }
    for (int cell = 0; cell < n; ++cell) {
      double consumed = burn_rate * new_int[static_cast<size_t>(cell)] *
                        fuel[static_cast<size_t>(cell)];
      if (consumed < 5e-3) consumed = 0.0;  // extinguish embers
      ba[cell] = static_cast<double>(as_f32(consumed));
      double f = fuel[static_cast<size_t>(cell)] - consumed;
      fuel[static_cast<size_t>(cell)] = std::clamp(f + regrow * f * (1.0 - f), 0.01, 1.0);
      intensity[static_cast<size_t>(cell)] =
          consumed == 0.0 ? new_int[static_cast<size_t>(cell)] * 0.5
                          : new_int[static_cast<size_t>(cell)];
    }

    for (int m = 0; m < cfg.cz; ++m) z[m] = static_cast<double>(as_f32(z[m]));
    cube.drivers.push_back(std::move(drv));
    cube.indices.push_back(std::move(z));
    cube.ba_continuous.push_back(std::move(ba));
  }
  return cube;
}

Dataset generate_synthetic(const GenConfig& cfg, int k, double train_fraction) {
  RawCube raw = generate_raw(cfg);
  int n_train = std::max(1, static_cast<int>(std::floor(raw.ba_continuous.size() * train_fraction)));
  std::vector<double> train_vals;
  for (int t = 0; t < n_train; ++t)
    for (Eigen::Index i = 0; i < raw.ba_continuous[static_cast<size_t>(t)].size(); ++i)
      train_vals.push_back(raw.ba_continuous[static_cast<size_t>(t)][i]);

  QuantizerSpec spec;
  bool any_fire = std::any_of(train_vals.begin(), train_vals.end(), [](double v) { return v > 0; });
  if (any_fire) {
    spec = fit_quantizer(train_vals, k);
  } else {
    spec.k = k;  // no-fire limit: everything lands in class 0
  }

  Dataset ds;
  ds.h = raw.h;
  ds.w = raw.w;
  ds.cx = raw.cx;
  ds.cz = raw.cz;
  ds.k = k;
  ds.channel_names = raw.channel_names;
  for (size_t t = 0; t < raw.ba_continuous.size(); ++t) {
    CubeSample s;
    s.drivers = std::move(raw.drivers[t]);
    s.indices = std::move(raw.indices[t]);
    s.time_index = static_cast<int>(t);
    const Vec& ba = raw.ba_continuous[t];
    s.ba.resize(static_cast<size_t>(ba.size()));
    for (Eigen::Index i = 0; i < ba.size(); ++i)
      s.ba[static_cast<size_t>(i)] = static_cast<uint8_t>(quantize(ba[i], spec));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Array log1p_transform(const Array& field) {
  Array out = zeros(field.shape);
  for (int i = 0; i < field.size(); ++i) {
    if (field.data[i] < 0) throw ValueError("log1p_transform: negative entry");
    out.data[i] = std::log1p(field.data[i]);
  }
  return out;
}

QuantizerSpec fit_quantizer(const std::vector<double>& training_ba, int k) {
  if (k < 2) throw ConfigError("fit_quantizer: K must be >= 2");
  std::vector<double> nz;
  for (double v : training_ba) {
    if (v < 0) throw ValueError("fit_quantizer: negative burned area");
    if (v > 0) nz.push_back(v);
  }
  if (nz.empty()) throw ValueError("fit_quantizer: no nonzero training values");
  std::sort(nz.begin(), nz.end());

  QuantizerSpec spec;
  spec.k = k;
  size_t distinct = 1;
  for (size_t i = 1; i < nz.size(); ++i)
    if (nz[i] != nz[i - 1]) ++distinct;

  if (static_cast<int>(distinct) < k - 1) {
    std::cerr << "fit_quantizer: only " << distinct
              << " distinct nonzero values; falling back to equal-width boundaries\n";
    spec.fallback_equal_width = true;
    double lo = nz.front(), hi = nz.back();
    for (int i = 1; i <= k - 2; ++i)
      spec.boundaries.push_back(lo + (hi - lo) * i / (k - 1));
  } else {
    // Equal-frequency quantiles of the nonzero values.
    for (int i = 1; i <= k - 2; ++i) {
      double pos = static_cast<double>(i) / (k - 1) * (static_cast<double>(nz.size()) - 1);
      size_t lo = static_cast<size_t>(std::floor(pos));
      double frac = pos - static_cast<double>(lo);
      double q = nz[lo];
      if (lo + 1 < nz.size()) q = nz[lo] * (1 - frac) + nz[lo + 1] * frac;
      spec.boundaries.push_back(q);
    }
  }
  // Degenerate ties can produce equal boundaries; nudge to keep them
  // strictly increasing.
  for (size_t i = 1; i < spec.boundaries.size(); ++i)
    if (spec.boundaries[i] <= spec.boundaries[i - 1])
      spec.boundaries[i] = std::nextafter(spec.boundaries[i - 1],
                                          std::numeric_limits<double>::infinity());
  return spec;
}

int quantize(double value, const QuantizerSpec& spec) {
  if (value < 0) throw ValueError("quantize: negative value");
  if (value == 0) return 0;
  int c = 1;
  for (double b : spec.boundaries)
    if (b < value) ++c;
  return std::min(c, spec.k - 1);
}

Array coarsen_block_mean(const Array& field, int factor) {
  if (field.rank() != 2) throw ShapeError("coarsen_block_mean: expected H x W field");
  int h = field.dim(0), w = field.dim(1);
  if (factor < 1 || h % factor != 0 || w % factor != 0)
    throw ShapeError("coarsen_block_mean: dims not divisible by factor");
  int ho = h / factor, wo = w / factor;
  Array out = zeros({ho, wo});
  for (int i = 0; i < ho; ++i)
    for (int j = 0; j < wo; ++j) {
      double s = 0;
      for (int di = 0; di < factor; ++di)
        for (int dj = 0; dj < factor; ++dj)
          s += field.data[static_cast<Eigen::Index>(i * factor + di) * w + j * factor + dj];
      out.data[static_cast<Eigen::Index>(i) * wo + j] = s / (factor * factor);
    }
  return out;
}

Split split_chronological(const Dataset& dataset, double train_fraction) {
  for (size_t i = 1; i < dataset.samples.size(); ++i)
    if (dataset.samples[i].time_index < dataset.samples[i - 1].time_index)
      throw ValueError("split_chronological: samples not sorted by time");
  int n = static_cast<int>(dataset.samples.size());
  int n_train = static_cast<int>(std::floor(n * train_fraction));
  if (n_train < 1) throw ValueError("split_chronological: empty train split");
  Split sp;
  sp.train = sp.test = dataset;
  sp.train.samples.assign(dataset.samples.begin(), dataset.samples.begin() + n_train);
  sp.test.samples.assign(dataset.samples.begin() + n_train, dataset.samples.end());
  return sp;
}

NormStats fit_norm_stats(const Dataset& train) {
  if (train.samples.empty()) throw ValueError("fit_norm_stats: empty training set");
  NormStats st;
  st.mean.assign(static_cast<size_t>(train.cx), 0.0);
  st.std.assign(static_cast<size_t>(train.cx), 0.0);
  double n_cells = 0;
  for (const CubeSample& s : train.samples) {
    int cells = s.drivers.dim(0) * s.drivers.dim(1);
    for (int i = 0; i < cells; ++i)
      for (int c = 0; c < train.cx; ++c)
        st.mean[static_cast<size_t>(c)] +=
            s.drivers.data[static_cast<Eigen::Index>(i) * train.cx + c];
    n_cells += cells;
  }
  for (double& m : st.mean) m /= n_cells;
  for (const CubeSample& s : train.samples) {
    int cells = s.drivers.dim(0) * s.drivers.dim(1);
    for (int i = 0; i < cells; ++i)
      for (int c = 0; c < train.cx; ++c) {
        double d = s.drivers.data[static_cast<Eigen::Index>(i) * train.cx + c] -
                   st.mean[static_cast<size_t>(c)];
        st.std[static_cast<size_t>(c)] += d * d;
      }
  }
  for (double& v : st.std) {
    v = std::sqrt(v / n_cells);
    if (v <= 1e-12) v = 1.0;
  }
  return st;
}

Array normalize_drivers(const Array& drivers, const NormStats& stats) {
  int cx = drivers.dim(2);
  if (static_cast<int>(stats.mean.size()) != cx)
    throw ShapeError("normalize_drivers: channel count mismatch");
  Array out = drivers;
  out.tape = nullptr;
  out.node = -1;
  int cells = drivers.dim(0) * drivers.dim(1);
  for (int i = 0; i < cells; ++i)
    for (int c = 0; c < cx; ++c) {
      Eigen::Index ix = static_cast<Eigen::Index>(i) * cx + c;
      out.data[ix] = (drivers.data[ix] - stats.mean[static_cast<size_t>(c)]) /
                     stats.std[static_cast<size_t>(c)];
    }
  return out;
}

}  // namespace higo
