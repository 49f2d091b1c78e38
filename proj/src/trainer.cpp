#include "higo/trainer.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>
#include <sstream>

namespace higo {

namespace {

using json = nlohmann::json;

json model_config_to_json(const ModelConfig& m) {
  return {{"H", m.h},
          {"W", m.w},
          {"C_x", m.cx},
          {"C_z", m.cz},
          {"D", m.d},
          {"K", m.k},
          {"levels", m.levels},
          {"spectral_modes", m.spectral_modes},
          {"wrap_lon", m.wrap_lon},
          {"sigmoid_gate", m.sigmoid_gate},
          {"residual_drivers", m.residual_drivers},
          {"sigmoid_binary", m.sigmoid_binary},
          {"mp_mode", m.mp_mode == MpMode::adaptive ? "adaptive" : "mean"}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  m.h = j.at("H").get<int>();
  m.w = j.at("W").get<int>();
  m.cx = j.at("C_x").get<int>();
  m.cz = j.at("C_z").get<int>();
  m.d = j.at("D").get<int>();
  m.k = j.at("K").get<int>();
  m.levels = j.at("levels").get<int>();
  m.spectral_modes = j.at("spectral_modes").get<int>();
  m.wrap_lon = j.at("wrap_lon").get<bool>();
  m.sigmoid_gate = j.at("sigmoid_gate").get<bool>();
  m.residual_drivers = j.at("residual_drivers").get<bool>();
  m.sigmoid_binary = j.at("sigmoid_binary").get<bool>();
  m.mp_mode = j.at("mp_mode").get<std::string>() == "mean" ? MpMode::mean : MpMode::adaptive;
  return m;
}

json solver_to_json(const SolverConfig& s) {
  return {{"method", s.method == SolverConfig::Method::rk4 ? "rk4" : "dopri5"},
          {"rk4_steps_per_unit", s.rk4_steps_per_unit},
          {"rtol", s.rtol},
          {"atol", s.atol},
          {"max_steps", s.max_steps}};
}

SolverConfig solver_from_json(const json& j) {
  SolverConfig s;
  s.method = j.at("method").get<std::string>() == "dopri5" ? SolverConfig::Method::dopri5
                                                           : SolverConfig::Method::rk4;
  s.rk4_steps_per_unit = j.at("rk4_steps_per_unit").get<int>();
  s.rtol = j.at("rtol").get<double>();
  s.atol = j.at("atol").get<double>();
  s.max_steps = j.at("max_steps").get<int>();
  return s;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"horizon_steps", c.horizon_steps},
          {"grad_clip", c.grad_clip},
          {"val_fraction", c.val_fraction},
          {"seed", c.seed},
          {"solver", solver_to_json(c.solver)},
          {"model", model_config_to_json(c.model)},
          {"driver_mask", c.driver_mask}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch = j.at("batch").get<int>();
  c.horizon_steps = j.at("horizon_steps").get<int>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.val_fraction = j.at("val_fraction").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  c.solver = solver_from_json(j.at("solver"));
  c.model = model_config_from_json(j.at("model"));
  c.driver_mask = j.at("driver_mask").get<std::vector<std::string>>();
  return c;
}

std::vector<uint8_t> fire_labels(const CubeSample& s) { return s.ba; }

}  // namespace

void adamw_step(const std::vector<Parameter*>& params, AdamWState& state, double lr_t,
                double beta1, double beta2, double eps, double wd) {
  if (state.m.empty()) {
    for (Parameter* p : params) {
      state.m.push_back(Vec::Zero(p->value.size()));
      state.v.push_back(Vec::Zero(p->value.size()));
    }
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Vec& m = state.m[i];
    Vec& v = state.v[i];
    m = beta1 * m + (1 - beta1) * p.grad;
    v = beta2 * v + (1 - beta2) * p.grad.cwiseProduct(p.grad);
    Vec mhat = m / bc1;
    Vec vhat = v / bc2;
    p.value.data -=
        lr_t * (mhat.array() / (vhat.array().sqrt() + eps) + wd * p.value.data.array()).matrix();
  }
}

double cosine_lr(long step, long total_steps, double lr_max, double lr_min) {
  if (step < 0 || step > total_steps) throw ValueError("cosine_lr: step out of range");
  if (total_steps == 0) return lr_max;
  return lr_min + 0.5 * (lr_max - lr_min) *
                      (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                      static_cast<double>(total_steps)));
}

CubeSample mask_drivers(const CubeSample& sample, const std::vector<std::string>& groups,
                        const std::vector<std::string>& channel_names) {
  auto known = driver_groups();
  for (const std::string& g : groups)
    if (std::find(known.begin(), known.end(), g) == known.end())
      throw ConfigError("mask_drivers: unknown group '" + g + "'");
  CubeSample out = sample;
  int cx = sample.drivers.dim(2);
  int cells = sample.drivers.dim(0) * sample.drivers.dim(1);
  for (int c = 0; c < cx; ++c) {
    std::string grp = channel_group(channel_names[static_cast<size_t>(c)]);
    if (std::find(groups.begin(), groups.end(), grp) == groups.end()) continue;
    for (int i = 0; i < cells; ++i)
      out.drivers.data[static_cast<Eigen::Index>(i) * cx + c] = 0.0;
  }
  if (std::find(groups.begin(), groups.end(), "indices") != groups.end()) out.indices.setZero();
  return out;
}

void TrainState::load_best() {
  if (best_params.empty()) return;
  auto params = model.parameters();
  if (params.size() != best_params.size())
    throw ValueError("load_best: snapshot does not match model");
  for (size_t i = 0; i < params.size(); ++i) params[i]->value.data = best_params[i];
}

void train(TrainState& state, const Dataset& dataset, int stop_after_epochs) {
  TrainConfig& cfg = state.cfg;
  int last_epoch =
      stop_after_epochs >= 0 ? std::min(cfg.epochs, stop_after_epochs) : cfg.epochs;
  int n = static_cast<int>(dataset.samples.size());
  int n_fit = std::max(1, static_cast<int>(std::floor(n * (1.0 - cfg.val_fraction))));
  if (n_fit + cfg.horizon_steps >= n + 1)
    n_fit = std::max(1, n - cfg.horizon_steps);

  if (state.epochs_done == 0) {
    Dataset fit = dataset;
    fit.samples.assign(dataset.samples.begin(), dataset.samples.begin() + n_fit);
    state.norm = fit_norm_stats(fit);
    std::vector<uint8_t> all_labels;
    for (const CubeSample& s : fit.samples)
      all_labels.insert(all_labels.end(), s.ba.begin(), s.ba.end());
    state.class_weights = class_weights(all_labels, dataset.k);
  }

  // (input index, label index) pairs; validation uses the chronological tail.
  std::vector<int> fit_pairs, val_pairs;
  for (int t = 0; t + cfg.horizon_steps < n_fit; ++t) fit_pairs.push_back(t);
  for (int t = n_fit; t + cfg.horizon_steps < n; ++t) val_pairs.push_back(t);
  if (fit_pairs.empty()) throw ValueError("train: no training pairs for this horizon");

  std::mt19937_64 rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
  if (!state.rng_state.empty()) {
    std::istringstream in(state.rng_state);
    in >> rng;
  }

  auto prep = [&](const CubeSample& s) {
    CubeSample out = s;
    out.drivers = normalize_drivers(s.drivers, state.norm);
    if (!cfg.driver_mask.empty())
      out = mask_drivers(out, cfg.driver_mask, dataset.channel_names);
    return out;
  };

  auto params = state.model.parameters();
  long batches_per_epoch =
      (static_cast<long>(fit_pairs.size()) + cfg.batch - 1) / cfg.batch;
  long total_steps = batches_per_epoch * cfg.epochs;

  for (int epoch = state.epochs_done; epoch < last_epoch; ++epoch) {
    std::vector<int> order = fit_pairs;
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0;
    int batch_index = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(cfg.batch), ++batch_index) {
      size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(cfg.batch));
      state.model.zero_grad();
      double batch_loss = 0;
      for (size_t i = b0; i < b1; ++i) {
        int ti = order[i];
        CubeSample in = prep(dataset.samples[static_cast<size_t>(ti)]);
        const CubeSample& target = dataset.samples[static_cast<size_t>(ti + cfg.horizon_steps)];
        Tape tape;
        Model::Forward f = state.model.forward(&tape, in.drivers, in.indices, in.ba,
                                               cfg.horizon_steps, cfg.solver);
        Array loss =
            weighted_ce(&tape, f.probs, fire_labels(target), state.class_weights);
        double lv = loss.scalar();
        if (!std::isfinite(lv))
          throw ValueError("train: NaN loss in batch " + std::to_string(batch_index));
        batch_loss += lv;
        tape.backward(scale(loss, 1.0 / static_cast<double>(b1 - b0)));
      }
      epoch_loss += batch_loss;
      if (cfg.grad_clip > 0) {
        double sq = 0;
        for (Parameter* p : params) sq += p->grad.squaredNorm();
        double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) {
          double s = cfg.grad_clip / norm;
          for (Parameter* p : params) p->grad *= s;
        }
      }
      double lr_t = cosine_lr(state.opt.step, total_steps, cfg.lr);
      adamw_step(params, state.opt, lr_t, 0.9, 0.999, 1e-8, cfg.weight_decay);
    }
    epoch_loss /= static_cast<double>(order.size());

    // Validation AUPRC on the held-out tail.
    double val = -1;
    if (!val_pairs.empty()) {
      std::vector<EvalRecord> records;
      for (int ti : val_pairs) {
        CubeSample in = prep(dataset.samples[static_cast<size_t>(ti)]);
        const CubeSample& target = dataset.samples[static_cast<size_t>(ti + cfg.horizon_steps)];
        Model::Forward f = state.model.forward(nullptr, in.drivers, in.indices, in.ba,
                                               cfg.horizon_steps, cfg.solver);
        Vec p = fire_probability(f.probs);
        for (Eigen::Index c = 0; c < p.size(); ++c)
          records.push_back({p[c], target.ba[static_cast<size_t>(c)] > 0 ? 1 : 0,
                             static_cast<int>(c), ti});
      }
      val = auprc(records).value_or(-1);
    }

    if (val > state.best_val_auprc || state.best_params.empty()) {
      state.best_val_auprc = val;
      state.best_epoch = epoch;
      state.best_params.clear();
      for (Parameter* p : params) state.best_params.push_back(p->value.data);
    }
    state.history.push_back({epoch, epoch_loss, val});
    state.epochs_done = epoch + 1;
    std::ostringstream out;
    out << rng;
    state.rng_state = out.str();
  }
}

std::vector<MetricRow> evaluate(const Model& model, const Dataset& test, const NormStats& norm,
                                const std::vector<double>& horizons_days,
                                const SolverConfig& solver, const EvalOptions& opts) {
  if (horizons_days.empty()) return {};
  std::vector<double> steps;
  for (double d : horizons_days) steps.push_back(d / 8.0);
  double max_step = *std::max_element(steps.begin(), steps.end());
  int n = static_cast<int>(test.samples.size());

  struct Pool {
    std::vector<EvalRecord> model_r, persist_r, interp_r;
  };
  std::vector<Pool> pools(steps.size());
  std::vector<bool> dumped(steps.size(), false);
  std::vector<Vec> dump_maps(steps.size());

  for (int t = 0; t < n; ++t) {
    bool any = false;
    for (double s : steps) {
      int li = t + static_cast<int>(std::lround(s));
      if (std::abs(s - std::lround(s)) < 1e-9 && li < n) any = true;
    }
    if (!any && opts.dump_maps_dir.empty()) continue;

    CubeSample in = test.samples[static_cast<size_t>(t)];
    in.drivers = normalize_drivers(in.drivers, norm);
    if (!opts.mask_groups.empty()) in = mask_drivers(in, opts.mask_groups, test.channel_names);

    std::vector<double> interior(steps.begin(), steps.end());
    Model::Forward f =
        model.forward(nullptr, in.drivers, in.indices, in.ba, max_step, solver, interior);

    for (size_t h = 0; h < steps.size(); ++h) {
      Vec p = fire_probability(f.interior[h]);
      if (!dumped[h]) {
        dump_maps[h] = p;
        dumped[h] = true;
      }
      double srounded = std::lround(steps[h]);
      if (std::abs(steps[h] - srounded) > 1e-9) continue;  // fractional: maps only
      int li = t + static_cast<int>(srounded);
      if (li >= n) continue;
      const CubeSample& target = test.samples[static_cast<size_t>(li)];
      for (Eigen::Index c = 0; c < p.size(); ++c) {
        int lab = target.ba[static_cast<size_t>(c)] > 0 ? 1 : 0;
        pools[h].model_r.push_back({p[c], lab, static_cast<int>(c), t});
        if (opts.persistence_baseline)
          pools[h].persist_r.push_back(
              {in.ba[static_cast<size_t>(c)] > 0 ? 1.0 : 0.0, lab, static_cast<int>(c), t});
        if (opts.interp_baseline) {
          double p0 = in.ba[static_cast<size_t>(c)] > 0 ? 1.0 : 0.0;
          double pe = fire_probability(f.probs)[c];
          double frac = max_step > 0 ? steps[h] / max_step : 1.0;
          pools[h].interp_r.push_back({(1 - frac) * p0 + frac * pe, lab, static_cast<int>(c), t});
        }
      }
    }
  }

  std::vector<MetricRow> rows;
  auto emit = [&](double hd, const std::string& prefix, const std::vector<EvalRecord>& rs) {
    if (rs.empty()) return;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const EvalRecord& r : rs) {
      scores.push_back(r.score);
      labels.push_back(r.label);
    }
    std::vector<int> preds = threshold_predictions(scores);
    rows.push_back({hd, prefix + "m_f1", macro_f1(preds, labels)});
    rows.push_back({hd, prefix + "fire_f1", fire_f1(preds, labels)});
    auto ap = auprc(rs);
    rows.push_back({hd, prefix + "auprc", ap ? *ap : std::nan("")});
  };
  for (size_t h = 0; h < steps.size(); ++h) {
    emit(horizons_days[h], "", pools[h].model_r);
    emit(horizons_days[h], "persistence_", pools[h].persist_r);
    emit(horizons_days[h], "interp_", pools[h].interp_r);
  }

  if (!opts.dump_maps_dir.empty()) {
    std::filesystem::create_directories(opts.dump_maps_dir);
    for (size_t h = 0; h < steps.size(); ++h) {
      if (!dumped[h]) continue;
      std::ofstream out(opts.dump_maps_dir + "/prob_h" + std::to_string(horizons_days[h]) +
                        ".csv");
      for (int i = 0; i < model.cfg.h; ++i) {
        for (int j = 0; j < model.cfg.w; ++j) {
          if (j) out << ",";
          out << dump_maps[h][static_cast<Eigen::Index>(i) * model.cfg.w + j];
        }
        out << "\n";
      }
    }
  }
  return rows;
}

namespace {

constexpr char kCkptMagic[4] = {'H', 'G', 'K', '1'};

void append_doubles(std::vector<uint8_t>& buf, const Vec& v) {
  size_t off = buf.size();
  buf.resize(off + static_cast<size_t>(v.size()) * 8);
  std::memcpy(buf.data() + off, v.data(), static_cast<size_t>(v.size()) * 8);
}

Vec take_doubles(const uint8_t*& p, Eigen::Index count) {
  Vec v(count);
  std::memcpy(v.data(), p, static_cast<size_t>(count) * 8);
  p += count * 8;
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
  auto& mut = const_cast<TrainState&>(state);
  auto params = mut.model.parameters();

  json names = json::array();
  for (Parameter* p : params) names.push_back({{"name", p->name}, {"size", p->value.size()}});
  json hist = json::array();
  for (const EpochRecord& r : state.history)
    hist.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"val_auprc", r.val_auprc}});
  json header = {{"config", train_config_to_json(state.cfg)},
                 {"epoch", state.epochs_done},
                 {"params", names},
                 {"opt_step", state.opt.step},
                 {"rng_state", state.rng_state},
                 {"norm_mean", state.norm.mean},
                 {"norm_std", state.norm.std},
                 {"class_weights", std::vector<double>(state.class_weights.data(),
                                                       state.class_weights.data() +
                                                           state.class_weights.size())},
                 {"quant_boundaries", state.quant_boundaries},
                 {"best_epoch", state.best_epoch},
                 {"best_val_auprc", state.best_val_auprc},
                 {"has_moments", !state.opt.m.empty()},
                 {"has_best", !state.best_params.empty()},
                 {"history", hist}};
  std::string hs = header.dump();

  std::vector<uint8_t> payload;
  for (Parameter* p : params) append_doubles(payload, p->value.data);
  if (!state.opt.m.empty()) {
    for (const Vec& m : state.opt.m) append_doubles(payload, m);
    for (const Vec& v : state.opt.v) append_doubles(payload, v);
  }
  for (const Vec& b : state.best_params) append_doubles(payload, b);

  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, payload.empty() ? Z_NULL : payload.data(), static_cast<uInt>(payload.size())));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  out.write(kCkptMagic, 4);
  uint32_t hlen = static_cast<uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&crc), 4);
  if (!out) throw IoError("save_checkpoint: write failed");
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCkptMagic, 4) != 0)
    throw IoError("load_checkpoint: bad magic");
  uint32_t hlen;
  std::memcpy(&hlen, bytes.data() + 4, 4);
  if (8 + hlen + 4 > bytes.size()) throw IoError("load_checkpoint: truncated header");
  json header = json::parse(std::string(reinterpret_cast<const char*>(bytes.data() + 8), hlen));

  TrainConfig cfg = train_config_from_json(header.at("config"));
  TrainState st(cfg);
  st.epochs_done = header.at("epoch").get<int>();
  st.opt.step = header.at("opt_step").get<long>();
  st.rng_state = header.at("rng_state").get<std::string>();
  st.norm.mean = header.at("norm_mean").get<std::vector<double>>();
  st.norm.std = header.at("norm_std").get<std::vector<double>>();
  auto cw = header.at("class_weights").get<std::vector<double>>();
  st.class_weights = Eigen::Map<const Vec>(cw.data(), static_cast<Eigen::Index>(cw.size()));
  st.quant_boundaries = header.at("quant_boundaries").get<std::vector<double>>();
  st.best_epoch = header.at("best_epoch").get<int>();
  st.best_val_auprc = header.at("best_val_auprc").get<double>();
  for (const json& r : header.at("history"))
    st.history.push_back({r.at("epoch").get<int>(), r.at("loss").get<double>(),
                          r.at("val_auprc").get<double>()});

  auto params = st.model.parameters();
  size_t total = 0;
  for (Parameter* p : params) total += static_cast<size_t>(p->value.size()) * 8;
  bool has_moments = header.at("has_moments").get<bool>();
  bool has_best = header.at("has_best").get<bool>();
  size_t expect = total * (1 + (has_moments ? 2 : 0) + (has_best ? 1 : 0));
  if (8 + hlen + expect + 4 != bytes.size()) throw IoError("load_checkpoint: truncated payload");

  const uint8_t* p = bytes.data() + 8 + hlen;
  uint32_t crc = static_cast<uint32_t>(crc32(0L, expect ? p : Z_NULL, static_cast<uInt>(expect)));
  uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc != stored) throw IoError("load_checkpoint: checksum failure");

  for (Parameter* prm : params) prm->value.data = take_doubles(p, prm->value.size());
  if (has_moments) {
    for (Parameter* prm : params) st.opt.m.push_back(take_doubles(p, prm->value.size()));
    for (Parameter* prm : params) st.opt.v.push_back(take_doubles(p, prm->value.size()));
  }
  if (has_best)
    for (Parameter* prm : params) st.best_params.push_back(take_doubles(p, prm->value.size()));
  return st;
}

}  // namespace higo
