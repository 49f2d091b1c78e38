#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "higo/cube_io.hpp"
#include "higo/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace higo;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitTrain = 3;
constexpr int kExitEval = 4;

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ConfigError("config: unknown key '" + it.key() + "' in " + section);
}

struct RunConfig {
  GenConfig gen;
  int k = 7;  // severity classes; overridable via generate.K
  double train_fraction = 0.8;
  TrainConfig train;
  std::string out = "out";
};

RunConfig load_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  reject_unknown(j, {"generate", "model", "train", "solver", "out"}, "top level");
  if (j.contains("out")) rc.out = j["out"].get<std::string>();
  if (j.contains("generate")) {
    const json& g = j["generate"];
    reject_unknown(g,
                   {"H", "W", "C_x", "C_z", "steps", "seed", "ignition_rate",
                    "target_fire_fraction", "K", "train_fraction"},
                   "generate");
    if (g.contains("H")) rc.gen.h = g["H"].get<int>();
    if (g.contains("W")) rc.gen.w = g["W"].get<int>();
    if (g.contains("C_x")) rc.gen.cx = g["C_x"].get<int>();
    if (g.contains("C_z")) rc.gen.cz = g["C_z"].get<int>();
    if (g.contains("steps")) rc.gen.steps = g["steps"].get<int>();
    if (g.contains("seed")) rc.gen.seed = g["seed"].get<uint64_t>();
    if (g.contains("ignition_rate")) rc.gen.ignition_rate = g["ignition_rate"].get<double>();
    if (g.contains("target_fire_fraction"))
      rc.gen.target_fire_fraction = g["target_fire_fraction"].get<double>();
    if (g.contains("K")) rc.k = g["K"].get<int>();
    if (g.contains("train_fraction")) rc.train_fraction = g["train_fraction"].get<double>();
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m,
                   {"D", "K", "levels", "spectral_modes", "wrap_lon", "sigmoid_gate",
                    "residual_drivers", "sigmoid_binary", "mp_mode"},
                   "model");
    ModelConfig& mc = rc.train.model;
    if (m.contains("D")) mc.d = m["D"].get<int>();
    if (m.contains("K")) mc.k = m["K"].get<int>();
    if (m.contains("levels")) mc.levels = m["levels"].get<int>();
    if (m.contains("spectral_modes")) mc.spectral_modes = m["spectral_modes"].get<int>();
    if (m.contains("wrap_lon")) mc.wrap_lon = m["wrap_lon"].get<bool>();
    if (m.contains("sigmoid_gate")) mc.sigmoid_gate = m["sigmoid_gate"].get<bool>();
    if (m.contains("residual_drivers")) mc.residual_drivers = m["residual_drivers"].get<bool>();
    if (m.contains("sigmoid_binary")) mc.sigmoid_binary = m["sigmoid_binary"].get<bool>();
    if (m.contains("mp_mode")) {
      std::string s = m["mp_mode"].get<std::string>();
      if (s != "adaptive" && s != "mean") throw ConfigError("config: mp_mode must be adaptive or mean");
      mc.mp_mode = s == "mean" ? MpMode::mean : MpMode::adaptive;
    }
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t,
                   {"lr", "weight_decay", "epochs", "batch", "horizon_steps", "val_fraction",
                    "seed", "driver_mask", "train_fraction", "grad_clip"},
                   "train");
    if (t.contains("lr")) rc.train.lr = t["lr"].get<double>();
    if (t.contains("weight_decay")) rc.train.weight_decay = t["weight_decay"].get<double>();
    if (t.contains("epochs")) rc.train.epochs = t["epochs"].get<int>();
    if (t.contains("batch")) rc.train.batch = t["batch"].get<int>();
    if (t.contains("horizon_steps")) rc.train.horizon_steps = t["horizon_steps"].get<int>();
    if (t.contains("grad_clip")) rc.train.grad_clip = t["grad_clip"].get<double>();
    if (t.contains("val_fraction")) rc.train.val_fraction = t["val_fraction"].get<double>();
    if (t.contains("seed")) rc.train.seed = t["seed"].get<uint64_t>();
    if (t.contains("driver_mask"))
      rc.train.driver_mask = t["driver_mask"].get<std::vector<std::string>>();
    if (t.contains("train_fraction")) rc.train_fraction = t["train_fraction"].get<double>();
  }
  if (j.contains("solver")) {
    const json& s = j["solver"];
    reject_unknown(s, {"method", "rk4_steps_per_unit", "rtol", "atol", "max_steps"}, "solver");
    SolverConfig& sc = rc.train.solver;
    if (s.contains("method")) {
      std::string m = s["method"].get<std::string>();
      if (m != "rk4" && m != "dopri5") throw ConfigError("config: method must be rk4 or dopri5");
      sc.method = m == "dopri5" ? SolverConfig::Method::dopri5 : SolverConfig::Method::rk4;
    }
    if (s.contains("rk4_steps_per_unit")) sc.rk4_steps_per_unit = s["rk4_steps_per_unit"].get<int>();
    if (s.contains("rtol")) sc.rtol = s["rtol"].get<double>();
    if (s.contains("atol")) sc.atol = s["atol"].get<double>();
    if (s.contains("max_steps")) sc.max_steps = s["max_steps"].get<int>();
  }
  return rc;
}

SolverConfig parse_solver_flag(const std::string& method, SolverConfig base) {
  if (method.empty()) return base;
  if (method == "rk4") base.method = SolverConfig::Method::rk4;
  else if (method == "dopri5") base.method = SolverConfig::Method::dopri5;
  else throw ConfigError("solver method must be rk4 or dopri5");
  return base;
}

int cmd_generate(const std::string& config_path, std::optional<uint64_t> seed,
                 std::optional<int> steps, std::string out_dir) {
  RunConfig rc = load_config(config_path);
  if (seed) rc.gen.seed = *seed;
  if (steps) rc.gen.steps = *steps;
  if (!out_dir.empty()) rc.out = out_dir;
  if (rc.gen.steps <= 0) throw ConfigError("generate: steps must be positive");
  if (rc.gen.h <= 0 || rc.gen.w <= 0 || rc.gen.cx <= 0 || rc.gen.cz <= 0)
    throw ConfigError("generate: grid and channel counts must be positive");
  if (rc.k < 2) throw ConfigError("generate: K must be at least 2");

  Dataset ds = generate_synthetic(rc.gen, rc.k, rc.train_fraction);
  fs::create_directories(rc.out);
  std::string cube_path = rc.out + "/cube.hgc1";
  write_cube(cube_path, ds);

  // Prevalence sidecar: fraction of cells in each class over the run.
  std::vector<double> counts(static_cast<size_t>(rc.k), 0);
  double total = 0;
  for (const CubeSample& s : ds.samples)
    for (uint8_t c : s.ba) {
      counts[c] += 1;
      total += 1;
    }
  json side = {{"n_samples", ds.samples.size()}, {"class_fraction", json::array()}};
  double fire = 0;
  for (int c = 0; c < rc.k; ++c) {
    double f = counts[static_cast<size_t>(c)] / total;
    side["class_fraction"].push_back(f);
    if (c > 0) fire += f;
  }
  side["fire_fraction"] = fire;
  std::ofstream(rc.out + "/prevalence.json") << side.dump(2) << "\n";
  std::cout << "wrote " << cube_path << " (" << ds.samples.size()
            << " samples, fire fraction " << fire << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& cube_path,
              std::optional<uint64_t> seed, std::string out_dir, const std::string& mp_mode,
              std::optional<int> levels, const std::string& mask_csv,
              const std::string& resume_path) {
  RunConfig rc = load_config(config_path);
  if (seed) rc.train.seed = *seed;
  if (!out_dir.empty()) rc.out = out_dir;
  if (!mp_mode.empty()) {
    if (mp_mode != "adaptive" && mp_mode != "mean")
      throw ConfigError("--mp-mode must be adaptive or mean");
    rc.train.model.mp_mode = mp_mode == "mean" ? MpMode::mean : MpMode::adaptive;
  }
  if (levels) rc.train.model.levels = *levels;
  if (!mask_csv.empty()) {
    rc.train.driver_mask.clear();
    std::stringstream ss(mask_csv);
    std::string g;
    while (std::getline(ss, g, ',')) rc.train.driver_mask.push_back(g);
  }

  Dataset full = read_cube(cube_path);
  Split split = split_chronological(full, rc.train_fraction);
  rc.train.model.h = full.h;
  rc.train.model.w = full.w;
  rc.train.model.cx = full.cx;
  rc.train.model.cz = full.cz;
  rc.train.model.k = full.k;

  fs::create_directories(rc.out);
  std::unique_ptr<TrainState> state;
  if (!resume_path.empty()) {
    state = std::make_unique<TrainState>(load_checkpoint(resume_path));
  } else {
    state = std::make_unique<TrainState>(rc.train);
  }
  try {
    train(*state, split.train);
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTrain;
  }

  std::string suffix = "_L" + std::to_string(state->cfg.model.levels);
  save_checkpoint(rc.out + "/checkpoint" + suffix + ".hgk1", *state);
  std::ofstream hist(rc.out + "/history" + suffix + ".csv");
  hist << "epoch,loss,val_auprc\n";
  for (const EpochRecord& r : state->history)
    hist << r.epoch << "," << r.loss << "," << r.val_auprc << "\n";
  std::cout << "trained " << state->epochs_done << " epochs, best val AUPRC "
            << state->best_val_auprc << " at epoch " << state->best_epoch << "\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& cube_path,
                 const std::string& horizons_csv, std::string out_dir,
                 const std::string& mask_csv, bool persistence, bool interp,
                 bool dump_maps, const std::string& solver_flag, const std::string& split_name,
                 double train_fraction) {
  TrainState state = load_checkpoint(ckpt_path);
  state.load_best();
  Dataset full = read_cube(cube_path);
  const ModelConfig& mc = state.cfg.model;
  if (full.h != mc.h || full.w != mc.w || full.cx != mc.cx || full.cz != mc.cz ||
      full.k != mc.k)
    throw ShapeError("evaluate: cube dimensions do not match the checkpoint");

  Dataset eval_set = full;
  if (split_name == "test") {
    eval_set = split_chronological(full, train_fraction).test;
  } else if (split_name == "train") {
    eval_set = split_chronological(full, train_fraction).train;
  } else if (split_name != "all") {
    throw ConfigError("--split must be train, test or all");
  }

  std::vector<double> horizons;
  std::stringstream ss(horizons_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) horizons.push_back(std::stod(tok));
  if (horizons.empty()) throw ConfigError("evaluate: no horizons given");

  EvalOptions opts;
  opts.persistence_baseline = persistence;
  opts.interp_baseline = interp;
  if (out_dir.empty()) out_dir = "out";
  fs::create_directories(out_dir);
  if (dump_maps) opts.dump_maps_dir = out_dir + "/maps";
  if (!mask_csv.empty()) {
    std::stringstream ms(mask_csv);
    std::string g;
    while (std::getline(ms, g, ',')) opts.mask_groups.push_back(g);
  }

  SolverConfig solver = parse_solver_flag(solver_flag, state.cfg.solver);
  std::vector<MetricRow> rows =
      evaluate(state.model, eval_set, state.norm, horizons, solver, opts);

  std::ofstream csv(out_dir + "/metrics.csv");
  csv << "horizon,metric,value\n";
  for (const MetricRow& r : rows) {
    csv << r.horizon_days << "," << r.metric << "," << r.value << "\n";
    std::cout << r.horizon_days << "," << r.metric << "," << r.value << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HiGO: hierarchical graph-ODE wildfire forecasting on synthetic cubes"};
  app.require_subcommand(1);

  std::string config_path, out_dir, cube_path, ckpt_path;
  std::optional<uint64_t> seed;
  std::optional<int> steps, levels;
  std::string mp_mode, mask_csv, resume_path, horizons = "8", baseline, solver_flag;
  std::string split_name = "test";
  double train_fraction = 0.8;
  bool dump_maps = false, interp = false;

  CLI::App* gen = app.add_subcommand("generate", "Generate a synthetic HGC1 cube");
  gen->add_option("--config", config_path, "JSON run configuration");
  gen->add_option("--seed", seed, "Generator seed (default 0)");
  gen->add_option("--steps", steps, "Number of 8-day steps (default 250)");
  gen->add_option("--out", out_dir, "Output directory (default out)");

  CLI::App* tr = app.add_subcommand("train", "Train on a cube, write checkpoint + history");
  tr->add_option("--config", config_path, "JSON run configuration");
  tr->add_option("--cube", cube_path, "HGC1 cube path")->required();
  tr->add_option("--seed", seed, "Training seed (default 0)");
  tr->add_option("--out", out_dir, "Output directory (default out)");
  tr->add_option("--mp-mode", mp_mode, "Message passing: adaptive or mean");
  tr->add_option("--levels", levels, "Graph pyramid depth L (default 3)");
  tr->add_option("--mask", mask_csv, "Comma-separated driver groups to zero during training");
  tr->add_option("--resume", resume_path, "Checkpoint to continue from");

  CLI::App* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint, write metrics CSV");
  ev->add_option("--checkpoint", ckpt_path, "HGK1 checkpoint path")->required();
  ev->add_option("--cube", cube_path, "HGC1 cube path")->required();
  ev->add_option("--horizons", horizons, "Comma-separated horizons in days (default 8)");
  ev->add_option("--out", out_dir, "Output directory (default out)");
  ev->add_option("--mask", mask_csv, "Comma-separated driver groups to zero");
  ev->add_option("--baseline", baseline, "persistence: add persistence baseline rows");
  ev->add_flag("--interp-baseline", interp, "Add linearly interpolated endpoint baseline rows");
  ev->add_flag("--dump-maps", dump_maps, "Write per-horizon probability grids as CSV");
  ev->add_option("--solver", solver_flag, "Override solver: rk4 or dopri5");
  ev->add_option("--split", split_name, "Evaluate on train, test or all (default test)");
  ev->add_option("--train-fraction", train_fraction, "Chronological split point (default 0.8)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(config_path, seed, steps, out_dir);
    if (tr->parsed())
      return cmd_train(config_path, cube_path, seed, out_dir, mp_mode, levels, mask_csv,
                       resume_path);
    if (ev->parsed()) {
      if (!baseline.empty() && baseline != "persistence")
        throw ConfigError("--baseline supports only: persistence");
      try {
        return cmd_evaluate(ckpt_path, cube_path, horizons, out_dir, mask_csv,
                            baseline == "persistence", interp, dump_maps, solver_flag,
                            split_name, train_fraction);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEval;
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return gen->parsed() ? kExitConfig : (tr->parsed() ? kExitTrain : kExitEval);
  }
  return 0;
}
