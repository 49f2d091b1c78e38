#include "higo/model.hpp"

namespace higo {

namespace {

int check_modes(const ModelConfig& c) {
  int m = std::min({c.spectral_modes, c.h, c.w});
  return std::max(1, m);
}

}  // namespace

Model::Model(const ModelConfig& config, uint64_t seed) : cfg(config) {
  cfg.spectral_modes = check_modes(cfg);
  hier = build_hierarchy(cfg.h, cfg.w, cfg.levels, cfg.wrap_lon);
  InitRng rng(seed);
  fusion = FusionParams(cfg.cx, cfg.cz, cfg.d, cfg.spectral_modes, rng);
  fusion.sigmoid_gate = cfg.sigmoid_gate;
  mixer = MixerParams(cfg.d, rng);
  mixer.residual_drivers = cfg.residual_drivers;
  dyn = DynamicsParams(cfg.levels, cfg.d, rng);
  head = HeadParams(cfg.d, cfg.k, rng);
  head.sigmoid_binary = cfg.sigmoid_binary;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  fusion.collect(out);
  mixer.collect(out);
  dyn.collect(out);
  head.collect(out);
  return out;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

Model::Forward Model::forward(Tape* t, const Array& drivers, const Vec& indices,
                              const std::vector<uint8_t>& ba, double horizon,
                              const SolverConfig& solver,
                              const std::vector<double>& interior_times) const {
  Array z = encode_drivers(t, drivers, fusion);
  std::array<Array, 3> a = climate_attention(t, indices, fusion);
  Array hf = gated_fuse(t, z, a, fusion);
  Array bhat = encode_ba(t, ba, cfg.h, cfg.w, cfg.k, mixer);
  Array x = mix(t, hf, bhat, mixer);
  Array x0 = reshape(x, {cfg.h * cfg.w, cfg.d});
  EvolveResult ev = evolve(t, x0, hier, dyn, 0.0, horizon, solver, cfg.mp_mode, interior_times);
  Forward f;
  f.probs = decode(t, ev.fine, head);
  for (const Array& s : ev.interior) f.interior.push_back(decode(t, s, head));
  return f;
}

}  // namespace higo
