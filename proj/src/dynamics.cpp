#include "higo/dynamics.hpp"

#include <string>

namespace higo {

LevelDynamicsParams::LevelDynamicsParams(int level, int d, InitRng& rng)
    : edge_score("dyn.l" + std::to_string(level) + ".edge_score", 2 * d + 1, d / 2, 1, rng),
      edge_msg("dyn.l" + std::to_string(level) + ".edge_msg", 2 * d + 1, d / 2, d, rng),
      node_deriv("dyn.l" + std::to_string(level) + ".node_deriv", 2 * d, d, d, rng) {}

void LevelDynamicsParams::collect(std::vector<Parameter*>& out) {
  edge_score.collect(out);
  edge_msg.collect(out);
  node_deriv.collect(out);
}

TransitionParams::TransitionParams(int level, int d, InitRng& rng)
    : down("trans.l" + std::to_string(level) + ".down", 4 * d, d, 4, rng),
      up_ln_g("trans.l" + std::to_string(level) + ".up_ln.g", ones({d})),
      up_ln_b("trans.l" + std::to_string(level) + ".up_ln.b", zeros({d})) {}

void TransitionParams::collect(std::vector<Parameter*>& out) {
  down.collect(out);
  out.push_back(&up_ln_g);
  out.push_back(&up_ln_b);
}

DynamicsParams::DynamicsParams(int num_levels, int d, InitRng& rng) {
  for (int l = 0; l < num_levels; ++l) levels.emplace_back(l + 1, d, rng);
  for (int l = 0; l + 1 < num_levels; ++l) transitions.emplace_back(l + 1, d, rng);
}

void DynamicsParams::collect(std::vector<Parameter*>& out) {
  for (auto& l : levels) l.collect(out);
  for (auto& tr : transitions) tr.collect(out);
}

Array admp(Tape* t, const Array& state, const LevelGraph& graph, const LevelDynamicsParams& p,
           MpMode mode, int* isolated_count) {
  int n = state.rows2d(), d = state.cols2d();
  if (n != graph.num_nodes()) throw ShapeError("admp: state size does not match graph");
  int e = graph.num_edges();
  if (isolated_count) {
    std::vector<char> has_edge(static_cast<size_t>(n), 0);
    for (int dst : graph.edge_dst) has_edge[static_cast<size_t>(dst)] = 1;
    *isolated_count = static_cast<int>(std::count(has_edge.begin(), has_edge.end(), 0));
  }
  if (e == 0) return zeros({n, d});

  Array xi = gather_rows(state, graph.edge_dst);
  Array xj = gather_rows(state, graph.edge_src);
  Vec ef(e);
  for (int i = 0; i < e; ++i) ef[i] = graph.edge_feature[static_cast<size_t>(i)];
  Array efeat = from_vec({e, 1}, std::move(ef));
  if (t) efeat = t->input(efeat);
  Array feat = concat_cols({xi, xj, efeat});

  Array alpha;
  if (mode == MpMode::adaptive) {
    Array scores = p.edge_score.apply(t, feat);
    alpha = segment_softmax(scores, graph.edge_dst, n);
  } else {
    std::vector<int> deg(static_cast<size_t>(n), 0);
    for (int dst : graph.edge_dst) ++deg[static_cast<size_t>(dst)];
    Vec a(e);
    for (int i = 0; i < e; ++i)
      a[i] = 1.0 / deg[static_cast<size_t>(graph.edge_dst[static_cast<size_t>(i)])];
    alpha = from_vec({e, 1}, std::move(a));
  }
  Array msg = p.edge_msg.apply(t, feat);
  return segment_sum(mul(msg, alpha), graph.edge_dst, n);
}

DownResult downsample(Tape* t, const Array& child_state, const Hierarchy& hier, int level,
                      const TransitionParams& p) {
  if (level < 0 || level + 1 >= hier.num_levels())
    throw ConfigError("downsample: level has no parent");
  const auto& kids = hier.children[static_cast<size_t>(level)];
  int np = static_cast<int>(kids.size());
  int nc = child_state.rows2d(), d = child_state.cols2d();

  std::vector<int> order;
  order.reserve(static_cast<size_t>(np) * 4);
  for (const auto& k4 : kids)
    for (int k : k4) order.push_back(k);

  Array gathered = gather_rows(child_state, order);          // [4*Np, D]
  Array c4 = reshape(gathered, {np, 4 * d});                 // raster-ordered children per row
  Array beta = softmax(p.down.apply(t, c4), 1);              // [Np, 4]

  Array parent;
  for (int k = 0; k < 4; ++k) {
    Array term = mul(slice_cols(c4, k * d, d), slice_cols(beta, k, 1));
    parent = k == 0 ? term : add(parent, term);
  }

  // Re-index beta from (parent, slot) order to child-node order.
  Array beta_flat = reshape(beta, {np * 4, 1});
  Array beta_child = segment_sum(beta_flat, order, nc);
  return {parent, beta_child};
}

Array upsample(Tape* t, const Array& child_state, const Array& parent_state, const Array& beta,
               const Hierarchy& hier, int level, const TransitionParams& p) {
  if (beta.size() != child_state.rows2d())
    throw ValueError("upsample: missing or mismatched beta cache (downsample first)");
  auto& self = const_cast<TransitionParams&>(p);
  const auto& parent_map = hier.parent[static_cast<size_t>(level)];
  Array xp = gather_rows(parent_state, parent_map);
  Array one_minus = sub(ones(beta.shape), beta);
  Array blend = add(mul(child_state, one_minus), mul(xp, beta));
  return layer_norm(blend, use(t, self.up_ln_g), use(t, self.up_ln_b));
}

Array level_derivative(Tape* t, const Array& state, const LevelGraph& graph,
                       const LevelDynamicsParams& p, MpMode mode) {
  Array m = admp(t, state, graph, p, mode);
  return p.node_deriv.apply(t, concat_cols({state, m}));
}

EvolveResult evolve(Tape* t, const Array& x0, const Hierarchy& hier, const DynamicsParams& p,
                    double t0, double t1, const SolverConfig& cfg, MpMode mode,
                    const std::vector<double>& interior_times) {
  int num_levels = hier.num_levels();
  if (x0.rows2d() != hier.levels[0].num_nodes())
    throw ShapeError("evolve: state does not match the finest level");

  // Phase 1: downsample, caching the blend weights.
  std::vector<Array> states(static_cast<size_t>(num_levels));
  std::vector<Array> betas(static_cast<size_t>(num_levels > 0 ? num_levels - 1 : 0));
  states[0] = x0;
  for (int l = 0; l + 1 < num_levels; ++l) {
    DownResult dr = downsample(t, states[static_cast<size_t>(l)], hier, l,
                               p.transitions[static_cast<size_t>(l)]);
    states[static_cast<size_t>(l + 1)] = dr.parent;
    betas[static_cast<size_t>(l)] = dr.beta;
  }

  // Phase 2: integrate each level independently.
  std::vector<Array> evolved(static_cast<size_t>(num_levels));
  std::vector<std::vector<Array>> evolved_at(interior_times.size(),
                                             std::vector<Array>(static_cast<size_t>(num_levels)));
  for (int l = 0; l < num_levels; ++l) {
    const LevelGraph& g = hier.levels[static_cast<size_t>(l)];
    const LevelDynamicsParams& lp = p.levels[static_cast<size_t>(l)];
    if (t) {
      if (!interior_times.empty())
        throw ConfigError("evolve: interior times are not supported on the training tape");
      int steps = rk4_step_count(t0, t1, cfg.rk4_steps_per_unit);
      Array x = states[static_cast<size_t>(l)];
      if (steps > 0)
        x = rk4_integrate(
            [&](const Array& s, double) { return level_derivative(t, s, g, lp, mode); }, x, t0, t1,
            steps);
      evolved[static_cast<size_t>(l)] = x;
    } else {
      std::vector<int> shp = states[static_cast<size_t>(l)].shape;
      DerivFn f = [&](const Vec& v, double) {
        Array s = from_vec(shp, v);
        return level_derivative(nullptr, s, g, lp, mode).data;
      };
      OdeResult r;
      try {
        r = integrate(f, states[static_cast<size_t>(l)].data, t0, t1, cfg, interior_times);
      } catch (const std::exception& e) {
        throw ValueError("evolve: level " + std::to_string(l + 1) + ": " + e.what());
      }
      evolved[static_cast<size_t>(l)] = from_vec(shp, std::move(r.y));
      for (size_t q = 0; q < interior_times.size(); ++q)
        evolved_at[q][static_cast<size_t>(l)] = from_vec(shp, std::move(r.interior[q]));
    }
  }

  // Phase 3: upsample coarse-to-fine with the cached weights.
  auto up_pass = [&](std::vector<Array>& lv) {
    Array cur = lv[static_cast<size_t>(num_levels - 1)];
    for (int l = num_levels - 2; l >= 0; --l)
      cur = upsample(t, lv[static_cast<size_t>(l)], cur, betas[static_cast<size_t>(l)], hier, l,
                     p.transitions[static_cast<size_t>(l)]);
    return cur;
  };

  EvolveResult res;
  res.fine = up_pass(evolved);
  for (auto& lv : evolved_at) res.interior.push_back(up_pass(lv));
  return res;
}

}  // namespace higo
