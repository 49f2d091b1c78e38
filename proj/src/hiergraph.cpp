#include "higo/hiergraph.hpp"

#include <string>

namespace higo {

namespace {

LevelGraph build_level(int h, int w, bool wrap_lon) {
  LevelGraph g;
  g.h = h;
  g.w = w;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      int node = i * w + j;
      auto push = [&](int ii, int jj) {
        g.edge_src.push_back(ii * w + jj);
        g.edge_dst.push_back(node);
        g.edge_feature.push_back(1.0);
      };
      if (i > 0) push(i - 1, j);          // N
      if (i + 1 < h) push(i + 1, j);      // S
      if (j + 1 < w) push(i, j + 1);      // E
      else if (wrap_lon && w > 2) push(i, 0);
      if (j > 0) push(i, j - 1);          // W
      else if (wrap_lon && w > 2) push(i, w - 1);
    }
  }
  return g;
}

}  // namespace

std::vector<std::pair<int, double>> LevelGraph::neighbors(int node) const {
  if (node < 0 || node >= num_nodes())
    throw ShapeError("neighbors: node " + std::to_string(node) + " out of range");
  std::vector<std::pair<int, double>> out;
  for (int e = 0; e < num_edges(); ++e)
    if (edge_dst[static_cast<size_t>(e)] == node)
      out.emplace_back(edge_src[static_cast<size_t>(e)], edge_feature[static_cast<size_t>(e)]);
  return out;
}

Hierarchy build_hierarchy(int h, int w, int num_levels, bool wrap_lon) {
  if (num_levels < 1) throw ConfigError("build_hierarchy: need at least one level");
  Hierarchy hier;
  int hl = h, wl = w;
  for (int l = 0; l < num_levels; ++l) {
    if (hl < 1 || wl < 1)
      throw ConfigError("build_hierarchy: grid vanishes at level " + std::to_string(l + 1));
    hier.levels.push_back(build_level(hl, wl, wrap_lon));
    if (l + 1 < num_levels) {
      if (hl % 2 != 0 || wl % 2 != 0)
        throw ConfigError("build_hierarchy: dims " + std::to_string(hl) + "x" +
                          std::to_string(wl) + " not divisible by 2 at level " +
                          std::to_string(l + 1));
      int hp = hl / 2, wp = wl / 2;
      std::vector<int> par(static_cast<size_t>(hl) * wl);
      std::vector<std::array<int, 4>> kids(static_cast<size_t>(hp) * wp);
      for (int i = 0; i < hl; ++i)
        for (int j = 0; j < wl; ++j)
          par[static_cast<size_t>(i) * wl + j] = (i / 2) * wp + (j / 2);
      for (int pi = 0; pi < hp; ++pi)
        for (int pj = 0; pj < wp; ++pj)
          kids[static_cast<size_t>(pi) * wp + pj] = {
              (2 * pi) * wl + 2 * pj, (2 * pi) * wl + 2 * pj + 1,
              (2 * pi + 1) * wl + 2 * pj, (2 * pi + 1) * wl + 2 * pj + 1};
      hier.parent.push_back(std::move(par));
      hier.children.push_back(std::move(kids));
      hl = hp;
      wl = wp;
    }
  }
  return hier;
}

}  // namespace higo
