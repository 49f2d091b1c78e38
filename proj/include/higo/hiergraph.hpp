#pragma once

#include <array>
#include <utility>
#include <vector>

#include "higo/array.hpp"

namespace higo {

/// One level of the grid-graph pyramid. Directed intra-level edges are
/// stored target-major: all edges into node 0, then node 1, ... with the
/// source order N, S, E, W. That grouping makes per-neighborhood softmax a
/// contiguous segment operation.
struct LevelGraph {
  int h = 0, w = 0;
  std::vector<int> edge_src;        // source node per directed edge
  std::vector<int> edge_dst;        // target node per directed edge
  std::vector<double> edge_feature; // constant 1 by construction

  int num_nodes() const { return h * w; }
  int num_edges() const { return static_cast<int>(edge_src.size()); }

  std::vector<std::pair<int, double>> neighbors(int node) const;
};

struct Hierarchy {
  std::vector<LevelGraph> levels;            // levels[0] is the finest
  std::vector<std::vector<int>> parent;      // parent[l][node_l] -> node at l+1
  std::vector<std::vector<std::array<int, 4>>> children;  // raster order NW,NE,SW,SE

  int num_levels() const { return static_cast<int>(levels.size()); }
};

/// Builds the L-level pyramid over an H x W grid. Each coarser level halves
/// both dims; H and W must be divisible by 2^(L-1). With wrap_lon, east-west
/// edges wrap around (global longitude).
Hierarchy build_hierarchy(int h, int w, int num_levels, bool wrap_lon = false);

}  // namespace higo
