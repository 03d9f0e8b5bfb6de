#pragma once

// Scripted coverage controllers: the clairvoyant centroidal-Voronoi expert
// (full field knowledge, used to generate imitation data) and the
// decentralized CVT baseline (one-hop neighbor positions, own sensed map).

#include "madp/coverage.hpp"
#include "madp/tensor.hpp"
#include "madp/world.hpp"

namespace madp {

// One Lloyd step per call: action = centroid - position, norm-clamped.
inline Tensor clairvoyant_action(const Tensor& positions, const ImportanceField& field,
                                 const WorldConfig& cfg) {
  Tessellation t = tessellate(positions, cfg);
  const Tensor& cents = weighted_centroids(t, field);
  Tensor u = Tensor::zeros(Shape{positions.rows(), 2});
  for (int i = 0; i < positions.rows(); ++i) {
    u.at(i, 0) = cents.at(i, 0) - positions.at(i, 0);
    u.at(i, 1) = cents.at(i, 1) - positions.at(i, 1);
  }
  clamp_norm_rows(u, cfg.u_max);
  return u;
}

// Each robot runs the same centroid chase over the positions it can hear
// (itself plus one-hop neighbors) with its own historically sensed map as
// the field. A robot that has discovered nothing holds still.
inline Tensor dcvt_action(const SwarmState& state, const CommGraph& graph,
                          const WorldConfig& cfg) {
  int n = state.num_robots();
  check(graph.n == n, "dcvt_action: graph size disagrees with swarm");
  Tensor u = Tensor::zeros(Shape{n, 2});
  for (int i = 0; i < n; ++i) {
    std::vector<int> members;
    members.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j)
      if (j == i || graph.edge(i, j)) members.push_back(j);  // ascending order
    Tensor sub(Shape{static_cast<int>(members.size()), 2});
    int self_idx = 0;
    for (std::size_t k = 0; k < members.size(); ++k) {
      if (members[k] == i) self_idx = static_cast<int>(k);
      sub.at(static_cast<int>(k), 0) = state.positions.at(members[k], 0);
      sub.at(static_cast<int>(k), 1) = state.positions.at(members[k], 1);
    }
    double cx = 0, cy = 0;
    single_region_centroid(sub, self_idx, state.known_idf[static_cast<std::size_t>(i)],
                           cfg.resolution, &cx, &cy);
    u.at(i, 0) = cx - state.positions.at(i, 0);
    u.at(i, 1) = cy - state.positions.at(i, 1);
  }
  clamp_norm_rows(u, cfg.u_max);
  return u;
}

}  // namespace madp
