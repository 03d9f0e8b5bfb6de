#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "madp/params.hpp"
#include "madp/rng.hpp"
#include "madp/tensor.hpp"
#include "madp/world.hpp"

namespace madp {

inline constexpr int kObsGrid = 32;      // cells per side of each local map
inline constexpr int kTokenDim = 32;     // perceptual embedding width

// Four local maps sampled on a kObsGrid x kObsGrid window centered on the
// robot: known-density, out-of-world boundary, neighbor relative x, neighbor
// relative y.
struct LocalObservation {
  Tensor channels;  // (4, kObsGrid, kObsGrid)
  double x = 0.0;   // robot position, meters
  double y = 0.0;
};

inline LocalObservation build_observation(const SwarmState& state, int robot,
                                           const CommGraph& graph, const WorldConfig& cfg) {
  check(robot >= 0 && robot < state.num_robots(), "build_observation: robot index out of range");
  check(graph.n == state.num_robots(), "build_observation: graph size mismatch");

  LocalObservation obs;
  obs.x = state.positions.at(robot, 0);
  obs.y = state.positions.at(robot, 1);
  obs.channels = Tensor::zeros({4, kObsGrid, kObsGrid});

  const double span = cfg.local_map_span;
  const double cell = span / kObsGrid;
  const Tensor& known = state.known_idf[static_cast<std::size_t>(robot)];

  // Density is the robot's known idf bilinearly sampled at the centers of the
  // downsampled window cells; the boundary map marks centers that fall outside
  // the world. Both are zero where the other is set.
  for (int r = 0; r < kObsGrid; ++r) {
    for (int c = 0; c < kObsGrid; ++c) {
      double wx = obs.x - span / 2 + (c + 0.5) * cell;
      double wy = obs.y - span / 2 + (r + 0.5) * cell;
      bool outside = wx < 0.0 || wx > cfg.side || wy < 0.0 || wy > cfg.side;
      if (outside) {
        obs.channels.at3(1, r, c) = 1.0;
      } else {
        obs.channels.at3(0, r, c) = sample_bilinear(known, cfg.resolution, cfg.side, wx, wy);
      }
    }
  }

  // One-hop neighbors splat their span-normalized offset into the window cell
  // containing them. Collisions keep the closest neighbor; neighbors outside
  // the window are dropped.
  std::vector<double> best_d2(static_cast<std::size_t>(kObsGrid) * kObsGrid, -1.0);
  for (int j : graph.neighbors(robot)) {
    double dx = state.positions.at(j, 0) - obs.x;
    double dy = state.positions.at(j, 1) - obs.y;
    if (std::abs(dx) > span / 2 || std::abs(dy) > span / 2) continue;
    int c = std::min(kObsGrid - 1, std::max(0, static_cast<int>(std::floor((dx + span / 2) / cell))));
    int r = std::min(kObsGrid - 1, std::max(0, static_cast<int>(std::floor((dy + span / 2) / cell))));
    double d2 = dx * dx + dy * dy;
    std::size_t slot = static_cast<std::size_t>(r) * kObsGrid + c;
    if (best_d2[slot] >= 0.0 && d2 >= best_d2[slot]) continue;
    best_d2[slot] = d2;
    obs.channels.at3(2, r, c) = dx / span;
    obs.channels.at3(3, r, c) = dy / span;
  }
  return obs;
}

// Three stride-2 3x3 convolutions (4 -> 8 -> 16 -> 32 channels), leaky-relu
// between them, spatial mean pool, then a linear head to the 32-d token.
struct PerceptionIds {
  int w1 = -1, b1 = -1;
  int w2 = -1, b2 = -1;
  int w3 = -1, b3 = -1;
  int pw = -1, pb = -1;
};

inline PerceptionIds perception_init(ParamStore& ps, Rng& rng,
                                     const std::string& prefix = "cnn") {
  auto conv = [&](const std::string& name, int oc, int ic) {
    double std = std::sqrt(2.0 / (ic * 9));
    return ps.add(prefix + "." + name + ".w", Tensor::randn({oc, ic, 3, 3}, rng, std));
  };
  PerceptionIds ids;
  ids.w1 = conv("conv1", 8, 4);
  ids.b1 = ps.add(prefix + ".conv1.b", Tensor::zeros({8}));
  ids.w2 = conv("conv2", 16, 8);
  ids.b2 = ps.add(prefix + ".conv2.b", Tensor::zeros({16}));
  ids.w3 = conv("conv3", 32, 16);
  ids.b3 = ps.add(prefix + ".conv3.b", Tensor::zeros({32}));
  double std = std::sqrt(2.0 / (kTokenDim + kTokenDim));
  ids.pw = ps.add(prefix + ".proj.w", Tensor::randn({kTokenDim, kTokenDim}, rng, std));
  ids.pb = ps.add(prefix + ".proj.b", Tensor::zeros({kTokenDim}));
  return ids;
}

inline Var perception_encode(ForwardPass& fp, const PerceptionIds& ids, const Tensor& channels) {
  check(channels.ndim() == 3 && channels.shape[0] == 4 && channels.shape[1] == kObsGrid &&
            channels.shape[2] == kObsGrid,
        "perception_encode: channels must be (4, 32, 32)");
  Var x = fp.tape->leaf(channels);
  Var h = conv2d(x, fp[ids.w1], fp[ids.b1], 2, 1);
  h = leaky_relu(h);
  h = conv2d(h, fp[ids.w2], fp[ids.b2], 2, 1);
  h = leaky_relu(h);
  h = conv2d(h, fp[ids.w3], fp[ids.b3], 2, 1);
  h = mean_hw(h);  // (32, 1)
  return add_col_broadcast(matmul(fp[ids.pw], h), fp[ids.pb]);
}

}  // namespace madp
