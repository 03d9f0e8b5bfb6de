#pragma once

// Grid Voronoi tessellation and the coverage cost, evaluated on the same grid
// as the importance field so the two are exactly consistent.

#include <cstdint>
#include <vector>

#include "madp/tensor.hpp"
#include "madp/world.hpp"

namespace madp {

namespace detail {
// Shared by every consumer (tessellation, cost, single-region centroids) so
// distance arithmetic and the lowest-index tie rule agree bit-for-bit.
inline int nearest_robot(double cx, double cy, const Tensor& positions, double* d2_out) {
  int best = 0;
  double bd = -1.0;
  for (int i = 0; i < positions.rows(); ++i) {
    double dx = positions.at(i, 0) - cx;
    double dy = positions.at(i, 1) - cy;
    double d2 = dx * dx + dy * dy;
    if (bd < 0.0 || d2 < bd) {
      bd = d2;
      best = i;
    }
  }
  if (d2_out) *d2_out = bd;
  return best;
}
}  // namespace detail

struct Tessellation {
  int n_robots = 0;
  int cells = 0;              // grid side in cells
  double resolution = 1.0;
  Tensor positions;           // (N,2) generating sites
  std::vector<std::int32_t> assign;  // robot index per cell, row-major (y,x)

  // filled by weighted_centroids
  std::vector<double> mass;
  Tensor centroids;           // (N,2)
};

inline Tessellation tessellate(const Tensor& positions, const WorldConfig& cfg) {
  check(positions.ndim() == 2 && positions.cols() == 2 && positions.rows() >= 1,
        "tessellate: positions must be (N>=1, 2)");
  Tessellation t;
  t.n_robots = positions.rows();
  t.cells = cfg.cells();
  t.resolution = cfg.resolution;
  t.positions = positions;
  t.assign.resize(static_cast<std::size_t>(t.cells) * t.cells);
  for (int iy = 0; iy < t.cells; ++iy) {
    double cy = (iy + 0.5) * cfg.resolution;
    for (int ix = 0; ix < t.cells; ++ix) {
      double cx = (ix + 0.5) * cfg.resolution;
      t.assign[static_cast<std::size_t>(iy) * t.cells + ix] =
          static_cast<std::int32_t>(detail::nearest_robot(cx, cy, positions, nullptr));
    }
  }
  return t;
}

// Riemann sum of squared distance to the assigned robot, weighted by the
// field, over all cells. Identical arithmetic to the direct min-over-robots
// sum because the assignment is the argmin.
inline double coverage_cost(const Tensor& positions, const ImportanceField& field) {
  check(positions.ndim() == 2 && positions.cols() == 2, "coverage_cost: positions must be (N,2)");
  int n = field.cells();
  double area = field.cell_area();
  double cost = 0.0;
  for (int iy = 0; iy < n; ++iy) {
    double cy = field.center_y(iy);
    for (int ix = 0; ix < n; ++ix) {
      double phi = field.grid.at(iy, ix);
      if (phi == 0.0) continue;
      double d2 = 0.0;
      detail::nearest_robot(field.center_x(ix), cy, positions, &d2);
      cost += d2 * phi * area;
    }
  }
  return cost;
}

// Same cost via a precomputed tessellation (used by rollouts to avoid a
// second pass). Skipping zero cells keeps it bitwise equal to coverage_cost.
inline double coverage_cost(const Tessellation& t, const ImportanceField& field) {
  int n = field.cells();
  double area = field.cell_area();
  double cost = 0.0;
  for (int iy = 0; iy < n; ++iy) {
    double cy = field.center_y(iy);
    for (int ix = 0; ix < n; ++ix) {
      double phi = field.grid.at(iy, ix);
      if (phi == 0.0) continue;
      int r = t.assign[static_cast<std::size_t>(iy) * n + ix];
      double dx = t.positions.at(r, 0) - field.center_x(ix);
      double dy = t.positions.at(r, 1) - cy;
      cost += (dx * dx + dy * dy) * phi * area;
    }
  }
  return cost;
}

// Field-weighted centroid of each robot's region; zero-mass regions fall back
// to the robot's own position so Lloyd iterations are total.
inline const Tensor& weighted_centroids(Tessellation& t, const ImportanceField& field) {
  int n = field.cells();
  check(n == t.cells, "weighted_centroids: tessellation and field grids disagree");
  t.mass.assign(static_cast<std::size_t>(t.n_robots), 0.0);
  std::vector<double> wx(static_cast<std::size_t>(t.n_robots), 0.0);
  std::vector<double> wy(static_cast<std::size_t>(t.n_robots), 0.0);
  for (int iy = 0; iy < n; ++iy) {
    double cy = field.center_y(iy);
    for (int ix = 0; ix < n; ++ix) {
      double phi = field.grid.at(iy, ix);
      if (phi == 0.0) continue;
      std::size_t r = static_cast<std::size_t>(t.assign[static_cast<std::size_t>(iy) * n + ix]);
      t.mass[r] += phi;
      wx[r] += phi * field.center_x(ix);
      wy[r] += phi * cy;
    }
  }
  t.centroids = Tensor::zeros(Shape{t.n_robots, 2});
  for (int i = 0; i < t.n_robots; ++i) {
    std::size_t r = static_cast<std::size_t>(i);
    if (t.mass[r] > 0.0) {
      t.centroids.at(i, 0) = wx[r] / t.mass[r];
      t.centroids.at(i, 1) = wy[r] / t.mass[r];
    } else {
      t.centroids.at(i, 0) = t.positions.at(i, 0);
      t.centroids.at(i, 1) = t.positions.at(i, 1);
    }
  }
  return t.centroids;
}

// Centroid of one robot's region without materializing the assignment;
// arithmetic and accumulation order match weighted_centroids exactly.
inline void single_region_centroid(const Tensor& positions, int which, const Tensor& grid,
                                   double resolution, double* out_x, double* out_y) {
  int n = grid.rows();
  double mass = 0.0, wx = 0.0, wy = 0.0;
  for (int iy = 0; iy < n; ++iy) {
    double cy = (iy + 0.5) * resolution;
    for (int ix = 0; ix < n; ++ix) {
      double phi = grid.at(iy, ix);
      if (phi == 0.0) continue;
      double cx = (ix + 0.5) * resolution;
      if (detail::nearest_robot(cx, cy, positions, nullptr) != which) continue;
      mass += phi;
      wx += phi * cx;
      wy += phi * cy;
    }
  }
  if (mass > 0.0) {
    *out_x = wx / mass;
    *out_y = wy / mass;
  } else {
    *out_x = positions.at(which, 0);
    *out_y = positions.at(which, 1);
  }
}

}  // namespace madp
