#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "madp/rng.hpp"

namespace teststats {

// sum over i<j of |v_i - v_j| in O(n log n) via the sorted prefix identity
inline double pairwise_abs_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double acc = 0.0, prefix = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += static_cast<double>(i) * v[i] - prefix;
    prefix += v[i];
  }
  return acc;
}

// sum over all (i,j) of |a_i - b_j|, with b pre-sorted, via prefix sums
inline double cross_abs_sum(const std::vector<double>& a, const std::vector<double>& b_sorted,
                            const std::vector<double>& b_prefix) {
  double total = b_prefix.back();
  double acc = 0.0;
  for (double x : a) {
    std::size_t c = static_cast<std::size_t>(
        std::upper_bound(b_sorted.begin(), b_sorted.end(), x) - b_sorted.begin());
    double below = c == 0 ? 0.0 : b_prefix[c - 1];
    acc += x * static_cast<double>(c) - below;
    acc += (total - below) - x * static_cast<double>(b_sorted.size() - c);
  }
  return acc;
}

// Szekely-Rizzo energy distance between two 1-d samples
inline double energy_distance_1d(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> bs = b;
  std::sort(bs.begin(), bs.end());
  std::vector<double> bp(bs.size());
  double run = 0.0;
  for (std::size_t i = 0; i < bs.size(); ++i) {
    run += bs[i];
    bp[i] = run;
  }
  double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double ab = cross_abs_sum(a, bs, bp) / (na * nb);
  double aa = 2.0 * pairwise_abs_sum(a) / (na * na);
  double bb = 2.0 * pairwise_abs_sum(b) / (nb * nb);
  return 2.0 * ab - aa - bb;
}

// permutation test on the energy distance; returns the p-value
inline double energy_perm_pvalue(const std::vector<double>& a, const std::vector<double>& b,
                                 int n_perm, madp::Rng& rng) {
  double observed = energy_distance_1d(a, b);
  std::vector<double> pool = a;
  pool.insert(pool.end(), b.begin(), b.end());
  int hits = 0;
  for (int p = 0; p < n_perm; ++p) {
    rng.shuffle(pool);
    std::vector<double> pa(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(a.size()));
    std::vector<double> pb(pool.begin() + static_cast<std::ptrdiff_t>(a.size()), pool.end());
    if (energy_distance_1d(pa, pb) >= observed) ++hits;
  }
  return (1.0 + hits) / (1.0 + n_perm);
}

inline double mean_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  return m / static_cast<double>(v.size());
}

inline double var_of(const std::vector<double>& v) {
  double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size() - 1);
}

}  // namespace teststats
