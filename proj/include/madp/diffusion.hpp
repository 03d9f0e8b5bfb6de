#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "madp/rng.hpp"
#include "madp/tensor.hpp"

namespace madp {

// Linear variance schedule: alpha_k decreases over [hi, lo]; abar_k is the
// running product that lets U_k be sampled from U_0 in one shot.
struct NoiseSchedule {
  int K = 0;
  std::vector<double> alpha;
  std::vector<double> abar;

  static NoiseSchedule linear(int K = 1000, double hi = 0.9999, double lo = 0.98) {
    check(K >= 1, "schedule: K must be positive");
    check(0.0 < lo && lo < hi && hi < 1.0, "schedule: need 0 < lo < hi < 1");
    NoiseSchedule s;
    s.K = K;
    s.alpha.resize(static_cast<std::size_t>(K));
    s.abar.resize(static_cast<std::size_t>(K));
    double prod = 1.0;
    for (int k = 1; k <= K; ++k) {
      double a = K == 1 ? hi : hi + (lo - hi) * (k - 1) / (K - 1);
      s.alpha[static_cast<std::size_t>(k - 1)] = a;
      prod *= a;
      s.abar[static_cast<std::size_t>(k - 1)] = prod;
    }
    return s;
  }

  double a(int k) const {
    check(k >= 1 && k <= K, "schedule: step out of range");
    return alpha[static_cast<std::size_t>(k - 1)];
  }

  // abar(0) = 1 so the final denoising step lands on the clean sample
  double abar_at(int k) const {
    check(k >= 0 && k <= K, "schedule: step out of range");
    return k == 0 ? 1.0 : abar[static_cast<std::size_t>(k - 1)];
  }
};

// U_k = sqrt(abar_k) U_0 + sqrt(1 - abar_k) eps
inline Tensor forward_sample(const Tensor& u0, int k, const Tensor& eps,
                             const NoiseSchedule& sched) {
  check(eps.shape == u0.shape, "forward_sample: noise shape must match actions");
  double ab = sched.abar_at(k);
  check(k >= 1, "forward_sample: step must be at least 1");
  double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
  Tensor out = u0;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = c0 * u0.data[i] + c1 * eps.data[i];
  return out;
}

// S denoising steps, evenly spaced over [1, K], always containing both ends.
inline std::vector<int> ddim_subset(int K, int S) {
  check(S >= 1 && S <= K, "ddim_subset: need 1 <= S <= K");
  std::vector<int> ks;
  if (S == 1) {
    ks.push_back(K);
    return ks;
  }
  for (int i = 0; i < S; ++i) {
    double x = 1.0 + static_cast<double>(i) * (K - 1) / (S - 1);
    ks.push_back(static_cast<int>(std::llround(x)));
  }
  for (std::size_t i = 0; i + 1 < ks.size(); ++i)
    check(ks[i] < ks[i + 1], "ddim_subset: steps must be strictly increasing");
  return ks;
}

// Reverse sampler. score(u, k) predicts the noise; noise(k_next) supplies the
// stochastic term for eta > 0 (never called when sigma is zero, so the eta=0
// path is a pure function of the prior).
template <class Score, class Noise>
inline Tensor ddim_sample(Score&& score, const Tensor& prior, const NoiseSchedule& sched, int S,
                          double eta, Noise&& noise) {
  check(eta >= 0.0 && eta <= 1.0, "ddim_sample: eta must lie in [0,1]");
  std::vector<int> ks = ddim_subset(sched.K, S);
  Tensor u = prior;
  for (int i = static_cast<int>(ks.size()) - 1; i >= 0; --i) {
    int k = ks[static_cast<std::size_t>(i)];
    int k_next = i > 0 ? ks[static_cast<std::size_t>(i - 1)] : 0;
    double ab_k = sched.abar_at(k);
    double ab_n = sched.abar_at(k_next);
    double sigma = eta * std::sqrt((1.0 - ab_n) / (1.0 - ab_k)) * std::sqrt(1.0 - ab_k / ab_n);
    double c0 = std::sqrt(ab_n / ab_k);
    double c1 = std::sqrt(1.0 - ab_k);
    double c2 = std::sqrt(std::max(0.0, 1.0 - ab_n - sigma * sigma));
    Tensor eps_hat = score(u, k);
    check(eps_hat.shape == u.shape, "ddim_sample: score output shape mismatch");
    double mix = c2 - c0 * c1;
    if (eta > 0.0 && sigma > 0.0) {
      Tensor z = noise(k_next);
      check(z.shape == u.shape, "ddim_sample: noise shape mismatch");
      for (std::size_t j = 0; j < u.data.size(); ++j)
        u.data[j] = c0 * u.data[j] + mix * eps_hat.data[j] + sigma * z.data[j];
    } else {
      for (std::size_t j = 0; j < u.data.size(); ++j)
        u.data[j] = c0 * u.data[j] + mix * eps_hat.data[j];
    }
  }
  return u;
}

}  // namespace madp
