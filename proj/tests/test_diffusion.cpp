#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "madp/diffusion.hpp"
#include "madp/rng.hpp"
#include "support/stats.hpp"

using namespace madp;

TEST_CASE("linear noise schedule") {
  NoiseSchedule s = NoiseSchedule::linear();

  SECTION("endpoints and monotonicity") {
    REQUIRE(s.K == 1000);
    REQUIRE(s.a(1) == 0.9999);
    REQUIRE(s.a(1000) == Catch::Approx(0.98).margin(1e-15));
    for (int k = 2; k <= s.K; ++k) REQUIRE(s.a(k) < s.a(k - 1));
    for (int k = 2; k <= s.K; ++k) REQUIRE(s.abar_at(k) < s.abar_at(k - 1));
    REQUIRE(s.abar_at(1) == s.a(1));
    REQUIRE(s.abar_at(0) == 1.0);
  }

  SECTION("cumulative product matches a direct product oracle") {
    for (int k : {1, 7, 345, 1000}) {
      long double prod = 1.0L;
      for (int j = 1; j <= k; ++j)
        prod *= static_cast<long double>(0.9999 + (0.98 - 0.9999) * (j - 1) / 999.0);
      REQUIRE(s.abar_at(k) == Catch::Approx(static_cast<double>(prod)).epsilon(1e-12));
    }
    // terminal signal fraction is on the order of 1e-5
    REQUIRE(s.abar_at(1000) > 1e-6);
    REQUIRE(s.abar_at(1000) < 1e-4);
  }

  SECTION("bad parameters are rejected") {
    REQUIRE_THROWS_AS(NoiseSchedule::linear(0), std::invalid_argument);
    REQUIRE_THROWS_AS(NoiseSchedule::linear(10, 0.5, 0.9), std::invalid_argument);
    REQUIRE_THROWS_AS(NoiseSchedule::linear(10, 1.1, 0.9), std::invalid_argument);
    REQUIRE_THROWS_AS(s.a(0), std::invalid_argument);
    REQUIRE_THROWS_AS(s.abar_at(1001), std::invalid_argument);
  }
}

TEST_CASE("forward corruption") {
  NoiseSchedule s = NoiseSchedule::linear();

  SECTION("zero noise at step one scales by sqrt(alpha_1)") {
    Tensor u0({2, 3}, {1.0, -2.0, 0.5, 0.25, 3.0, -1.0});
    Tensor eps = Tensor::zeros({2, 3});
    Tensor u1 = forward_sample(u0, 1, eps, s);
    for (std::size_t i = 0; i < u0.data.size(); ++i)
      REQUIRE(u1.data[i] == std::sqrt(0.9999) * u0.data[i]);
  }

  SECTION("shape mismatch and step bounds are rejected") {
    Tensor u0 = Tensor::zeros({2, 3});
    REQUIRE_THROWS_AS(forward_sample(u0, 1, Tensor::zeros({2, 2}), s), std::invalid_argument);
    REQUIRE_THROWS_AS(forward_sample(u0, 0, Tensor::zeros({2, 3}), s), std::invalid_argument);
    REQUIRE_THROWS_AS(forward_sample(u0, 1001, Tensor::zeros({2, 3}), s), std::invalid_argument);
  }

  SECTION("terminal step is noise-dominated") {
    Rng rng(17);
    Tensor u0({2, 2}, {0.9, -0.4, 0.2, 0.7});
    Tensor eps = Tensor::randn({2, 2}, rng);
    Tensor uK = forward_sample(u0, s.K, eps, s);
    double residual = 0.0, bound = 0.0;
    for (std::size_t i = 0; i < u0.data.size(); ++i) {
      residual += (uK.data[i] - eps.data[i]) * (uK.data[i] - eps.data[i]);
      bound += u0.data[i] * u0.data[i];
    }
    // |U_K - eps| <= sqrt(abar)*|U0| + (1 - sqrt(1-abar))*|eps|; both tiny
    REQUIRE(std::sqrt(residual) <= std::sqrt(s.abar_at(s.K)) * std::sqrt(bound) + 1e-4);
  }

  SECTION("Monte Carlo marginals match the closed form at k in {1, K/2, K}") {
    Rng rng(5150);
    const int n = 100000;
    const double u0 = 0.7;
    Tensor u0t({1, 1}, {u0});
    for (int k : {1, 500, 1000}) {
      double ab = s.abar_at(k);
      std::vector<double> draws;
      draws.reserve(n);
      for (int i = 0; i < n; ++i) {
        Tensor eps({1, 1}, {rng.normal()});
        draws.push_back(forward_sample(u0t, k, eps, s).data[0]);
      }
      double want_mean = std::sqrt(ab) * u0;
      double want_var = 1.0 - ab;
      double se_mean = std::sqrt(want_var / n);
      double se_var = want_var * std::sqrt(2.0 / (n - 1));
      REQUIRE(std::abs(teststats::mean_of(draws) - want_mean) < 3.0 * se_mean + 1e-12);
      REQUIRE(std::abs(teststats::var_of(draws) - want_var) < 3.0 * se_var);
    }
  }

  SECTION("chained one-step corruption matches direct sampling in distribution") {
    Rng rng(99);
    const int n = 30000, k_stop = 40;
    const double u0 = -0.6;
    std::vector<double> chained;
    chained.reserve(n);
    for (int i = 0; i < n; ++i) {
      double u = u0;
      for (int k = 1; k <= k_stop; ++k)
        u = std::sqrt(s.a(k)) * u + std::sqrt(1.0 - s.a(k)) * rng.normal();
      chained.push_back(u);
    }
    double ab = s.abar_at(k_stop);
    double want_mean = std::sqrt(ab) * u0, want_var = 1.0 - ab;
    REQUIRE(std::abs(teststats::mean_of(chained) - want_mean) <
            3.0 * std::sqrt(want_var / n));
    REQUIRE(std::abs(teststats::var_of(chained) - want_var) <
            3.0 * want_var * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("ddim step subsets") {
  SECTION("full subset enumerates every step") {
    std::vector<int> ks = ddim_subset(1000, 1000);
    REQUIRE(static_cast<int>(ks.size()) == 1000);
    for (int i = 0; i < 1000; ++i) REQUIRE(ks[static_cast<std::size_t>(i)] == i + 1);
  }

  SECTION("sparse subsets keep both endpoints and strict order") {
    REQUIRE(ddim_subset(1000, 2) == std::vector<int>{1, 1000});
    REQUIRE(ddim_subset(5, 3) == std::vector<int>{1, 3, 5});
    std::vector<int> ks = ddim_subset(1000, 50);
    REQUIRE(static_cast<int>(ks.size()) == 50);
    REQUIRE(ks.front() == 1);
    REQUIRE(ks.back() == 1000);
    for (std::size_t i = 0; i + 1 < ks.size(); ++i) REQUIRE(ks[i] < ks[i + 1]);
  }

  SECTION("invalid subset sizes are rejected") {
    REQUIRE_THROWS_AS(ddim_subset(10, 11), std::invalid_argument);
    REQUIRE_THROWS_AS(ddim_subset(10, 0), std::invalid_argument);
  }
}

namespace {

// exact noise-prediction score for scalar data drawn from N(m, s^2)
struct GaussianScore {
  const NoiseSchedule* sched;
  double m, s2;
  mutable int calls = 0;

  Tensor operator()(const Tensor& u, int k) const {
    ++calls;
    double ab = sched->abar_at(k);
    Tensor out = u;
    for (double& v : out.data)
      v = std::sqrt(1.0 - ab) * (v - std::sqrt(ab) * m) / (ab * s2 + 1.0 - ab);
    return out;
  }
};

}  // namespace

TEST_CASE("ddim reverse sampler") {
  NoiseSchedule s = NoiseSchedule::linear(300);
  GaussianScore score{&s, 0.4, 0.25 * 0.25};

  SECTION("eta zero is a pure function of the prior and never draws noise") {
    Tensor prior({2, 3}, {0.3, -1.2, 0.8, 0.1, -0.5, 2.0});
    int noise_calls = 0;
    auto noise = [&](int) {
      ++noise_calls;
      return Tensor::zeros({2, 3});
    };
    Tensor a = ddim_sample(score, prior, s, 40, 0.0, noise);
    Tensor b = ddim_sample(score, prior, s, 40, 0.0, noise);
    REQUIRE(a.data == b.data);
    REQUIRE(noise_calls == 0);
    REQUIRE(a.finite());
  }

  SECTION("score is invoked once per subset step, largest step first") {
    Tensor prior({1, 1}, {0.5});
    std::vector<int> seen;
    auto spy = [&](const Tensor& u, int k) {
      seen.push_back(k);
      return score(u, k);
    };
    auto noise = [&](int) { return Tensor::zeros({1, 1}); };
    ddim_sample(spy, prior, s, 50, 0.0, noise);
    REQUIRE(static_cast<int>(seen.size()) == 50);
    REQUIRE(seen.front() == 300);
    REQUIRE(seen.back() == 1);
    REQUIRE(ddim_subset(300, 50) == std::vector<int>(seen.rbegin(), seen.rend()));
  }

  SECTION("eta one with every step matches the ancestral chain sampler") {
    const int n = 2500;
    Rng rng_a(2024), rng_b(4048), rng_perm(77);
    std::vector<double> ddim_draws, ancestral_draws;
    ddim_draws.reserve(n);
    ancestral_draws.reserve(n);

    for (int i = 0; i < n; ++i) {
      Tensor prior({1, 1}, {rng_a.normal()});
      auto noise = [&](int) { return Tensor({1, 1}, {rng_a.normal()}); };
      ddim_draws.push_back(ddim_sample(score, prior, s, s.K, 1.0, noise).data[0]);
    }

    // independent ancestral implementation of the reverse chain
    for (int i = 0; i < n; ++i) {
      double u = rng_b.normal();
      for (int k = s.K; k >= 1; --k) {
        double ab = s.abar_at(k), abp = s.abar_at(k - 1), a = s.a(k);
        double eps_hat = score(Tensor({1, 1}, {u}), k).data[0];
        u = (u - (1.0 - a) / std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(a);
        if (k > 1) {
          double sigma = std::sqrt((1.0 - abp) / (1.0 - ab) * (1.0 - a));
          u += sigma * rng_b.normal();
        }
      }
      ancestral_draws.push_back(u);
    }

    double p = teststats::energy_perm_pvalue(ddim_draws, ancestral_draws, 99, rng_perm);
    REQUIRE(p > 0.01);

    // both should concentrate near the data distribution N(0.4, 0.25^2)
    REQUIRE(std::abs(teststats::mean_of(ddim_draws) - 0.4) < 0.1);
    REQUIRE(teststats::var_of(ddim_draws) < 0.2);
  }

  SECTION("invalid eta is rejected") {
    Tensor prior({1, 1}, {0.0});
    auto noise = [&](int) { return Tensor({1, 1}, {0.0}); };
    REQUIRE_THROWS_AS(ddim_sample(score, prior, s, 10, 1.5, noise), std::invalid_argument);
    REQUIRE_THROWS_AS(ddim_sample(score, prior, s, 10, -0.1, noise), std::invalid_argument);
  }
}
