#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "u5mr/hmc.hpp"

using namespace u5mr;

namespace {

// U(x) = sum x_i^2 / (2 s_i^2) - c x_0 x_1, a correlated Gaussian when c != 0.
struct Gaussian {
  std::vector<double> sd;
  double c = 0.0;

  double gradient(std::span<const double> x, std::span<double> g) const {
    double u = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      u += x[i] * x[i] / (2.0 * sd[i] * sd[i]);
      g[i] = x[i] / (sd[i] * sd[i]);
    }
    u -= c * x[0] * x[1];
    g[0] -= c * x[1];
    g[1] -= c * x[0];
    return u;
  }
};

double hamiltonian(const Gaussian& t, const std::vector<double>& q, const std::vector<double>& p) {
  std::vector<double> g(q.size());
  std::vector<double> one(q.size(), 1.0);
  return t.gradient(q, g) + kinetic_energy(p, one);
}

}  // namespace

TEST(Hmc, LeapfrogIsReversible) {
  Gaussian t{{1.0, 2.0, 0.5}, 0.2};
  std::vector<double> q{0.3, -1.2, 0.8}, p{1.0, 0.4, -0.7}, g(3), one(3, 1.0);
  t.gradient(q, g);
  auto fwd = leapfrog(t, q, p, g, 0.05, 40, one);
  for (auto& v : fwd.p) v = -v;
  auto back = leapfrog(t, fwd.q, fwd.p, fwd.grad, 0.05, 40, one);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_LT(std::abs(back.q[i] - q[i]), 1e-10);
    EXPECT_LT(std::abs(-back.p[i] - p[i]), 1e-10);
  }
}

TEST(Hmc, EnergyErrorScalesQuadratically) {
  Gaussian t{{1.0, 1.5, 0.7}, 0.1};
  std::vector<double> q{0.5, -0.4, 0.9}, p{-0.8, 0.6, 0.3}, one(3, 1.0);
  const double h0 = hamiltonian(t, q, p);
  std::vector<double> err;
  for (double eps : {0.08, 0.04, 0.02}) {
    std::vector<double> g(3);
    t.gradient(q, g);
    const int steps = static_cast<int>(std::lround(1.2 / eps));
    auto tr = leapfrog(t, q, p, g, eps, steps, one);
    err.push_back(std::abs(hamiltonian(t, tr.q, tr.p) - h0));
  }
  EXPECT_NEAR(err[0] / err[1], 4.0, 0.6);
  EXPECT_NEAR(err[1] / err[2], 4.0, 0.6);
}

TEST(Hmc, RecoversGaussianMoments) {
  Gaussian t{{1.0, 2.0, 0.5, 1.0}, 0.0};
  HmcConfig cfg;
  cfg.step_size = 0.2;
  cfg.leapfrog_steps = 10;
  cfg.warmup_iterations = 500;
  HmcKernel k(cfg, 4);
  Rng rng(99);
  std::vector<double> x(4, 1.0);
  for (int i = 0; i < cfg.warmup_iterations; ++i) k.step(x, t, rng);
  const int n = 20000;
  std::vector<std::vector<double>> draws(4);
  for (int i = 0; i < n; ++i) {
    k.step(x, t, rng);
    for (std::size_t j = 0; j < 4; ++j) draws[j].push_back(x[j]);
  }
  for (std::size_t j = 0; j < 4; ++j) {
    const double sd = t.sd[j];
    // Draws are close to independent after mass adaptation; allow for a
    // fourfold loss of effective sample size.
    EXPECT_NEAR(mean(draws[j]), 0.0, 4.0 * sd * std::sqrt(4.0 / n));
    EXPECT_NEAR(sample_variance(draws[j]) / (sd * sd), 1.0, 4.0 * std::sqrt(2.0 * 4.0 / n));
  }
  EXPECT_GT(k.post_warmup_acceptance(), 0.6);
}

TEST(Hmc, RecoversCorrelation) {
  // Precision [[1, -0.6], [-0.6, 1]]: covariance entries 1/0.64 and 0.6/0.64.
  Gaussian t{{1.0, 1.0}, 0.6};
  HmcConfig cfg;
  cfg.step_size = 0.2;
  cfg.leapfrog_steps = 12;
  cfg.warmup_iterations = 500;
  HmcKernel k(cfg, 2);
  Rng rng(7);
  std::vector<double> x{0.0, 0.0};
  for (int i = 0; i < cfg.warmup_iterations; ++i) k.step(x, t, rng);
  const int n = 20000;
  double sxy = 0.0, sxx = 0.0;
  for (int i = 0; i < n; ++i) {
    k.step(x, t, rng);
    sxy += x[0] * x[1];
    sxx += x[0] * x[0];
  }
  EXPECT_NEAR(sxx / n, 1.0 / 0.64, 0.1);
  EXPECT_NEAR(sxy / n, 0.6 / 0.64, 0.1);
}

TEST(Hmc, NonfiniteTrajectoryIsDivergent) {
  struct Cliff {
    double gradient(std::span<const double> x, std::span<double> g) const {
      g[0] = x[0];
      if (x[0] > 0.5) throw std::runtime_error("overflow");
      return x[0] * x[0] / 2.0;
    }
  } t;
  std::vector<double> x{0.4}, one{1.0};
  Rng rng(1);
  int divergent = 0;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> y = x;
    divergent += hmc_step(y, t, 0.5, 10, one, rng).divergent;
  }
  EXPECT_GT(divergent, 0);
}

TEST(Hmc, SplitRhat) {
  Rng rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> good(4), bad(4);
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 2000; ++i) {
      good[c].push_back(n(rng));
      bad[c].push_back(n(rng) + c);
    }
  EXPECT_LT(split_rhat(good), 1.01);
  EXPECT_GT(split_rhat(bad), 1.5);
}

TEST(Hmc, ConfigValidation) {
  HmcConfig cfg;
  cfg.leapfrog_steps = 0;
  EXPECT_THROW(cfg.validate(3), std::invalid_argument);
  cfg = {};
  cfg.mass = {1.0, 2.0};
  EXPECT_THROW(cfg.validate(3), std::invalid_argument);
}
