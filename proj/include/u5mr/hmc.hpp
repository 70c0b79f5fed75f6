#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "u5mr/numeric.hpp"

namespace u5mr {

/// A potential U(theta) = -log posterior that writes dU/dtheta into grad and
/// returns U.
template <class T>
concept PotentialTarget = requires(const T& t, std::span<const double> x, std::span<double> g) {
  { t.gradient(x, g) } -> std::convertible_to<double>;
};

struct HmcConfig {
  double step_size = 0.05;
  int leapfrog_steps = 25;
  std::vector<double> mass;  // diagonal; empty means identity
  int warmup_iterations = 1000;
  double target_acceptance = 0.8;
  int chain_length = 5000;
  int thin = 5;
  double step_jitter = 0.1;  // step size drawn uniformly in eps * [1 - j, 1 + j]
  bool adapt_mass = true;
  std::uint64_t seed = 1;

  void validate(std::size_t dim) const {
    if (!(step_size > 0.0)) throw std::invalid_argument("step_size must be positive");
    if (leapfrog_steps < 1) throw std::invalid_argument("leapfrog_steps must be at least 1");
    if (!mass.empty()) {
      if (mass.size() != dim) throw std::invalid_argument("mass vector has wrong length");
      for (double m : mass)
        if (!(m > 0.0)) throw std::invalid_argument("mass entries must be positive");
    }
    if (warmup_iterations < 0 || chain_length < 0) throw std::invalid_argument("iteration counts must be nonnegative");
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0))
      throw std::invalid_argument("target_acceptance must lie in (0,1)");
    if (thin < 1) throw std::invalid_argument("thin must be at least 1");
    if (step_jitter < 0.0 || step_jitter >= 1.0) throw std::invalid_argument("step_jitter must lie in [0,1)");
  }
};

struct Trajectory {
  std::vector<double> q, p, grad;
  double potential = 0.0;
  bool finite = true;
};

/// L leapfrog steps from (q, p) with dU/dq = grad at the start. The mass is
/// diagonal; inv_mass holds its reciprocal.
template <PotentialTarget T>
Trajectory leapfrog(const T& target, std::vector<double> q, std::vector<double> p, std::vector<double> grad,
                    double eps, int steps, std::span<const double> inv_mass) {
  const std::size_t n = q.size();
  Trajectory out;
  double u = 0.0;
  for (int s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < n; ++i) p[i] -= 0.5 * eps * grad[i];
    for (std::size_t i = 0; i < n; ++i) q[i] += eps * inv_mass[i] * p[i];
    try {
      u = target.gradient(q, grad);
    } catch (const std::exception&) {
      out.finite = false;
    }
    if (out.finite && !std::isfinite(u)) out.finite = false;
    for (std::size_t i = 0; out.finite && i < n; ++i)
      if (!std::isfinite(grad[i]) || !std::isfinite(q[i])) out.finite = false;
    if (!out.finite) break;
    for (std::size_t i = 0; i < n; ++i) p[i] -= 0.5 * eps * grad[i];
  }
  out.q = std::move(q);
  out.p = std::move(p);
  out.grad = std::move(grad);
  out.potential = u;
  return out;
}

inline double kinetic_energy(std::span<const double> p, std::span<const double> inv_mass) {
  double k = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) k += 0.5 * p[i] * p[i] * inv_mass[i];
  return k;
}

struct HmcStepInfo {
  double accept_prob = 0.0;
  bool accepted = false;
  bool divergent = false;
};

/// One HMC transition of theta (in place) targeting exp(-U).
template <PotentialTarget T, class URBG>
HmcStepInfo hmc_step(std::vector<double>& theta, const T& target, double eps, int steps,
                     std::span<const double> inv_mass, URBG& rng) {
  const std::size_t n = theta.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> grad(n), p(n);
  const double u0 = target.gradient(theta, grad);
  for (std::size_t i = 0; i < n; ++i) p[i] = normal(rng) / std::sqrt(inv_mass[i]);
  const double h0 = u0 + kinetic_energy(p, inv_mass);

  HmcStepInfo info;
  Trajectory tr = leapfrog(target, theta, std::move(p), std::move(grad), eps, steps, inv_mass);
  const double h1 = tr.finite ? tr.potential + kinetic_energy(tr.p, inv_mass) : 0.0;
  const double draw = unif(rng);
  if (!tr.finite || !std::isfinite(h1)) {
    info.divergent = true;
    return info;
  }
  info.accept_prob = std::min(1.0, std::exp(h0 - h1));
  if (draw < info.accept_prob) {
    theta = std::move(tr.q);
    info.accepted = true;
  }
  return info;
}

/// HMC kernel with warmup adaptation: Robbins-Monro steps on log(eps) toward
/// the target acceptance rate and a diagonal mass estimated from the middle of
/// warmup. Both are frozen after warmup.
class HmcKernel {
 public:
  HmcKernel() = default;
  HmcKernel(const HmcConfig& cfg, std::size_t dim) : cfg_(cfg), eps_(cfg.step_size) {
    cfg_.validate(dim);
    inv_mass_.assign(dim, 1.0);
    if (!cfg.mass.empty())
      for (std::size_t i = 0; i < dim; ++i) inv_mass_[i] = 1.0 / cfg.mass[i];
    mean_.assign(dim, 0.0);
    m2_.assign(dim, 0.0);
  }

  template <PotentialTarget T, class URBG>
  HmcStepInfo step(std::vector<double>& theta, const T& target, URBG& rng) {
    std::uniform_real_distribution<double> unif(1.0 - cfg_.step_jitter, 1.0 + cfg_.step_jitter);
    const double eps = cfg_.step_jitter > 0.0 ? eps_ * unif(rng) : eps_;
    HmcStepInfo info = hmc_step(theta, target, eps, cfg_.leapfrog_steps, inv_mass_, rng);
    if (info.divergent) ++divergent_;
    if (iteration_ < cfg_.warmup_iterations) adapt(info.accept_prob, theta);
    else {
      ++post_count_;
      post_accept_ += info.accept_prob;
    }
    ++iteration_;
    return info;
  }

  double step_size() const { return eps_; }
  std::span<const double> inverse_mass() const { return inv_mass_; }
  int iteration() const { return iteration_; }
  int divergent() const { return divergent_; }
  double post_warmup_acceptance() const { return post_count_ ? post_accept_ / post_count_ : 0.0; }
  const HmcConfig& config() const { return cfg_; }

 private:
  void adapt(double accept, const std::vector<double>& theta) {
    const int w = cfg_.warmup_iterations;
    const int mass_start = w * 15 / 100, mass_end = w * 75 / 100;
    ++rm_count_;
    log_eps_ += (accept - cfg_.target_acceptance) / std::pow(rm_count_ + 10.0, 0.6);
    log_eps_ = std::clamp(log_eps_, -12.0, 3.0);
    eps_ = cfg_.step_size * std::exp(log_eps_);

    if (cfg_.adapt_mass && iteration_ >= mass_start && iteration_ < mass_end) {
      ++n_;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double d = theta[i] - mean_[i];
        mean_[i] += d / n_;
        m2_[i] += d * (theta[i] - mean_[i]);
      }
      if (iteration_ + 1 == mass_end && n_ > 2) {
        const double nn = static_cast<double>(n_);
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const double var = m2_[i] / (nn - 1.0);
          inv_mass_[i] = std::max(1e-10, (nn / (nn + 5.0)) * var + 1e-3 * (5.0 / (nn + 5.0)));
        }
        rm_count_ = 0;
        avg_count_ = 0;
        avg_log_eps_ = 0.0;
      }
    }
    const int avg_start = cfg_.adapt_mass ? mass_end : w / 2;
    if (iteration_ >= avg_start) {
      ++avg_count_;
      avg_log_eps_ += (log_eps_ - avg_log_eps_) / avg_count_;
    }
    if (iteration_ + 1 == w && avg_count_ > 0) eps_ = cfg_.step_size * std::exp(avg_log_eps_);
  }

  HmcConfig cfg_;
  double eps_ = 0.05;
  double log_eps_ = 0.0;
  int rm_count_ = 0;
  std::vector<double> inv_mass_, mean_, m2_;
  int n_ = 0;
  int avg_count_ = 0;
  double avg_log_eps_ = 0.0;
  int iteration_ = 0;
  int divergent_ = 0;
  int post_count_ = 0;
  double post_accept_ = 0.0;
};

/// Split-chain potential scale reduction for one scalar over several chains.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    if (h < 2) continue;
    halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(h));
    halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(h), c.end());
  }
  if (halves.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double n = static_cast<double>(halves.front().size());
  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : halves) {
    means.push_back(mean(c));
    w += sample_variance(c);
  }
  w /= static_cast<double>(halves.size());
  const double b = n * sample_variance(means);
  if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

}  // namespace u5mr
