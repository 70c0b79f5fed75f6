#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace u5mr {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using Rng = std::mt19937_64;

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// log(exp(a) + exp(b))
inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return kNegInf;
  const double hi = *std::max_element(xs.begin(), xs.end());
  if (hi == kNegInf) return kNegInf;
  if (std::isinf(hi)) return hi;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

// Normalizes log-weights in place to probabilities; returns the log normalizer.
inline double normalize_log_weights(std::span<double> w) {
  const double lse = log_sum_exp(w);
  if (lse == kNegInf) throw std::domain_error("normalize_log_weights: all weights are zero");
  for (double& x : w) x = std::exp(x - lse);
  return lse;
}

// Index drawn from unnormalized log-weights. Returns -1 if every weight is zero.
template <class URBG>
int sample_log_categorical(std::span<const double> logw, URBG& rng) {
  const double lse = log_sum_exp(logw);
  if (lse == kNegInf) return -1;
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  int last_positive = -1;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    if (logw[i] == kNegInf) continue;
    last_positive = static_cast<int>(i);
    u -= std::exp(logw[i] - lse);
    if (u < 0.0) return last_positive;
  }
  return last_positive;
}

// Index into a cumulative probability table (last entry ~1).
template <class URBG>
std::size_t sample_cumulative(std::span<const double> cdf, URBG& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, cdf.back())(rng);
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<std::size_t>(it - cdf.begin());
}

// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return mix64(mix64(mix64(mix64(seed) ^ a) ^ b) ^ c);
}

// One independent generator per (seed, a, b, c) tuple.
inline Rng make_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                       std::uint64_t c = 0) {
  return Rng(stream_seed(seed, a, b, c));
}

inline double binomial_coefficient(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return std::round(r);
}

// Linear-interpolation quantile (R type 7).
inline double quantile(std::vector<double> xs, double prob) {
  if (xs.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

}  // namespace u5mr
