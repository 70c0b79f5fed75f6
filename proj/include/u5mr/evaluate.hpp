#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "u5mr/core.hpp"
#include "u5mr/direct.hpp"
#include "u5mr/numeric.hpp"

namespace u5mr {

/// FP(m; t; d; s): number of women of age m in year t, district d, strata s.
struct PopulationCount {
  int age = 0;
  int year = 0;
  int district = 0;
  Strata strata = Strata::rural;
  std::int64_t women = 0;
};

/// CEB-weighted average of cell q5 values.
inline double weighted_q5(std::span<const double> ceb, std::span<const double> q5) {
  if (ceb.size() != q5.size()) throw std::invalid_argument("weights and q5 values differ in length");
  double w = 0.0, s = 0.0;
  for (std::size_t i = 0; i < ceb.size(); ++i) {
    w += ceb[i];
    s += ceb[i] * q5[i];
  }
  if (!(w > 0.0)) throw std::invalid_argument("all CEB weights are zero");
  return s / w;
}

struct AggregationResult {
  // (period index, district) -> q5 draws, one per usable sample.
  std::map<std::pair<int, int>, std::vector<double>> draws;
  std::vector<std::string> diagnostics;
};

/// For every sample j, draws CEB(m;t;d;s) ~ Binomial(FP, f_j(m,t,d,s)) and
/// averages q5_j(t;d;s) over the years of each period and both strata with
/// weights proportional to the CEB totals of each (t, s).
template <class URBG>
AggregationResult aggregate_q5(const std::vector<PopulationCount>& fp, const std::vector<Period>& periods,
                               int n_samples,
                               const std::function<double(int j, int m, int t, int d, Strata s)>& f,
                               const std::function<double(int j, int t, int d, Strata s)>& q5, URBG& rng) {
  AggregationResult out;
  for (int j = 0; j < n_samples; ++j) {
    // (p, d) -> (t, s) -> CEB total
    std::map<std::pair<int, int>, std::map<std::pair<int, Strata>, double>> ceb;
    for (const auto& c : fp) {
      if (c.women < 0) throw std::invalid_argument("negative population count");
      const auto p = period_of(c.year, periods);
      if (!p) continue;
      const double prob = std::clamp(f(j, c.age, c.year, c.district, c.strata), 0.0, 1.0);
      std::binomial_distribution<std::int64_t> bin(c.women, prob);
      ceb[{static_cast<int>(*p), c.district}][{c.year, c.strata}] += static_cast<double>(bin(rng));
    }
    for (const auto& [pd, cells] : ceb) {
      std::vector<double> w, q;
      for (const auto& [ts, n] : cells) {
        w.push_back(n);
        q.push_back(q5(j, ts.first, pd.second, ts.second));
      }
      double total = 0.0;
      for (double v : w) total += v;
      if (!(total > 0.0)) {
        out.diagnostics.push_back("sample " + std::to_string(j) + " period " + periods[pd.first].label() +
                                  " district " + std::to_string(pd.second) + ": zero CEB, skipped");
        continue;
      }
      out.draws[pd].push_back(weighted_q5(w, q));
    }
  }
  return out;
}

/// One (district, period) comparison cell: a model estimate on the logit scale
/// and a held-out direct estimate.
struct EvaluationCell {
  double model_mean = 0.0;      // E[Y_dp]
  double model_variance = 0.0;  // Var(Y_dp)
  double holdout = 0.0;         // y_dp
  double holdout_variance = 0.0;
};

struct MseParts {
  double mse = 0.0;
  double bias_term = 0.0;
  double variance_term = 0.0;
  std::size_t cells = 0;
};

/// Sum_d w_dp (E[Y] - y)^2 + Sum_d w_dp Var(Y), w_dp proportional to the
/// inverse holdout variances. Cells with a nonfinite entry or nonpositive
/// holdout variance are dropped and the weights renormalized.
inline MseParts weighted_mse(const std::vector<EvaluationCell>& cells) {
  double wsum = 0.0;
  std::vector<const EvaluationCell*> used;
  for (const auto& c : cells) {
    if (!std::isfinite(c.model_mean) || !std::isfinite(c.model_variance) || !std::isfinite(c.holdout) ||
        !(c.holdout_variance > 0.0) || !std::isfinite(c.holdout_variance))
      continue;
    used.push_back(&c);
    wsum += 1.0 / c.holdout_variance;
  }
  MseParts r;
  r.cells = used.size();
  if (used.empty()) throw std::invalid_argument("no usable evaluation cells");
  for (const auto* c : used) {
    const double w = (1.0 / c->holdout_variance) / wsum;
    const double b = c->model_mean - c->holdout;
    r.bias_term += w * b * b;
    r.variance_term += w * c->model_variance;
  }
  r.mse = r.bias_term + r.variance_term;
  return r;
}

struct PareCell {
  double estimate = 0.0;  // model q5
  double holdout = 0.0;   // held-out q5
  double holdout_variance = 0.0;
};

/// (1/D) Sum_d w_dp |q_hat - q| / q with D the number of usable districts, or
/// D = 9 when `literal_ninth` is set.
inline double pare(const std::vector<PareCell>& cells, bool literal_ninth = false,
                   std::vector<std::string>* diag = nullptr) {
  double wsum = 0.0;
  std::vector<const PareCell*> used;
  for (const auto& c : cells) {
    if (!(c.holdout > 0.0)) {
      if (diag) diag->push_back("zero holdout q5; cell dropped");
      continue;
    }
    if (!(c.holdout_variance > 0.0)) {
      if (diag) diag->push_back("nonpositive holdout variance; cell dropped");
      continue;
    }
    used.push_back(&c);
    wsum += 1.0 / c.holdout_variance;
  }
  if (used.empty()) throw std::invalid_argument("no usable PARE cells");
  double s = 0.0;
  for (const auto* c : used) s += (1.0 / c->holdout_variance) / wsum * std::abs(c->estimate - c->holdout) / c->holdout;
  const double denom = literal_ninth ? 9.0 : static_cast<double>(used.size());
  return s / denom;
}

/// Random half of the clusters, chosen by seed.
inline std::set<int> holdout_clusters(std::vector<int> clusters, std::uint64_t seed) {
  std::sort(clusters.begin(), clusters.end());
  clusters.erase(std::unique(clusters.begin(), clusters.end()), clusters.end());
  Rng rng = make_stream(seed, 0x484F4C44);
  std::shuffle(clusters.begin(), clusters.end(), rng);
  return {clusters.begin(), clusters.begin() + static_cast<std::ptrdiff_t>(clusters.size() / 2)};
}

/// Period rows by model columns, plus an average row.
struct MetricTable {
  std::vector<std::string> periods;
  std::vector<std::string> models;
  std::vector<std::vector<double>> values;  // [period][model]; NaN for missing

  std::vector<double> averages() const {
    std::vector<double> avg(models.size(), 0.0);
    for (std::size_t m = 0; m < models.size(); ++m) {
      double s = 0.0;
      int n = 0;
      for (const auto& row : values)
        if (std::isfinite(row[m])) {
          s += row[m];
          ++n;
        }
      avg[m] = n ? s / n : std::numeric_limits<double>::quiet_NaN();
    }
    return avg;
  }
};

}  // namespace u5mr
