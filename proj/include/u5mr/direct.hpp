#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "u5mr/brass.hpp"
#include "u5mr/calendar.hpp"
#include "u5mr/core.hpp"
#include "u5mr/numeric.hpp"

namespace u5mr {

/// Inclusive calendar-year range.
struct Period {
  int start = 0;
  int end = 0;

  bool contains(double t) const { return std::floor(t) >= start && std::floor(t) <= end; }
  std::string label() const { return std::to_string(start) + "-" + std::to_string(end); }
};

inline std::vector<Period> regular_periods(int first, int width, int count) {
  std::vector<Period> out;
  for (int i = 0; i < count; ++i) out.push_back({first + i * width, first + (i + 1) * width - 1});
  return out;
}

struct DirectEstimate {
  int survey_id = 0;
  Period period;
  double logit_q5 = 0.0;
  double variance = 0.0;
  double q5 = 0.0;
  int clusters = 0;
  bool hiv_adjusted = false;
};

/// Weighted deaths and exposure for ages 0 and 1-4 inside a period.
struct HazardTally {
  double deaths0 = 0.0, exposure0 = 0.0, deaths14 = 0.0, exposure14 = 0.0;

  void add(const HazardTally& o, double sign = 1.0) {
    deaths0 += sign * o.deaths0;
    exposure0 += sign * o.exposure0;
    deaths14 += sign * o.deaths14;
    exposure14 += sign * o.exposure14;
  }

  // q5 = 1 - (1 - h0)(1 - h14)^4, with h the single-year hazards.
  std::optional<double> q5() const {
    if (exposure0 <= 0.0 || exposure14 <= 0.0) return std::nullopt;
    const double h0 = deaths0 / exposure0, h14 = deaths14 / exposure14;
    return 1.0 - (1.0 - h0) * std::pow(1.0 - h14, 4);
  }
};

inline HazardTally tally_woman(const FullBirthHistory& w, const Period& p, const ObservationRules& rules) {
  HazardTally t;
  for (const auto& c : w.children) {
    const int n_exp = rules.exposure_years(c.birth_year, w.survey_year);
    const int last = c.death_year ? rules.death_age(c.birth_year, *c.death_year, w.survey_year) : n_exp - 1;
    for (int a = 0; a <= std::min(last, 4); ++a) {
      const int year = c.birth_year + a;
      if (year < p.start || year > p.end) continue;
      const double exposure = w.weight * rules.hazard_factor(year, w.survey_year);
      const double death = (c.death_year && a == last) ? w.weight : 0.0;
      if (a == 0) {
        t.exposure0 += exposure;
        t.deaths0 += death;
      } else {
        t.exposure14 += exposure;
        t.deaths14 += death;
      }
    }
  }
  return t;
}

/// Weighted direct estimate of logit q5 for one survey and period, with a
/// delete-one-cluster jackknife variance (delete-one-woman when the survey has
/// a single cluster). nullopt when there is no exposure or no death.
inline std::optional<DirectEstimate> direct_estimate(const std::vector<FullBirthHistory>& women, const Period& p,
                                                     const ObservationRules& rules, std::string* why = nullptr) {
  auto fail = [&](const std::string& s) -> std::optional<DirectEstimate> {
    if (why) *why = s;
    return std::nullopt;
  };
  if (women.empty()) return fail("no women");
  std::map<int, HazardTally> by_cluster;
  std::vector<HazardTally> by_woman;
  HazardTally total;
  for (const auto& w : women) {
    const HazardTally t = tally_woman(w, p, rules);
    by_cluster[w.cluster].add(t);
    by_woman.push_back(t);
    total.add(t);
  }
  const auto q5 = total.q5();
  if (!q5) return fail("no exposure in period " + p.label());
  if (!(*q5 > 0.0)) return fail("no deaths in period " + p.label());
  if (!(*q5 < 1.0)) return fail("q5 equals 1 in period " + p.label());

  std::vector<double> reps;
  auto replicate = [&](const HazardTally& drop) {
    HazardTally t = total;
    t.add(drop, -1.0);
    if (auto q = t.q5(); q && *q > 0.0 && *q < 1.0) reps.push_back(logit(*q));
  };
  if (by_cluster.size() > 1)
    for (const auto& [c, t] : by_cluster) replicate(t);
  else
    for (const auto& t : by_woman) replicate(t);

  DirectEstimate e;
  e.survey_id = women.front().covariates.survey_id;
  e.period = p;
  e.q5 = *q5;
  e.logit_q5 = logit(*q5);
  e.variance = jackknife_variance(reps);
  e.clusters = static_cast<int>(by_cluster.size());
  if (!(e.variance > 0.0)) return fail("zero jackknife variance in period " + p.label());
  return e;
}

enum class HivMode {
  literal,        // expit(phi / k)
  observed_scale  // expit(phi) / k: observed mortality is k times the true value
};

struct AdjustedEstimate {
  double mean = 0.0;
  double variance = 0.0;
};

/// Monte Carlo HIV adjustment of a logit-scale estimate: draws phi ~ N(theta,
/// V), transforms them with k and returns the mean and variance of the
/// adjusted draws on the logit scale.
template <class URBG>
AdjustedEstimate hiv_adjust(double theta, double variance, double k, int n_draws, URBG& rng,
                            HivMode mode = HivMode::literal) {
  if (!(k > 0.0)) throw std::invalid_argument("HIV factor must be positive");
  if (variance < 0.0) throw std::invalid_argument("variance must be nonnegative");
  if (n_draws < 2) throw std::invalid_argument("need at least two draws");
  std::normal_distribution<double> normal(theta, std::sqrt(variance));
  double m = 0.0, s = 0.0;
  for (int i = 0; i < n_draws; ++i) {
    const double phi = variance > 0.0 ? normal(rng) : theta;
    double v;
    if (mode == HivMode::literal) {
      v = phi / k;  // logit(expit(phi / k))
    } else {
      const double p = std::min(expit(phi) / k, 1.0 - 1e-12);
      v = logit(p);
    }
    const double d = v - m;
    m += d / (i + 1);
    s += d * (v - m);
  }
  return {m, s / (n_draws - 1)};
}

struct SourceEstimate {
  std::string source;
  double theta = 0.0;
  double variance = 0.0;
};

struct FusedEstimate {
  Period period;
  double theta = 0.0;
  double variance = 0.0;
  std::vector<std::string> sources;
};

/// Inverse-variance weighting.
inline std::optional<FusedEstimate> fuse(const std::vector<SourceEstimate>& parts, const Period& p) {
  if (parts.empty()) return std::nullopt;
  double prec = 0.0, acc = 0.0, vmin = std::numeric_limits<double>::infinity();
  FusedEstimate f;
  f.period = p;
  for (const auto& s : parts) {
    if (!(s.variance > 0.0)) throw std::invalid_argument("source '" + s.source + "' has nonpositive variance");
    prec += 1.0 / s.variance;
    acc += s.theta / s.variance;
    vmin = std::min(vmin, s.variance);
    f.sources.push_back(s.source);
  }
  // 1/prec can round one ulp above the smallest input.
  f.variance = std::min(1.0 / prec, vmin);
  f.theta = f.variance * acc;
  return f;
}

/// Brass estimate assigned to the period containing floor(reference time).
inline std::optional<std::size_t> period_of(double reference_time, const std::vector<Period>& periods) {
  for (std::size_t i = 0; i < periods.size(); ++i)
    if (periods[i].contains(reference_time)) return i;
  return std::nullopt;
}

}  // namespace u5mr
