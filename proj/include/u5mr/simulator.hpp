#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "u5mr/core.hpp"
#include "u5mr/numeric.hpp"

namespace u5mr {

/// Ground truth for the simulator: fertility constant within 5-year maternal
/// age bands and over time; hazards constant within 5-year periods and three
/// child-age bands (0, 1-4, 5+).
struct SimulationTruth {
  FertileAges ages{15, 49};
  std::vector<int> fertility_band_starts{15, 20, 25, 30, 35};
  std::vector<double> fertility{0.15, 0.30, 0.27, 0.23, 0.10};

  std::vector<int> period_starts{1975, 1980, 1985, 1990, 1995, 2000, 2005};
  std::vector<double> q0{0.150, 0.140, 0.130, 0.120, 0.105, 0.085, 0.070};
  std::vector<double> q1_4{0.040, 0.037, 0.034, 0.031, 0.026, 0.020, 0.015};
  std::vector<double> q5_plus{0.006, 0.006, 0.005, 0.005, 0.004, 0.004, 0.003};

  int band_of_age(int m) const {
    if (!ages.contains(m)) return -1;
    auto it = std::upper_bound(fertility_band_starts.begin(), fertility_band_starts.end(), m);
    return static_cast<int>(it - fertility_band_starts.begin()) - 1;
  }

  // Years outside the configured periods take the nearest period's hazards.
  int period_of_year(int t) const {
    auto it = std::upper_bound(period_starts.begin(), period_starts.end(), t);
    return std::max(0, static_cast<int>(it - period_starts.begin()) - 1);
  }

  double fertility_at(int m) const {
    const int b = band_of_age(m);
    return b < 0 ? 0.0 : fertility[static_cast<std::size_t>(b)];
  }

  double hazard_at(int a, int t) const {
    const auto p = static_cast<std::size_t>(period_of_year(t));
    if (a == 0) return q0[p];
    if (a <= 4) return q1_4[p];
    return q5_plus[p];
  }

  double q5_in_period(std::size_t p) const {
    return 1.0 - (1.0 - q0[p]) * std::pow(1.0 - q1_4[p], 4);
  }

  void validate() const {
    if (fertility.size() != fertility_band_starts.size() || fertility.empty())
      throw std::invalid_argument("fertility bands and values differ in length");
    const auto n = period_starts.size();
    if (n == 0 || q0.size() != n || q1_4.size() != n || q5_plus.size() != n)
      throw std::invalid_argument("hazard tables must have one entry per period");
    if (!std::is_sorted(fertility_band_starts.begin(), fertility_band_starts.end()) ||
        !std::is_sorted(period_starts.begin(), period_starts.end()))
      throw std::invalid_argument("band and period starts must be sorted");
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    for (const auto* v : {&fertility, &q0, &q1_4, &q5_plus})
      if (!std::all_of(v->begin(), v->end(), in_unit))
        throw std::invalid_argument("truth probabilities must lie in [0,1]");
  }
};

struct TruthFertility {
  const SimulationTruth* truth;
  double operator()(int m, int, const CovariateProfile&) const { return truth->fertility_at(m); }
};

struct TruthHazard {
  const SimulationTruth* truth;
  double operator()(int a, int t, const CovariateProfile&) const { return truth->hazard_at(a, t); }
};

struct SimulationConfig {
  int n_women = 5000;
  int n_fbh = 1000;
  int survey_year = 2010;
  int cluster_size = 25;
  std::vector<double> age_distribution;  // over ages 15..49; empty means uniform
  SimulationTruth truth;
  std::uint64_t seed = 2010;

  void validate() const {
    if (n_women < 0 || n_fbh < 0 || n_fbh > n_women)
      throw std::invalid_argument("need 0 <= n_fbh <= n_women");
    if (cluster_size < 1) throw std::invalid_argument("cluster_size must be positive");
    if (!age_distribution.empty()) {
      if (age_distribution.size() != 35) throw std::invalid_argument("age distribution must cover ages 15..49");
      double s = 0.0;
      for (double p : age_distribution) {
        if (p < 0.0) throw std::invalid_argument("age distribution has a negative entry");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-12) throw std::invalid_argument("age distribution must sum to 1");
    }
    truth.validate();
  }
};

/// One woman's full history: a Bernoulli birth draw for every year from the
/// minimum fertile age up to the year before the survey, then yearly death
/// draws for each child through the survey year.
template <class URBG>
FullBirthHistory simulate_woman(int age_at_survey, int survey_year, const SimulationTruth& truth,
                                URBG& rng) {
  if (age_at_survey < truth.ages.min_age) throw std::invalid_argument("woman is younger than the fertile range");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  FullBirthHistory w;
  w.mother_age_at_survey = age_at_survey;
  w.survey_year = survey_year;
  for (int m = truth.ages.min_age; m < age_at_survey; ++m) {
    const int t = survey_year - (age_at_survey - m);
    if (unif(rng) < truth.fertility_at(m)) w.children.push_back(Child{t, std::nullopt});
  }
  for (auto& c : w.children) {
    for (int a = 0; c.birth_year + a < survey_year; ++a) {
      if (unif(rng) < truth.hazard_at(a, c.birth_year + a)) {
        c.death_year = c.birth_year + a + 1;
        break;
      }
    }
  }
  return w;
}

struct SimulatedCohort {
  std::vector<FullBirthHistory> fbh;
  std::vector<SummaryBirthHistory> sbh;
  SimulationTruth truth;
  int survey_year = 0;
  std::vector<std::string> surveys{"survey_fbh", "survey_sbh"};
  std::vector<std::string> districts{"district_1"};
};

/// The first n_fbh women keep their full histories; the rest are collapsed to
/// summary histories. Woman i draws from its own stream (seed, i).
inline SimulatedCohort simulate_cohort(const SimulationConfig& cfg) {
  cfg.validate();
  std::vector<double> weights = cfg.age_distribution;
  if (weights.empty()) weights.assign(35, 1.0 / 35.0);
  std::discrete_distribution<int> age_dist(weights.begin(), weights.end());

  SimulatedCohort out;
  out.truth = cfg.truth;
  out.survey_year = cfg.survey_year;
  out.fbh.reserve(static_cast<std::size_t>(cfg.n_fbh));
  out.sbh.reserve(static_cast<std::size_t>(cfg.n_women - cfg.n_fbh));
  for (int i = 0; i < cfg.n_women; ++i) {
    Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(i));
    const int age = 15 + age_dist(rng);
    FullBirthHistory w = simulate_woman(age, cfg.survey_year, cfg.truth, rng);
    w.woman_id = "w" + std::to_string(i + 1);
    w.cluster = i / cfg.cluster_size;
    w.covariates = CovariateProfile{0, Strata::rural, 0, false};
    if (i < cfg.n_fbh) {
      out.fbh.push_back(std::move(w));
    } else {
      SummaryBirthHistory s = summarize(w);
      s.covariates.survey_id = 1;
      s.covariates.is_sbh = true;
      out.sbh.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace u5mr
