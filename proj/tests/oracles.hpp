#pragma once
// Independent reference computations shared by the unit tests and the
// acceptance binary. None of these go through the library's fast paths.

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "u5mr/augmentation.hpp"
#include "u5mr/brass.hpp"
#include "u5mr/core.hpp"
#include "u5mr/posterior.hpp"
#include "u5mr/simulator.hpp"

namespace oracle {

using u5mr::Configuration;
using u5mr::CovariateProfile;

using Fert = std::function<double(int, int, const CovariateProfile&)>;
using Haz = std::function<double(int, int, const CovariateProfile&)>;

/// Normalized target over (birth-year set, deaths) for one SBH woman on the
/// whole-year grid, by looping over every bitmask of the fertile years.
inline std::map<Configuration, double> brute_force(const u5mr::SummaryBirthHistory& w, const Fert& f, const Haz& q,
                                                   int min_age = 15, int max_age = 49) {
  const int ts = w.survey_year;
  int first = ts - (w.mother_age_at_survey - min_age);
  int last = std::min(ts - 1, ts - (w.mother_age_at_survey - max_age));
  const int n = last - first + 1;
  std::map<Configuration, double> out;
  double total = 0.0;
  for (std::uint32_t born = 0; born < (1u << n); ++born) {
    if (std::popcount(born) != w.births) continue;
    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
      if (born >> i & 1u) idx.push_back(i);
    double base = 1.0;
    for (int i = 0; i < n; ++i) {
      const int t = first + i;
      const double p = f(w.mother_age_at_survey - (ts - t), t, w.covariates);
      base *= (born >> i & 1u) ? p : 1.0 - p;
    }
    for (std::uint32_t dead = 0; dead < (1u << w.births); ++dead) {
      if (std::popcount(dead) != w.deaths) continue;
      double prob = base;
      Configuration c;
      for (int j = 0; j < w.births; ++j) {
        const int tb = first + idx[j];
        double s = 1.0;
        for (int a = 0; tb + a < ts; ++a) s *= 1.0 - q(a, tb + a, w.covariates);
        const bool d = dead >> j & 1u;
        prob *= d ? 1.0 - s : s;
        c.birth_years.push_back(tb);
        c.death_indicators.push_back(d ? 1 : 0);
      }
      out[c] += prob;
      total += prob;
    }
  }
  for (auto& [c, p] : out) p /= total;
  return out;
}

inline double total_variation(const std::map<Configuration, double>& p, const std::map<Configuration, double>& q) {
  double s = 0.0;
  for (const auto& [c, v] : p) {
    auto it = q.find(c);
    s += std::abs(v - (it == q.end() ? 0.0 : it->second));
  }
  for (const auto& [c, v] : q)
    if (!p.count(c)) s += std::abs(v);
  return s / 2.0;
}

/// Brass logit q5 replicates by recomputing the tabulation from scratch for
/// every left-out woman.
inline std::vector<double> brute_force_jackknife(const std::vector<u5mr::SummaryBirthHistory>& sbh,
                                                 const u5mr::TrussellCoefficients& coef, const u5mr::LifeTables& lt,
                                                 u5mr::Family family, int group) {
  std::vector<double> reps;
  for (std::size_t i = 0; i < sbh.size(); ++i) {
    std::vector<u5mr::SummaryBirthHistory> rest;
    for (std::size_t j = 0; j < sbh.size(); ++j)
      if (j != i) rest.push_back(sbh[j]);
    if (auto v = u5mr::brass_logit_q5(u5mr::tabulate(rest), coef, lt, family, group)) reps.push_back(*v);
  }
  return reps;
}

/// Toy SBH women whose target has at most 200 configurations.
inline std::vector<u5mr::SummaryBirthHistory> toy_women() {
  std::vector<u5mr::SummaryBirthHistory> out;
  auto add = [&](int age, int b, int d) {
    u5mr::SummaryBirthHistory w;
    w.woman_id = "toy" + std::to_string(out.size());
    w.mother_age_at_survey = age;
    w.survey_year = 2010;
    w.births = b;
    w.deaths = d;
    w.covariates.is_sbh = true;
    out.push_back(w);
  };
  add(19, 2, 2);  // 6
  add(20, 2, 1);  // 20
  add(24, 2, 0);  // 36
  add(21, 3, 2);  // 60
  add(22, 3, 1);  // 105
  add(17, 1, 1);  // 2
  return out;
}

inline double toy_fertility(int m, int t, const CovariateProfile&) {
  if (m < 15 || m > 49) return 0.0;
  return 0.12 + 0.01 * (m - 15) + 0.004 * (t - 2000);
}

inline double toy_hazard(int a, int t, const CovariateProfile&) {
  const double base = a == 0 ? 0.09 : (a <= 4 ? 0.03 : 0.005);
  return base * (1.0 + 0.02 * (2010 - t));
}


/// Random binomial cells over a model's design rows. With k_one every cell has
/// k = 1; otherwise k is drawn from (0.4, 1).
inline u5mr::BinomialCells random_cells(const u5mr::ModelSpec& spec, u5mr::Rng& rng, bool k_one, int n_cells = 60) {
  std::uniform_int_distribution<int> age(spec.response == u5mr::Response::fertility ? spec.ages.min_age : 0,
                                         spec.response == u5mr::Response::fertility ? spec.ages.max_age : 8);
  const int first = spec.rw_axis.size() ? spec.rw_axis.starts.front() : 1990;
  std::uniform_int_distribution<int> year(first, first + 30), dist(0, spec.n_districts - 1), coin(0, 1),
      trials(1, 40);
  std::uniform_real_distribution<double> kd(0.4, 1.0), frac(0.0, 1.0);
  u5mr::CellBuilder b(spec, u5mr::ObservationRules{});
  for (int i = 0; i < n_cells; ++i) {
    u5mr::CovariateProfile x{dist(rng), coin(rng) ? u5mr::Strata::urban : u5mr::Strata::rural, 0, coin(rng) == 1};
    const auto c = b.cell(age(rng), year(rng), x, k_one ? 1.0 : kd(rng));
    const double n = trials(rng);
    b.add(c, std::floor(frac(rng) * (n + 1.0) * 0.999), n);
  }
  return b.cells();
}

/// Largest |analytic - central difference| / max(1, |analytic|, |fd|) over
/// the coordinates of theta, with the fourth-order five-point stencil.
inline double gradient_error(const u5mr::Posterior& post, std::vector<double> theta, double h = 1e-3) {
  std::vector<double> g(theta.size());
  post.gradient(theta, g);
  double worst = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double t0 = theta[j];
    auto at = [&](double d) {
      theta[j] = t0 + d;
      return post.value(theta);
    };
    const double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12.0 * h);
    theta[j] = t0;
    worst = std::max(worst, std::abs(g[j] - fd) / std::max({1.0, std::abs(g[j]), std::abs(fd)}));
  }
  return worst;
}

/// Trapezoid rule on a log grid for the PC prior: (total mass, P(sigma > u)).
inline std::pair<double, double> pc_prior_quadrature(double alpha, double u, bool literal = false) {
  // kappa = exp(eta); integrate p(kappa) * kappa over eta.
  auto integrate = [&](double lo, double hi) {
    const int n = 200000;
    const double h = (hi - lo) / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double eta = lo + i * h;
      const double w = (i == 0 || i == n) ? 0.5 : 1.0;
      s += w * std::exp(u5mr::pc_prior_logdensity(std::exp(eta), alpha, u, literal) + eta);
    }
    return s * h;
  };
  const double cut = std::log(1.0 / (u * u));  // sigma > u  <=>  kappa < 1/u^2
  const double tail = integrate(-40.0, cut);
  return {tail + integrate(cut, 80.0), tail};
}


/// Women whose children face the single-year hazards implied by one level of
/// a life-table family, constant over time; births follow the default
/// simulation fertility. Returns the summary histories and the level's q(5).
inline std::pair<std::vector<u5mr::SummaryBirthHistory>, double> life_table_cohort(const u5mr::LifeTables& lt,
                                                                                   u5mr::Family f, int level,
                                                                                   int n_women, std::uint64_t seed) {
  std::vector<double> l{1.0};
  std::vector<int> xs{0};
  for (int x : u5mr::kIndexAge) {
    xs.push_back(x);
    l.push_back(1.0 - lt.qx_at_level(f, level, x));
  }
  std::vector<double> h(60);
  for (int a = 0; a < 60; ++a) {
    std::size_t i = 0;
    while (i + 2 < xs.size() && xs[i + 1] <= a) ++i;
    h[a] = 1.0 - std::pow(l[i + 1] / l[i], 1.0 / (xs[i + 1] - xs[i]));
  }
  const u5mr::SimulationTruth truth;
  std::vector<u5mr::SummaryBirthHistory> out;
  u5mr::Rng rng(seed);
  std::uniform_int_distribution<int> age(15, 49);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < n_women; ++i) {
    u5mr::SummaryBirthHistory w;
    w.woman_id = "lt" + std::to_string(i);
    w.mother_age_at_survey = age(rng);
    w.survey_year = 2010;
    for (int m = 15; m < w.mother_age_at_survey; ++m) {
      if (unif(rng) >= truth.fertility_at(m)) continue;
      ++w.births;
      const int years = w.mother_age_at_survey - m;
      for (int a = 0; a < years; ++a)
        if (unif(rng) < h[static_cast<std::size_t>(a)]) {
          ++w.deaths;
          break;
        }
    }
    out.push_back(w);
  }
  return {out, lt.qx_at_level(f, level, 5)};
}

}  // namespace oracle
