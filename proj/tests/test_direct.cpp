#include <gtest/gtest.h>

#include <random>

#include "u5mr/direct.hpp"
#include "u5mr/evaluate.hpp"
#include "u5mr/simulator.hpp"

using namespace u5mr;

TEST(Fusion, EqualVariancesAverage) {
  const Period p{2005, 2009};
  const auto f = fuse({{"a", -2.0, 0.04}, {"b", -1.5, 0.04}}, p);
  ASSERT_TRUE(f.has_value());
  EXPECT_EQ(f->theta, -1.75);
  EXPECT_EQ(f->variance, 0.02);
}

TEST(Fusion, VarianceNeverExceedsSmallestComponent) {
  Rng rng(17);
  std::uniform_real_distribution<double> th(-4.0, 0.0), lv(-6.0, 1.0);
  std::uniform_int_distribution<int> k(1, 6);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<SourceEstimate> parts;
    double vmin = 1e300;
    for (int i = 0, n = k(rng); i < n; ++i) {
      parts.push_back({"s", th(rng), std::exp(lv(rng))});
      vmin = std::min(vmin, parts.back().variance);
    }
    const auto f = fuse(parts, {});
    ASSERT_LE(f->variance, vmin);
  }
}

TEST(Fusion, RejectsNonpositiveVariance) {
  EXPECT_THROW(fuse({{"a", 0.0, 0.0}}, {}), std::invalid_argument);
  EXPECT_FALSE(fuse({}, {}).has_value());
}

TEST(Hiv, UnitFactorIsIdentity) {
  Rng rng(1);
  const auto a = hiv_adjust(-2.0, 0.05, 1.0, 100000, rng);
  EXPECT_NEAR(a.mean, -2.0, 0.005);
  EXPECT_NEAR(a.variance, 0.05, 0.002);
}

TEST(Hiv, ModesMoveInOppositeDirections) {
  Rng rng(2);
  const double theta = logit(0.10);
  const auto lit = hiv_adjust(theta, 0.01, 0.9, 100000, rng, HivMode::literal);
  const auto obs = hiv_adjust(theta, 0.01, 0.9, 100000, rng, HivMode::observed_scale);
  EXPECT_NEAR(lit.mean, theta / 0.9, 0.005);
  EXPECT_NEAR(expit(obs.mean), 0.10 / 0.9, 0.002);
  EXPECT_LT(lit.mean, theta);
  EXPECT_GT(obs.mean, theta);
}

TEST(Direct, MatchesHandTally) {
  FullBirthHistory a, b;
  a.cluster = 0;
  a.mother_age_at_survey = 30;
  a.survey_year = 2010;
  a.children = {{2005, 2006}, {2007, std::nullopt}};
  b = a;
  b.cluster = 1;
  b.weight = 2.0;
  b.children = {{2006, std::nullopt}};
  FullBirthHistory c = a;
  c.cluster = 2;
  c.children = {{2008, 2009}};
  const Period p{2005, 2009};
  const auto e = direct_estimate({a, b, c}, p, ObservationRules{});
  ASSERT_TRUE(e.has_value());
  // Age 0: a has 2 child-years (one death), b one year at weight 2, c one
  // year with a death. Ages 1-4: a 2 years, b 3 years at weight 2.
  const double h0 = 2.0 / 5.0, h14 = 0.0 / 8.0;
  EXPECT_NEAR(e->q5, 1.0 - (1.0 - h0) * std::pow(1.0 - h14, 4), 1e-15);
  EXPECT_EQ(e->clusters, 3);
  // Leave-one-cluster-out q5: 1/3, 2/3, 1/4.
  std::vector<double> reps{logit(1.0 / 3.0), logit(2.0 / 3.0), logit(0.25)};
  EXPECT_NEAR(e->variance, jackknife_variance(reps), 1e-12);
}

TEST(Direct, NoDeathsOmitted) {
  FullBirthHistory a;
  a.mother_age_at_survey = 30;
  a.survey_year = 2010;
  a.children = {{2006, std::nullopt}};
  std::string why;
  EXPECT_FALSE(direct_estimate({a}, {2005, 2009}, ObservationRules{}, &why).has_value());
  EXPECT_FALSE(why.empty());
}

TEST(Direct, ConsistentOnSimulatedCohort) {
  SimulationConfig cfg;
  cfg.n_women = 20000;
  cfg.n_fbh = 20000;
  const auto co = simulate_cohort(cfg);
  const auto e = direct_estimate(co.fbh, {1995, 1999}, ObservationRules{});
  ASSERT_TRUE(e.has_value());
  const double truth = co.truth.q5_in_period(4);
  EXPECT_NEAR(e->q5, truth, 4.0 * std::sqrt(e->variance) * truth * (1 - truth));
}

TEST(Evaluate, WeightedMseSplitsBiasAndVariance) {
  std::vector<EvaluationCell> cells{{-2.0, 0.01, -2.1, 0.02}, {-1.5, 0.03, -1.4, 0.04}};
  const auto m = weighted_mse(cells);
  const double w1 = 50.0 / 75.0, w2 = 25.0 / 75.0;
  EXPECT_NEAR(m.bias_term, w1 * 0.01 + w2 * 0.01, 1e-15);
  EXPECT_NEAR(m.variance_term, w1 * 0.01 + w2 * 0.03, 1e-15);
  EXPECT_NEAR(m.mse, m.bias_term + m.variance_term, 1e-15);
}

TEST(Evaluate, PareDenominators) {
  std::vector<PareCell> cells{{0.11, 0.10, 0.01}, {0.09, 0.10, 0.01}, {0.2, 0.0, 0.01}};
  std::vector<std::string> diag;
  EXPECT_NEAR(pare(cells, false, &diag), 0.1 / 2.0, 1e-12);
  EXPECT_NEAR(pare(cells, true), 0.1 / 9.0, 1e-12);
  EXPECT_EQ(diag.size(), 1u);
}

TEST(Evaluate, AggregationWeightsByBirths) {
  // Two strata with fixed fertility 1 and 0: only the first contributes.
  std::vector<PopulationCount> fp{{25, 2000, 0, Strata::urban, 100}, {25, 2000, 0, Strata::rural, 100}};
  Rng rng(1);
  const auto r = aggregate_q5(
      fp, {{2000, 2004}}, 5, [](int, int, int, int, Strata s) { return s == Strata::urban ? 1.0 : 0.0; },
      [](int, int, int, Strata s) { return s == Strata::urban ? 0.1 : 0.3; }, rng);
  ASSERT_EQ(r.draws.size(), 1u);
  for (double q : r.draws.begin()->second) EXPECT_EQ(q, 0.1);
}

TEST(Evaluate, HoldoutIsHalfAndSeeded) {
  std::vector<int> c{5, 1, 3, 2, 4, 6, 6};
  const auto a = holdout_clusters(c, 1), b = holdout_clusters(c, 1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 3u);
}
