#include <gtest/gtest.h>

#include "oracles.hpp"
#include "u5mr/brass.hpp"
#include "u5mr/io.hpp"

using namespace u5mr;

namespace {

const LifeTables& tables() {
  static const LifeTables lt = parse_life_tables(read_csv(U5MR_DATA_DIR "/life_tables.csv"));
  return lt;
}

const TrussellCoefficients& coefficients() {
  static const TrussellCoefficients c = parse_trussell(read_csv(U5MR_DATA_DIR "/trussell_coefficients.csv"));
  return c;
}

std::vector<SummaryBirthHistory> small_sample(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> age(15, 49);
  std::vector<SummaryBirthHistory> out;
  for (int i = 0; i < n; ++i) {
    SummaryBirthHistory w;
    w.woman_id = std::to_string(i);
    w.mother_age_at_survey = age(rng);
    w.survey_year = 2010;
    w.births = std::uniform_int_distribution<int>(0, std::max(0, (w.mother_age_at_survey - 14) / 4))(rng);
    w.deaths = w.births ? std::uniform_int_distribution<int>(0, w.births / 2)(rng) : 0;
    out.push_back(w);
  }
  return out;
}

}  // namespace

TEST(Brass, IdentityCoefficientsReturnProportionDead) {
  const auto coef = TrussellCoefficients::constant({1.0, 0.0, 0.0}, {0.0, 0.0, 0.0});
  const auto sbh = small_sample(400, 1);
  const auto t = tabulate(sbh);
  for (int g = 0; g < kAgeGroups; ++g) {
    const auto qx = brass_qx(t, coef.at(Family::north, g), g);
    ASSERT_TRUE(qx.has_value());
    EXPECT_EQ(*qx, *t.d(g));
  }
}

TEST(Brass, TablesValidate) {
  EXPECT_NO_THROW(tables().validate());
  EXPECT_NO_THROW(coefficients().validate());
  EXPECT_EQ(tables().families().size(), 4u);
}

TEST(Brass, LifeTableMapsRoundTrip) {
  for (Family f : tables().families())
    for (int x : kIndexAge)
      for (double q5 : {0.03, 0.1, 0.2}) {
        const double qx = tables().from_q5(q5, x, f);
        EXPECT_NEAR(tables().to_q5(qx, x, f), q5, 1e-12);
      }
}

TEST(Brass, RecoversLifeTableCohort) {
  const auto [sbh, q5] = oracle::life_table_cohort(tables(), Family::north, 12, 40000, 77);
  const auto est = brass_pipeline(sbh, coefficients(), tables(), Family::north, 2010.0);
  bool seen = false;
  for (const auto& e : est)
    if (e.age_group == 3) {
      seen = true;
      EXPECT_LT(std::abs(e.q5 - q5) / q5, 0.10);
      EXPECT_GT(e.years_before_survey, 0.0);
      EXPECT_GT(e.variance, 0.0);
    }
  EXPECT_TRUE(seen);
}

TEST(Brass, IncrementalJackknifeBitMatchesBruteForce) {
  const auto sbh = small_sample(50, 9);
  const auto full = tabulate(sbh);
  for (int g = 1; g < kAgeGroups; ++g) {
    const auto fast = jackknife_replicates(sbh, full, coefficients(), tables(), Family::north, g);
    const auto slow = oracle::brute_force_jackknife(sbh, coefficients(), tables(), Family::north, g);
    ASSERT_EQ(fast.size(), slow.size());
    for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_EQ(fast[i], slow[i]);
    EXPECT_EQ(jackknife_variance(fast), jackknife_variance(slow));
  }
}

TEST(Brass, JackknifeVarianceFormula) {
  const std::vector<double> r{1.0, 2.0, 4.0};
  // mean 7/3; sum of squares 14/3; times (n-1)/n.
  EXPECT_NEAR(jackknife_variance(r), 2.0 / 3.0 * 14.0 / 3.0, 1e-15);
}

TEST(Brass, FamilySelectionPrefersGeneratingFamily) {
  for (Family f : tables().families()) {
    std::vector<std::pair<double, double>> pairs;
    for (double s : {5.0, 9.5, 14.0}) pairs.push_back(tables().child_pair(f, s));
    EXPECT_EQ(select_life_table(pairs, tables()), f) << to_string(f);
  }
}

TEST(Brass, FifteenToNineteenFlagged) {
  const auto sbh = small_sample(400, 2);
  const auto est = brass_pipeline(sbh, coefficients(), tables(), Family::west, 2010.0);
  ASSERT_FALSE(est.empty());
  for (const auto& e : est) EXPECT_EQ(e.discouraged, e.age_group == 0);
}

TEST(Brass, DeathsAboveBirthsRejected) {
  SummaryBirthHistory w;
  w.mother_age_at_survey = 30;
  w.births = 1;
  w.deaths = 2;
  EXPECT_THROW(tabulate({w}), std::invalid_argument);
}
