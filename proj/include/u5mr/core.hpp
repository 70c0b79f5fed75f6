#pragma once

#include <compare>
#include <concepts>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace u5mr {

enum class Strata : std::uint8_t { urban = 0, rural = 1 };

inline const char* to_string(Strata s) { return s == Strata::urban ? "urban" : "rural"; }

inline Strata parse_strata(const std::string& s) {
  if (s == "urban") return Strata::urban;
  if (s == "rural") return Strata::rural;
  throw std::invalid_argument("unknown strata '" + s + "' (expected urban or rural)");
}

/// Covariates attached to a woman and every child-year derived from her record.
/// District and survey are indices into the dataset's label registries.
struct CovariateProfile {
  int district = 0;
  Strata strata = Strata::rural;
  int survey_id = 0;
  bool is_sbh = false;

  auto operator<=>(const CovariateProfile&) const = default;
};

/// Inclusive range of ages at which a birth may occur.
struct FertileAges {
  int min_age = 15;
  int max_age = 49;

  bool contains(int age) const { return age >= min_age && age <= max_age; }
};

/// A child on the discrete yearly grid. A death in year t_d means the child
/// survived ages 0..(t_d - t_b - 2) and died at age t_d - t_b - 1.
struct Child {
  int birth_year = 0;
  std::optional<int> death_year;

  bool died() const { return death_year.has_value(); }
  bool operator==(const Child&) const = default;
};

struct FullBirthHistory {
  std::string woman_id;
  int cluster = 0;
  double weight = 1.0;
  int mother_age_at_survey = 0;
  int survey_year = 0;
  std::vector<Child> children;
  CovariateProfile covariates;

  int mother_age_in(int year) const { return mother_age_at_survey - (survey_year - year); }
};

struct SummaryBirthHistory {
  std::string woman_id;
  int mother_age_at_survey = 0;
  int survey_year = 0;
  int births = 0;
  int deaths = 0;
  CovariateProfile covariates;
};

/// f(m, t, x): probability of a birth at mother's age m in year t.
template <class F>
concept FertilitySchedule = requires(const F& f, int m, int t, const CovariateProfile& x) {
  { f(m, t, x) } -> std::convertible_to<double>;
};

/// 1q_a(x(t)): probability a child aged a dies before age a+1 during year t.
template <class Q>
concept HazardSchedule = requires(const Q& q, int a, int t, const CovariateProfile& x) {
  { q(a, t, x) } -> std::convertible_to<double>;
};

/// Probability that a child born in t_b is still alive at t_end:
/// prod_{a=1}^{t_end - t_b} {1 - 1q_{a-1}(x(t_b + a - 1))}.
template <HazardSchedule Q>
double survival_probability(int t_b, int t_end, const CovariateProfile& cov, const Q& q) {
  if (t_b >= t_end) throw std::invalid_argument("survival_probability: requires t_b < t_end");
  double s = 1.0;
  for (int a = 1; a <= t_end - t_b; ++a) s *= 1.0 - static_cast<double>(q(a - 1, t_b + a - 1, cov));
  return s;
}

/// 5q0 at year t from the single-year hazards at ages 0..4.
template <HazardSchedule Q>
double under_five_mortality(int t, const CovariateProfile& cov, const Q& q) {
  double s = 1.0;
  for (int a = 0; a <= 4; ++a) s *= 1.0 - static_cast<double>(q(a, t, cov));
  return 1.0 - s;
}

inline SummaryBirthHistory summarize(const FullBirthHistory& fbh) {
  SummaryBirthHistory s;
  s.woman_id = fbh.woman_id;
  s.mother_age_at_survey = fbh.mother_age_at_survey;
  s.survey_year = fbh.survey_year;
  s.births = static_cast<int>(fbh.children.size());
  for (const auto& c : fbh.children) s.deaths += c.died() ? 1 : 0;
  s.covariates = fbh.covariates;
  return s;
}

}  // namespace u5mr
