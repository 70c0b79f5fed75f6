#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include "u5mr/core.hpp"

namespace u5mr {

/// Survey-anchored yearly grid: interval 0 is the six months ending at the
/// survey month, every earlier interval spans twelve months. Interval k is
/// labelled survey_year - k.
struct SurveyCalendar {
  int survey_month = 6;
  int survey_year = 0;

  int months_before(int month, int year) const {
    return (survey_year * 12 + survey_month) - (year * 12 + month);
  }

  int interval_index(int month, int year) const {
    if (month < 1 || month > 12) throw std::invalid_argument("event month must be in 1..12");
    const int back = months_before(month, year);
    if (back < 0) throw std::invalid_argument("event is after the survey");
    return back < 6 ? 0 : 1 + (back - 6) / 12;
  }

  int assign_interval(int month, int year) const { return survey_year - interval_index(month, year); }

  // Reported age is taken as the mother's age throughout interval 0.
  int mother_age_in_interval(int reported_age, int k) const {
    if (k < 0) throw std::invalid_argument("interval index must be nonnegative");
    const int age = reported_age - k;
    if (age < 0) throw std::invalid_argument("mother age in interval is negative");
    return age;
  }

  double fertility_correction(int year_label, double factor = 0.5) const {
    return year_label == survey_year ? factor : 1.0;
  }

  double hazard_correction(int birth_label, int exposure_label, double factor = 0.65) const {
    if (exposure_label < birth_label) throw std::invalid_argument("exposure before birth");
    return birth_label == survey_year ? factor : 1.0;
  }
};

enum class CalendarMode {
  whole_years,   // simulator: no births in the survey year, no corrections
  survey_months  // data: six-month survey-year interval with 0.5 / 0.65 corrections
};

/// How a survey year is observed on the discrete grid. Every module that turns
/// records into at-risk years goes through these rules.
struct ObservationRules {
  CalendarMode mode = CalendarMode::whole_years;
  double fertility_correction = 0.5;
  double hazard_correction = 0.65;

  bool survey_year_births() const { return mode == CalendarMode::survey_months; }

  int last_birth_year(int t_surv) const { return survey_year_births() ? t_surv : t_surv - 1; }

  int first_birth_year(int m_surv, int t_surv, const FertileAges& ages) const {
    return t_surv - (m_surv - ages.min_age);
  }

  int last_feasible_birth_year(int m_surv, int t_surv, const FertileAges& ages) const {
    return std::min(last_birth_year(t_surv), t_surv - (m_surv - ages.max_age));
  }

  int feasible_birth_years(int m_surv, int t_surv, const FertileAges& ages) const {
    return std::max(0, last_feasible_birth_year(m_surv, t_surv, ages) -
                           first_birth_year(m_surv, t_surv, ages) + 1);
  }

  // Number of child-years at risk (ages 0..n-1) before the survey.
  int exposure_years(int t_b, int t_surv) const {
    return survey_year_births() ? std::max(t_surv - t_b, 1) : t_surv - t_b;
  }

  double fertility_factor(int year, int t_surv) const {
    return survey_year_births() && year == t_surv ? fertility_correction : 1.0;
  }

  // Only a child born in the survey year is exposed during it.
  double hazard_factor(int year, int t_surv) const {
    return survey_year_births() && year == t_surv ? hazard_correction : 1.0;
  }

  // Deaths beyond the observable exposure fold into the last at-risk year.
  int death_age(int t_b, int t_d, int t_surv) const {
    return std::clamp(t_d - t_b - 1, 0, exposure_years(t_b, t_surv) - 1);
  }

  int death_year_for_age(int t_b, int age, int t_surv) const {
    return std::min(t_b + age + 1, t_surv);
  }
};

/// Converts a month-dated birth (and optional death) to the discrete grid.
/// Missing months are taken as June.
inline Child discretize_child(const SurveyCalendar& cal, std::optional<int> birth_month, int birth_year,
                              std::optional<int> death_month, std::optional<int> death_year) {
  const int bm = birth_month.value_or(6);
  Child c;
  c.birth_year = cal.assign_interval(bm, birth_year);
  if (death_year) {
    const int dm = death_month.value_or(6);
    const int months = (*death_year * 12 + dm) - (birth_year * 12 + bm);
    if (months < 0) throw std::invalid_argument("death precedes birth");
    if (cal.months_before(dm, *death_year) < 0) throw std::invalid_argument("death is after the survey");
    c.death_year = std::min(c.birth_year + months / 12 + 1, cal.survey_year);
  }
  return c;
}

/// Empty string when the record satisfies the grid invariants.
inline std::string check_record(const FullBirthHistory& w, const FertileAges& ages,
                                const ObservationRules& rules) {
  std::set<int> years;
  for (const auto& c : w.children) {
    if (!years.insert(c.birth_year).second)
      return "more than one birth in year " + std::to_string(c.birth_year);
    if (c.birth_year > rules.last_birth_year(w.survey_year))
      return "birth year " + std::to_string(c.birth_year) + " not observable before the survey";
    const int m = w.mother_age_in(c.birth_year);
    if (!ages.contains(m)) return "mother age " + std::to_string(m) + " at birth outside fertile range";
    if (c.death_year) {
      const int td = *c.death_year;
      const bool folded = rules.survey_year_births() && c.birth_year == w.survey_year && td == w.survey_year;
      if (!folded && (td <= c.birth_year || td > w.survey_year))
        return "death year " + std::to_string(td) + " outside (birth year, survey year]";
    }
  }
  return {};
}

inline std::string check_record(const SummaryBirthHistory& w, const FertileAges& ages,
                                const ObservationRules& rules) {
  if (w.births < 0 || w.deaths < 0) return "negative counts";
  if (w.deaths > w.births) return "children dead exceeds children ever born";
  const int years = rules.feasible_birth_years(w.mother_age_at_survey, w.survey_year, ages);
  if (w.births > years)
    return std::to_string(w.births) + " births exceed " + std::to_string(years) + " fertile years";
  return {};
}

}  // namespace u5mr
