#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "u5mr/core.hpp"
#include "u5mr/numeric.hpp"

namespace u5mr {

enum class Family { north, west, south, east };

inline constexpr std::array<Family, 4> kFamilyPreference{Family::north, Family::west, Family::south, Family::east};

inline const char* to_string(Family f) {
  switch (f) {
    case Family::north: return "north";
    case Family::west: return "west";
    case Family::south: return "south";
    case Family::east: return "east";
  }
  return "?";
}

inline Family parse_family(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Family f : kFamilyPreference)
    if (s == to_string(f)) return f;
  throw std::invalid_argument("unknown model life table family '" + s + "'");
}

inline constexpr int kAgeGroups = 7;
inline constexpr std::array<int, kAgeGroups> kIndexAge{1, 2, 3, 5, 10, 15, 20};

inline std::string age_group_label(int i) {
  return std::to_string(15 + 5 * i) + "-" + std::to_string(19 + 5 * i);
}

/// Maternal age group 0..6 for ages 15..49, otherwise -1.
inline int age_group_of(int mother_age) {
  return mother_age >= 15 && mother_age <= 49 ? (mother_age - 15) / 5 : -1;
}

struct TrussellRow {
  std::array<double, 3> a{1.0, 0.0, 0.0};
  std::array<double, 3> b{0.0, 0.0, 0.0};
};

/// Multiplier (a) and time-location (b) coefficients per family and age group.
struct TrussellCoefficients {
  std::map<Family, std::array<TrussellRow, kAgeGroups>> rows;
  std::map<Family, std::array<bool, kAgeGroups>> present;

  void set(Family f, int group, TrussellRow r) {
    rows[f][group] = r;
    present[f][group] = true;
  }

  const TrussellRow& at(Family f, int group) const {
    auto it = rows.find(f);
    if (it == rows.end() || !present.at(f)[group])
      throw std::out_of_range(std::string("no coefficients for family ") + to_string(f) + " group " +
                              age_group_label(group));
    return it->second[group];
  }

  // Every family that appears must be complete.
  void validate() const {
    if (rows.empty()) throw std::invalid_argument("coefficient table is empty");
    for (const auto& [f, p] : present)
      for (int g = 0; g < kAgeGroups; ++g)
        if (!p[g]) throw std::invalid_argument(std::string("coefficient table misses ") + to_string(f) + " " + age_group_label(g));
  }

  static TrussellCoefficients constant(std::array<double, 3> a, std::array<double, 3> b) {
    TrussellCoefficients c;
    for (Family f : kFamilyPreference)
      for (int g = 0; g < kAgeGroups; ++g) c.set(f, g, TrussellRow{a, b});
    return c;
  }
};

/// Model life tables as q(x)/q(5) ratios at a ladder of mortality levels.
/// Conversions between q(x) and q(5) interpolate linearly in logit q between
/// adjacent levels, so each direction is the exact inverse of the other.
class LifeTables {
 public:
  struct Level {
    double q5 = 0.0;
    std::map<int, double> ratio;  // x -> q(x)/q(5)
  };

  // Levels are ordered by q5, whatever their numbering.
  void add(Family f, int level, double q5, int x, double ratio) {
    auto [it, fresh] = level_q5_[f].try_emplace(level, q5);
    if (!fresh && it->second != q5) throw std::invalid_argument("inconsistent q5 within a life table level");
    auto& lv = tables_[f][q5];
    if (fresh && !lv.ratio.empty()) throw std::invalid_argument("two life table levels share one q5");
    lv.q5 = q5;
    lv.ratio[x] = ratio;
  }

  bool has(Family f) const { return tables_.count(f) > 0; }

  void validate() const {
    if (tables_.empty()) throw std::invalid_argument("life table is empty");
    for (const auto& [f, levels] : tables_) {
      if (levels.size() < 2) throw std::invalid_argument(std::string("life table family ") + to_string(f) + " needs two levels");
      for (int x : kIndexAge) {
        double prev = -1.0;
        for (const auto& [l, lv] : levels) {
          auto it = lv.ratio.find(x);
          if (it == lv.ratio.end()) throw std::invalid_argument(std::string("life table misses x=") + std::to_string(x));
          const double q = it->second * lv.q5;
          if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("life table q(x) outside (0,1)");
          if (q <= prev) throw std::invalid_argument("life table q(x) must increase with mortality level");
          prev = q;
        }
      }
    }
  }

  double qx_at_level(Family f, int level_index, int x) const {
    const auto& lv = level(f, level_index);
    return lv.ratio.at(x) * lv.q5;
  }

  /// q(5) implied by q(x); identity at x = 5. Values beyond the table are
  /// clamped to its ends; `clamped` reports when that happened.
  double to_q5(double qx, int x, Family f, bool* clamped = nullptr) const {
    if (clamped) *clamped = false;
    if (x == 5) return qx;
    return map(f, x, 5, qx, clamped);
  }

  double from_q5(double q5, int x, Family f, bool* clamped = nullptr) const {
    if (clamped) *clamped = false;
    if (x == 5) return q5;
    return map(f, 5, x, q5, clamped);
  }

  /// (1q0, 4q1) along the family schedule at fractional level position s.
  std::pair<double, double> child_pair(Family f, double s) const {
    const auto& lv = family(f);
    const int n = static_cast<int>(lv.size());
    s = std::clamp(s, 0.0, n - 1.0);
    const int i = std::min(static_cast<int>(s), n - 2);
    const double w = s - i;
    auto lq = [&](int idx, int x) { return logit(qx_at_level(f, idx, x)); };
    const double q1 = expit((1 - w) * lq(i, 1) + w * lq(i + 1, 1));
    const double q5 = expit((1 - w) * lq(i, 5) + w * lq(i + 1, 5));
    return {q1, 1.0 - (1.0 - q5) / (1.0 - q1)};
  }

  int level_count(Family f) const { return static_cast<int>(family(f).size()); }
  std::vector<Family> families() const {
    std::vector<Family> out;
    for (Family f : kFamilyPreference)
      if (has(f)) out.push_back(f);
    return out;
  }

 private:
  const std::map<double, Level>& family(Family f) const {
    auto it = tables_.find(f);
    if (it == tables_.end()) throw std::out_of_range(std::string("no life table for family ") + to_string(f));
    return it->second;
  }

  const Level& level(Family f, int idx) const {
    const auto& lv = family(f);
    auto it = lv.begin();
    std::advance(it, idx);
    return it->second;
  }

  double map(Family f, int from_x, int to_x, double q, bool* clamped) const {
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("probability must lie in (0,1)");
    const int n = level_count(f);
    std::vector<double> src(n), dst(n);
    for (int i = 0; i < n; ++i) {
      src[i] = logit(qx_at_level(f, i, from_x));
      dst[i] = logit(qx_at_level(f, i, to_x));
    }
    double lq = logit(q);
    if (lq < src.front() || lq > src.back()) {
      if (clamped) *clamped = true;
      lq = std::clamp(lq, src.front(), src.back());
    }
    int i = static_cast<int>(std::upper_bound(src.begin(), src.end(), lq) - src.begin()) - 1;
    i = std::clamp(i, 0, n - 2);
    const double w = (lq - src[i]) / (src[i + 1] - src[i]);
    return expit((1 - w) * dst[i] + w * dst[i + 1]);
  }

  std::map<Family, std::map<double, Level>> tables_;
  std::map<Family, std::map<int, double>> level_q5_;
};

// ---------------------------------------------------------------------------
// Tabulation.

/// Integer sums per maternal age group. d_i and the parities are ratios of
/// these, so removing one woman is an exact update.
struct AgeGroupTabulation {
  std::array<std::int64_t, kAgeGroups> women{};
  std::array<std::int64_t, kAgeGroups> births{};
  std::array<std::int64_t, kAgeGroups> deaths{};

  std::optional<double> d(int i) const {
    if (births[i] == 0) return std::nullopt;
    return static_cast<double>(deaths[i]) / static_cast<double>(births[i]);
  }

  // Mean children ever born in groups 15-19, 20-24, 25-29.
  double parity(int k) const {
    const int i = k - 1;
    return women[i] == 0 ? 0.0 : static_cast<double>(births[i]) / static_cast<double>(women[i]);
  }

  void add(int group, int ceb, int cd, int sign = 1) {
    women[group] += sign;
    births[group] += sign * ceb;
    deaths[group] += sign * cd;
  }
};

inline AgeGroupTabulation tabulate(const std::vector<SummaryBirthHistory>& sbh) {
  AgeGroupTabulation t;
  for (const auto& w : sbh) {
    const int g = age_group_of(w.mother_age_at_survey);
    if (g < 0) continue;
    if (w.deaths > w.births || w.deaths < 0) throw std::invalid_argument("woman " + w.woman_id + ": D > B");
    t.add(g, w.births, w.deaths);
  }
  return t;
}

struct IndirectEstimate {
  int age_group = 0;
  int x = 0;
  double q_x = 0.0;
  double years_before_survey = 0.0;
  double reference_time = 0.0;
  double q5 = 0.0;
  double logit_q5 = 0.0;
  double variance = 0.0;
  bool discouraged = false;  // 15-19 group
  bool clamped = false;
};

inline std::optional<double> brass_qx(const AgeGroupTabulation& t, const TrussellRow& c, int group) {
  const auto d = t.d(group);
  const double p1 = t.parity(1), p2 = t.parity(2), p3 = t.parity(3);
  if (!d || p2 <= 0.0 || p3 <= 0.0) return std::nullopt;
  return *d * (c.a[0] + c.a[1] * p1 / p2 + c.a[2] * p2 / p3);
}

inline std::optional<double> reference_years(const AgeGroupTabulation& t, const TrussellRow& c) {
  const double p1 = t.parity(1), p2 = t.parity(2), p3 = t.parity(3);
  if (p2 <= 0.0 || p3 <= 0.0) return std::nullopt;
  return c.b[0] + c.b[1] * p1 / p2 + c.b[2] * p2 / p3;
}

struct BrassDiagnostics {
  std::vector<std::string> messages;
};

/// One estimate per age group with births and positive parities.
inline std::vector<IndirectEstimate> brass_estimates(const AgeGroupTabulation& t, const TrussellCoefficients& coef,
                                                     const LifeTables& lt, Family family, double survey_year,
                                                     BrassDiagnostics* diag = nullptr) {
  std::vector<IndirectEstimate> out;
  for (int g = 0; g < kAgeGroups; ++g) {
    const auto& c = coef.at(family, g);
    const auto qx = brass_qx(t, c, g);
    const auto ty = reference_years(t, c);
    if (!qx || !ty) {
      if (diag) diag->messages.push_back("group " + age_group_label(g) + ": no births or zero parity; skipped");
      continue;
    }
    if (!(*qx > 0.0 && *qx < 1.0)) {
      if (diag) diag->messages.push_back("group " + age_group_label(g) + ": q(x) outside (0,1); skipped");
      continue;
    }
    IndirectEstimate e;
    e.age_group = g;
    e.x = kIndexAge[g];
    e.q_x = *qx;
    e.years_before_survey = *ty;
    e.reference_time = survey_year - *ty;
    e.q5 = lt.to_q5(*qx, e.x, family, &e.clamped);
    if (e.clamped && diag) diag->messages.push_back("group " + age_group_label(g) + ": q(x) clamped to life table range");
    e.logit_q5 = logit(e.q5);
    e.discouraged = g == 0;
    out.push_back(e);
  }
  return out;
}

/// logit q5 for one group with the reference time held fixed; nullopt when
/// the replicate is degenerate.
inline std::optional<double> brass_logit_q5(const AgeGroupTabulation& t, const TrussellCoefficients& coef,
                                            const LifeTables& lt, Family family, int group) {
  const auto qx = brass_qx(t, coef.at(family, group), group);
  if (!qx || !(*qx > 0.0 && *qx < 1.0)) return std::nullopt;
  const double q5 = lt.to_q5(*qx, kIndexAge[group], family);
  if (!(q5 > 0.0 && q5 < 1.0)) return std::nullopt;
  return logit(q5);
}

/// (n-1)/n * sum (theta_j - mean)^2 over the usable replicates.
inline double jackknife_variance(std::span<const double> replicates) {
  const auto n = replicates.size();
  if (n < 2) return 0.0;
  double m = 0.0;
  for (double v : replicates) m += v;
  m /= static_cast<double>(n);
  double s = 0.0;
  for (double v : replicates) s += (v - m) * (v - m);
  return (static_cast<double>(n) - 1.0) / static_cast<double>(n) * s;
}

/// Delete-one jackknife over women (or over clusters when `clusters` holds one
/// id per woman). Each replicate downdates the integer tabulation.
inline std::vector<double> jackknife_replicates(const std::vector<SummaryBirthHistory>& sbh,
                                                const AgeGroupTabulation& full, const TrussellCoefficients& coef,
                                                const LifeTables& lt, Family family, int group,
                                                const std::vector<int>* clusters = nullptr) {
  std::vector<double> reps;
  if (!clusters) {
    reps.reserve(sbh.size());
    for (const auto& w : sbh) {
      const int g = age_group_of(w.mother_age_at_survey);
      AgeGroupTabulation t = full;
      if (g >= 0) t.add(g, w.births, w.deaths, -1);
      if (auto v = brass_logit_q5(t, coef, lt, family, group)) reps.push_back(*v);
    }
    return reps;
  }
  if (clusters->size() != sbh.size()) throw std::invalid_argument("one cluster id per woman required");
  std::map<int, AgeGroupTabulation> per;
  for (std::size_t i = 0; i < sbh.size(); ++i) {
    const int g = age_group_of(sbh[i].mother_age_at_survey);
    if (g >= 0) per[(*clusters)[i]].add(g, sbh[i].births, sbh[i].deaths);
  }
  for (const auto& [c, part] : per) {
    AgeGroupTabulation t = full;
    for (int g = 0; g < kAgeGroups; ++g) {
      t.women[g] -= part.women[g];
      t.births[g] -= part.births[g];
      t.deaths[g] -= part.deaths[g];
    }
    if (auto v = brass_logit_q5(t, coef, lt, family, group)) reps.push_back(*v);
  }
  return reps;
}

/// Full pipeline: tabulation, estimates, and jackknife variances.
inline std::vector<IndirectEstimate> brass_pipeline(const std::vector<SummaryBirthHistory>& sbh,
                                                    const TrussellCoefficients& coef, const LifeTables& lt,
                                                    Family family, double survey_year,
                                                    const std::vector<int>* clusters = nullptr,
                                                    BrassDiagnostics* diag = nullptr) {
  if (sbh.empty()) throw std::invalid_argument("no SBH records");
  const AgeGroupTabulation full = tabulate(sbh);
  auto est = brass_estimates(full, coef, lt, family, survey_year, diag);
  for (auto& e : est) {
    const auto reps = jackknife_replicates(sbh, full, coef, lt, family, e.age_group, clusters);
    if (diag && reps.size() < (clusters ? reps.size() : sbh.size()))
      diag->messages.push_back("group " + age_group_label(e.age_group) + ": " +
                               std::to_string(sbh.size() - reps.size()) + " degenerate replicates skipped");
    e.variance = jackknife_variance(reps);
  }
  return est;
}

/// Family whose (1q0, 4q1) schedule lies closest to the observed pairs in
/// summed squared distance; ties go to the earlier family in
/// kFamilyPreference.
inline Family select_life_table(const std::vector<std::pair<double, double>>& pairs, const LifeTables& lt) {
  if (pairs.empty()) throw std::invalid_argument("need at least one (1q0, 4q1) pair");
  std::optional<Family> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (Family f : lt.families()) {
    const int n = lt.level_count(f);
    const int grid = (n - 1) * 200;
    double total = 0.0;
    for (const auto& [q1, q4] : pairs) {
      double m = std::numeric_limits<double>::infinity();
      for (int k = 0; k <= grid; ++k) {
        const auto [a, b] = lt.child_pair(f, static_cast<double>(k) / 200.0);
        m = std::min(m, (a - q1) * (a - q1) + (b - q4) * (b - q4));
      }
      total += m;
    }
    if (total < best_d) {
      best_d = total;
      best = f;
    }
  }
  return *best;
}

}  // namespace u5mr
