#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "u5mr/calendar.hpp"
#include "u5mr/core.hpp"
#include "u5mr/numeric.hpp"

namespace u5mr {

/// Birth years of a woman's children (sorted, distinct) and which of them died.
/// Death indicators attach to the sorted positions.
struct Configuration {
  std::vector<int> birth_years;
  std::vector<std::uint8_t> death_indicators;

  int deaths() const {
    int d = 0;
    for (auto x : death_indicators) d += x;
    return d;
  }
  auto operator<=>(const Configuration&) const = default;
};

struct AugmentedRecord {
  Configuration config;
  std::vector<int> death_years;  // one per child with a death indicator, in sorted-birth order
};

struct WomanGroupKey {
  int mother_age = 0;
  int survey_year = 0;
  int births = 0;
  int deaths = 0;
  CovariateProfile covariates;

  auto operator<=>(const WomanGroupKey&) const = default;

  static WomanGroupKey of(const SummaryBirthHistory& w) {
    return {w.mother_age_at_survey, w.survey_year, w.births, w.deaths, w.covariates};
  }
};

struct AugmentationSettings {
  FertileAges ages{15, 49};
  ObservationRules rules;
  double enumeration_cap = 10000.0;
  int mh_steps_per_sweep = 1;
};

class EnumerationCapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-year log terms of the birth/death target for one group key. Index i
/// refers to birth year first_year + i.
class WomanTables {
 public:
  template <FertilitySchedule F, HazardSchedule Q>
  WomanTables(const WomanGroupKey& key, const AugmentationSettings& s, const F& f, const Q& q)
      : key_(key), rules_(s.rules) {
    first_year_ = s.rules.first_birth_year(key.mother_age, key.survey_year, s.ages);
    const int last = s.rules.last_feasible_birth_year(key.mother_age, key.survey_year, s.ages);
    const int n = std::max(0, last - first_year_ + 1);
    log_f_.resize(n);
    log_1mf_.resize(n);
    log_surv_.resize(n);
    log_death_.resize(n);
    hazards_.resize(n);
    const int t_surv = key.survey_year;
    for (int i = 0; i < n; ++i) {
      const int t = first_year_ + i;
      const int m = key.mother_age - (t_surv - t);
      const double fp = std::clamp(static_cast<double>(f(m, t, key.covariates)) * s.rules.fertility_factor(t, t_surv), 0.0, 1.0);
      log_f_[i] = std::log(fp);
      log_1mf_[i] = std::log1p(-fp);
      const int n_exp = s.rules.exposure_years(t, t_surv);
      auto& h = hazards_[i];
      h.resize(n_exp);
      double surv = 1.0;
      for (int a = 0; a < n_exp; ++a) {
        const int year = t + a;
        h[a] = std::clamp(static_cast<double>(q(a, year, key.covariates)) * s.rules.hazard_factor(year, t_surv), 0.0, 1.0);
        surv *= 1.0 - h[a];
      }
      log_surv_[i] = std::log(surv);
      log_death_[i] = std::log1p(-surv);
    }
  }

  const WomanGroupKey& key() const { return key_; }
  const ObservationRules& rules() const { return rules_; }
  int first_year() const { return first_year_; }
  int years() const { return static_cast<int>(log_f_.size()); }
  int index_of(int year) const { return year - first_year_; }
  double log_f(int i) const { return log_f_[i]; }
  double log_1mf(int i) const { return log_1mf_[i]; }
  double log_surv(int i) const { return log_surv_[i]; }
  double log_death(int i) const { return log_death_[i]; }

  // Observation-scale hazards for a child born in year first_year + i, by age.
  const std::vector<double>& hazards(int i) const { return hazards_[i]; }

  double enumeration_size() const {
    return binomial_coefficient(years(), key_.births) * binomial_coefficient(key_.births, key_.deaths);
  }

  bool feasible() const { return key_.births <= years() && key_.deaths <= key_.births; }

  /// Unnormalized log target of a configuration; -inf when infeasible.
  double log_weight(const Configuration& c) const {
    if (static_cast<int>(c.birth_years.size()) != key_.births || c.deaths() != key_.deaths) return kNegInf;
    double lw = 0.0;
    std::size_t j = 0;
    for (int i = 0; i < years(); ++i) {
      const int t = first_year_ + i;
      if (j < c.birth_years.size() && c.birth_years[j] == t) {
        lw += log_f_[i] + (c.death_indicators[j] ? log_death_[i] : log_surv_[i]);
        ++j;
      } else {
        lw += log_1mf_[i];
      }
    }
    if (j != c.birth_years.size()) return kNegInf;  // unsorted, duplicated or out-of-range years
    return lw;
  }

 private:
  WomanGroupKey key_;
  ObservationRules rules_;
  int first_year_ = 0;
  std::vector<double> log_f_, log_1mf_, log_surv_, log_death_;
  std::vector<std::vector<double>> hazards_;
};

/// Every (birth-year set, death assignment) of a group together with its log
/// weight, in a fixed lexicographic order.
class EnumeratedConfigurations {
 public:
  explicit EnumeratedConfigurations(const WomanTables& tab, double cap = 10000.0) : births_(tab.key().births) {
    if (!tab.feasible()) return;
    const double size = tab.enumeration_size();
    if (size > cap)
      throw EnumerationCapExceeded("enumeration of " + std::to_string(size) + " configurations exceeds cap");
    const int n = tab.years();
    const int b = tab.key().births;
    const int d = tab.key().deaths;
    first_year_ = tab.first_year();
    years_.reserve(static_cast<std::size_t>(size) * static_cast<std::size_t>(b));
    log_w_.reserve(static_cast<std::size_t>(size));
    std::vector<int> chosen;
    chosen.reserve(b);
    // Depth-first over years: each year is skipped, a death birth, or a surviving birth.
    std::function<void(int, int, int, double, std::uint64_t)> rec = [&](int i, int dead_left, int alive_left,
                                                                      double lw, std::uint64_t mask) {
      const int left = dead_left + alive_left;
      if (left == 0) {
        for (int k = i; k < n; ++k) lw += tab.log_1mf(k);
        years_.insert(years_.end(), chosen.begin(), chosen.end());
        masks_.push_back(mask);
        log_w_.push_back(lw);
        return;
      }
      if (n - i < left) return;
      const std::uint64_t pos_bit = std::uint64_t{1} << chosen.size();
      if (dead_left > 0) {
        chosen.push_back(i);
        rec(i + 1, dead_left - 1, alive_left, lw + tab.log_f(i) + tab.log_death(i), mask | pos_bit);
        chosen.pop_back();
      }
      if (alive_left > 0) {
        chosen.push_back(i);
        rec(i + 1, dead_left, alive_left - 1, lw + tab.log_f(i) + tab.log_surv(i), mask);
        chosen.pop_back();
      }
      if (n - i > left) rec(i + 1, dead_left, alive_left, lw + tab.log_1mf(i), mask);
    };
    rec(0, d, b - d, 0.0, 0);
  }

  std::size_t size() const { return log_w_.size(); }
  const std::vector<double>& log_weights() const { return log_w_; }

  Configuration at(std::size_t k) const {
    Configuration c;
    c.birth_years.resize(births_);
    c.death_indicators.resize(births_);
    for (int j = 0; j < births_; ++j) {
      c.birth_years[j] = first_year_ + years_[k * births_ + j];
      c.death_indicators[j] = static_cast<std::uint8_t>((masks_[k] >> j) & 1U);
    }
    return c;
  }

  /// Normalized probabilities.
  std::vector<double> probabilities() const {
    std::vector<double> p = log_w_;
    normalize_log_weights(p);
    return p;
  }

  /// Cumulative distribution for repeated exact draws.
  std::vector<double> cdf() const {
    std::vector<double> c = probabilities();
    for (std::size_t k = 1; k < c.size(); ++k) c[k] += c[k - 1];
    return c;
  }

 private:
  int births_ = 0;
  int first_year_ = 0;
  std::vector<int> years_;
  std::vector<std::uint64_t> masks_;
  std::vector<double> log_w_;
};

/// One draw from the independence proposal. The first D entries of
/// ordered_years are the dying children, in the order they were drawn.
struct Proposal {
  std::vector<int> ordered_years;
  double log_density = 0.0;
};

inline Configuration canonical(const std::vector<int>& ordered_years, int deaths) {
  std::vector<std::pair<int, std::uint8_t>> kids;
  kids.reserve(ordered_years.size());
  for (std::size_t i = 0; i < ordered_years.size(); ++i)
    kids.emplace_back(ordered_years[i], static_cast<std::uint8_t>(static_cast<int>(i) < deaths ? 1 : 0));
  std::sort(kids.begin(), kids.end());
  Configuration c;
  for (auto [t, d] : kids) {
    c.birth_years.push_back(t);
    c.death_indicators.push_back(d);
  }
  return c;
}

// Log weight of year i for a child drawn as dying (or surviving).
inline double proposal_term(const WomanTables& tab, int i, bool dying) {
  return tab.log_f(i) + (dying ? tab.log_death(i) : tab.log_surv(i));
}

/// Sequential proposal density of an ordered draw; -inf if it cannot be produced.
inline double proposal_log_density(const WomanTables& tab, const std::vector<int>& ordered_years) {
  const int n = tab.years();
  const int d = tab.key().deaths;
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  std::vector<double> w(static_cast<std::size_t>(n));
  double lq = 0.0;
  for (std::size_t k = 0; k < ordered_years.size(); ++k) {
    const bool dying = static_cast<int>(k) < d;
    for (int i = 0; i < n; ++i) w[i] = used[i] ? kNegInf : proposal_term(tab, i, dying);
    const int pick = tab.index_of(ordered_years[k]);
    if (pick < 0 || pick >= n || used[pick]) return kNegInf;
    lq += w[pick] - log_sum_exp(w);
    used[pick] = 1;
  }
  return lq;
}

/// Draws children one at a time: the D dying children from
/// q(t, d=1) ~ f(t) [1 - S(t)], the rest from q(t, d=0) ~ f(t) S(t), each
/// excluding years already taken. Empty when no year has positive mass.
template <class URBG>
std::optional<Proposal> propose_independence(const WomanTables& tab, URBG& rng) {
  const int n = tab.years();
  const int b = tab.key().births;
  const int d = tab.key().deaths;
  if (b > n) return std::nullopt;
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  std::vector<double> w(static_cast<std::size_t>(n));
  Proposal p;
  p.ordered_years.reserve(b);
  for (int k = 0; k < b; ++k) {
    const bool dying = k < d;
    for (int i = 0; i < n; ++i) w[i] = used[i] ? kNegInf : proposal_term(tab, i, dying);
    const double lse = log_sum_exp(w);
    if (lse == kNegInf) return std::nullopt;
    const int pick = sample_log_categorical(std::span<const double>(w), rng);
    p.log_density += w[pick] - lse;
    used[pick] = 1;
    p.ordered_years.push_back(tab.first_year() + pick);
  }
  return p;
}

/// State of one woman's independence chain. The draw order is kept because
/// the proposal density is defined on ordered draws.
struct MhState {
  std::vector<int> ordered_years;
  double log_target = kNegInf;
  double log_proposal = kNegInf;

  Configuration config(int deaths) const { return canonical(ordered_years, deaths); }
};

inline MhState make_mh_state(const WomanTables& tab, std::vector<int> ordered_years) {
  MhState s;
  s.log_target = tab.log_weight(canonical(ordered_years, tab.key().deaths));
  s.log_proposal = proposal_log_density(tab, ordered_years);
  s.ordered_years = std::move(ordered_years);
  return s;
}

// Ordering of a configuration: dying children first, then survivors.
inline std::vector<int> ordered_from(const Configuration& c) {
  std::vector<int> out;
  for (std::size_t j = 0; j < c.birth_years.size(); ++j)
    if (c.death_indicators[j]) out.push_back(c.birth_years[j]);
  for (std::size_t j = 0; j < c.birth_years.size(); ++j)
    if (!c.death_indicators[j]) out.push_back(c.birth_years[j]);
  return out;
}

/// One Metropolis-Hastings step with the independence proposal; returns
/// whether the proposal was accepted.
template <class URBG>
bool mh_step(MhState& state, const WomanTables& tab, URBG& rng) {
  auto prop = propose_independence(tab, rng);
  if (!prop) return false;
  const double lt = tab.log_weight(canonical(prop->ordered_years, tab.key().deaths));
  const double log_ratio = (lt - state.log_target) - (prop->log_density - state.log_proposal);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (state.log_target == kNegInf || std::log(u) < log_ratio) {
    state.ordered_years = std::move(prop->ordered_years);
    state.log_target = lt;
    state.log_proposal = prop->log_density;
    return true;
  }
  return false;
}

/// MH step from a bare configuration. The draw order is refreshed uniformly
/// within the dying and surviving children first; the target is exchangeable
/// in that order, so this leaves it invariant.
template <class URBG>
Configuration mh_step(const Configuration& current, const WomanTables& tab, URBG& rng, bool* accepted = nullptr) {
  std::vector<int> ordered = ordered_from(current);
  const auto d = static_cast<std::ptrdiff_t>(tab.key().deaths);
  std::shuffle(ordered.begin(), ordered.begin() + d, rng);
  std::shuffle(ordered.begin() + d, ordered.end(), rng);
  MhState s = make_mh_state(tab, std::move(ordered));
  const bool acc = mh_step(s, tab, rng);
  if (accepted) *accepted = acc;
  return s.config(tab.key().deaths);
}

// Unnormalized log P(death at age a) for a dying child born in year
// first_year + i: log q_a + sum_{a' < a} log(1 - q_a').
inline std::vector<double> death_age_log_weights(const WomanTables& tab, int i) {
  const auto& h = tab.hazards(i);
  std::vector<double> lw(h.size());
  double log_s = 0.0;
  for (std::size_t a = 0; a < h.size(); ++a) {
    lw[a] = std::log(h[a]) + log_s;
    log_s += std::log1p(-h[a]);
  }
  return lw;
}

inline std::vector<double> death_age_probabilities(const WomanTables& tab, int i) {
  auto p = death_age_log_weights(tab, i);
  normalize_log_weights(p);
  return p;
}

template <class URBG>
AugmentedRecord impute_death_years(const Configuration& c, const WomanTables& tab, URBG& rng) {
  AugmentedRecord r{c, {}};
  const int t_surv = tab.key().survey_year;
  for (std::size_t j = 0; j < c.birth_years.size(); ++j) {
    if (!c.death_indicators[j]) continue;
    const auto lw = death_age_log_weights(tab, tab.index_of(c.birth_years[j]));
    const int age = std::max(0, sample_log_categorical(std::span<const double>(lw), rng));
    r.death_years.push_back(tab.rules().death_year_for_age(c.birth_years[j], age, t_surv));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Single-woman conveniences taking schedules directly.

template <FertilitySchedule F, HazardSchedule Q>
double config_log_weight(const Configuration& c, const SummaryBirthHistory& w, const F& f, const Q& q,
                         const AugmentationSettings& s = {}) {
  return WomanTables(WomanGroupKey::of(w), s, f, q).log_weight(c);
}

template <FertilitySchedule F, HazardSchedule Q>
std::vector<Configuration> enumerate_configurations(const SummaryBirthHistory& w, const F& f, const Q& q,
                                                    const AugmentationSettings& s = {}) {
  WomanTables tab(WomanGroupKey::of(w), s, f, q);
  EnumeratedConfigurations e(tab, s.enumeration_cap);
  std::vector<Configuration> out;
  out.reserve(e.size());
  for (std::size_t k = 0; k < e.size(); ++k) out.push_back(e.at(k));
  return out;
}

template <FertilitySchedule F, HazardSchedule Q, class URBG>
Configuration exact_sample(const SummaryBirthHistory& w, const F& f, const Q& q, URBG& rng,
                           const AugmentationSettings& s = {}) {
  WomanTables tab(WomanGroupKey::of(w), s, f, q);
  EnumeratedConfigurations e(tab, s.enumeration_cap);
  if (e.size() == 0) throw std::invalid_argument("woman has no feasible configuration");
  const auto cdf = e.cdf();
  return e.at(sample_cumulative(std::span<const double>(cdf), rng));
}

// ---------------------------------------------------------------------------
// Grouped sweeps over a summary-birth-history dataset.

struct SweepStats {
  std::size_t table_constructions = 0;
  std::size_t exact_draws = 0;
  std::size_t mh_proposals = 0;
  std::size_t mh_accepts = 0;

  double mh_acceptance() const {
    return mh_proposals == 0 ? 1.0 : static_cast<double>(mh_accepts) / static_cast<double>(mh_proposals);
  }
  SweepStats& operator+=(const SweepStats& o) {
    table_constructions += o.table_constructions;
    exact_draws += o.exact_draws;
    mh_proposals += o.mh_proposals;
    mh_accepts += o.mh_accepts;
    return *this;
  }
};

/// Holds the current augmentation of every feasible SBH woman and refreshes it
/// at given schedules. Women sharing a WomanGroupKey share one set of tables;
/// groups at or below the enumeration cap are sampled exactly, larger groups
/// take mh_steps_per_sweep independence-chain steps per woman.
class DataAugmenter {
 public:
  DataAugmenter(std::vector<SummaryBirthHistory> women, AugmentationSettings settings)
      : settings_(settings) {
    for (auto& w : women) {
      const std::string why = check_record(w, settings_.ages, settings_.rules);
      if (why.empty())
        women_.push_back(std::move(w));
      else
        excluded_.push_back(w.woman_id + ": " + why);
    }
    // Groups ordered by covariates first so consecutive groups share schedules.
    std::map<std::tuple<CovariateProfile, int, int, int, int>, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < women_.size(); ++i) {
      const auto& w = women_[i];
      members[std::make_tuple(w.covariates, w.survey_year, w.mother_age_at_survey, w.births, w.deaths)].push_back(i);
    }
    for (auto& [k, idx] : members) groups_.push_back(Group{WomanGroupKey::of(women_[idx.front()]), std::move(idx)});
    records_.resize(women_.size());
  }

  std::size_t size() const { return women_.size(); }
  std::size_t group_count() const { return groups_.size(); }
  const std::vector<std::string>& excluded() const { return excluded_; }
  const std::vector<SummaryBirthHistory>& women() const { return women_; }
  const std::vector<AugmentedRecord>& records() const { return records_; }
  const SweepStats& last_stats() const { return stats_; }
  const AugmentationSettings& settings() const { return settings_; }

  /// Starting state drawn from the independence proposal.
  template <FertilitySchedule F, HazardSchedule Q>
  void initialize(const F& f, const Q& q, std::uint64_t seed) {
    stats_ = {};
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      const auto& grp = groups_[g];
      Rng rng = make_stream(seed, 0xDA0, g);
      WomanTables tab(grp.key, settings_, f, q);
      ++stats_.table_constructions;
      for (std::size_t i : grp.members) {
        auto prop = propose_independence(tab, rng);
        Configuration c;
        if (prop) {
          c = canonical(prop->ordered_years, grp.key.deaths);
        } else {
          // No proposal mass: take the latest feasible years.
          std::vector<int> years;
          for (int b = 0; b < grp.key.births; ++b) years.push_back(tab.first_year() + tab.years() - 1 - b);
          c = canonical(years, grp.key.deaths);
        }
        records_[i] = impute_death_years(c, tab, rng);
      }
    }
  }

  /// One augmentation sweep. Group g draws from stream (seed, iteration, g), so
  /// the result does not depend on the thread count.
  template <FertilitySchedule F, HazardSchedule Q>
  const std::vector<AugmentedRecord>& sweep(const F& f, const Q& q, std::uint64_t seed, std::uint64_t iteration,
                                            int threads = 1) {
    std::vector<SweepStats> per(groups_.size());
    auto work = [&](std::size_t g) {
      const auto& grp = groups_[g];
      Rng rng = make_stream(seed, iteration, g);
      WomanTables tab(grp.key, settings_, f, q);
      auto& st = per[g];
      ++st.table_constructions;
      if (tab.enumeration_size() <= settings_.enumeration_cap) {
        EnumeratedConfigurations e(tab, settings_.enumeration_cap);
        const auto cdf = e.cdf();
        for (std::size_t i : grp.members) {
          records_[i] = impute_death_years(e.at(sample_cumulative(std::span<const double>(cdf), rng)), tab, rng);
          ++st.exact_draws;
        }
      } else {
        for (std::size_t i : grp.members) {
          Configuration c = records_[i].config;
          for (int s = 0; s < settings_.mh_steps_per_sweep; ++s) {
            bool acc = false;
            c = mh_step(c, tab, rng, &acc);
            ++st.mh_proposals;
            st.mh_accepts += acc ? 1 : 0;
          }
          records_[i] = impute_death_years(c, tab, rng);
        }
      }
    };
    parallel_for(groups_.size(), threads, work);
    stats_ = {};
    for (const auto& s : per) stats_ += s;
    return records_;
  }

 private:
  struct Group {
    WomanGroupKey key;
    std::vector<std::size_t> members;
  };

  template <class Fn>
  static void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
      for (std::size_t g = 0; g < n; ++g) fn(g);
      return;
    }
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t g = w; g < n; g += workers) fn(g);
      });
    for (auto& t : pool) t.join();
  }

  AugmentationSettings settings_;
  std::vector<SummaryBirthHistory> women_;
  std::vector<Group> groups_;
  std::vector<AugmentedRecord> records_;
  std::vector<std::string> excluded_;
  SweepStats stats_;
};

/// A single sweep over a dataset started from the independence proposal.
template <FertilitySchedule F, HazardSchedule Q>
std::vector<AugmentedRecord> run_da_sweep(const std::vector<SummaryBirthHistory>& sbh, const F& f, const Q& q,
                                          std::uint64_t seed, const AugmentationSettings& s = {},
                                          SweepStats* stats = nullptr) {
  DataAugmenter da(sbh, s);
  if (!da.excluded().empty() && da.size() + da.excluded().size() != sbh.size())
    throw std::logic_error("augmenter lost records");
  da.initialize(f, q, seed);
  da.sweep(f, q, seed, 1);
  if (stats) *stats = da.last_stats();
  return da.records();
}

}  // namespace u5mr
