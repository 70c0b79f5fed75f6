#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "u5mr/augmentation.hpp"
#include "u5mr/calendar.hpp"
#include "u5mr/core.hpp"
#include "u5mr/numeric.hpp"

namespace u5mr {

enum class Response { fertility, hazard };

/// Maps calendar years to time indices through sorted start years. Years
/// before the first start fall in the first period, years after the last start
/// in the last one.
struct PeriodAxis {
  std::vector<int> starts;

  int size() const { return static_cast<int>(starts.size()); }
  int index(int year) const {
    auto it = std::upper_bound(starts.begin(), starts.end(), year);
    return std::clamp(static_cast<int>(it - starts.begin()) - 1, 0, size() - 1);
  }

  static PeriodAxis regular(int first, int width, int count) {
    PeriodAxis p;
    for (int i = 0; i < count; ++i) p.starts.push_back(first + i * width);
    return p;
  }
  static PeriodAxis yearly(int first, int last) { return regular(first, 1, last - first + 1); }
};

/// HIV correction factors k(t; survey); absent entries are 1.
struct HivFactors {
  std::map<std::pair<int, int>, double> factor;  // (survey_id, year)

  double at(int survey_id, int year) const {
    auto it = factor.find({survey_id, year});
    return it == factor.end() ? 1.0 : it->second;
  }
};

/// Column layout of a fertility or hazard model: fixed effects (age level,
/// urban, districts after the first, SBH bias by strata) followed by RW2
/// effects indexed by (rw group, time).
struct ModelSpec {
  Response response = Response::hazard;
  std::string name;
  FertileAges ages{15, 49};  // fertility rows only exist inside this range
  int age_cap = 5;           // hazard ages above the cap share the cap's terms

  std::vector<int> age_column;  // by age (0..age_cap or 0..ages.max_age); -1 means no column
  std::vector<std::string> age_level_names;

  bool strata_effect = false;
  int n_districts = 1;
  bool district_effect = false;
  bool sbh_bias = false;
  bool use_hiv = false;

  std::vector<int> rw_group;  // by age; -1 means no random walk term
  int n_rw_groups = 0;
  std::vector<std::string> rw_group_names;
  PeriodAxis rw_axis;

  int max_age() const { return static_cast<int>(age_column.size()) - 1; }
  int clamp_age(int a) const { return std::min(a, max_age()); }

  int n_age_columns() const { return static_cast<int>(age_level_names.size()); }
  int urban_column() const { return strata_effect ? n_age_columns() : -1; }
  int district_offset() const { return n_age_columns() + (strata_effect ? 1 : 0); }
  int n_district_columns() const { return district_effect ? std::max(0, n_districts - 1) : 0; }
  int sbh_offset() const { return district_offset() + n_district_columns(); }
  int n_fixed() const { return sbh_offset() + (sbh_bias ? 2 : 0); }
  int n_random() const { return n_rw_groups * rw_axis.size(); }
  bool has_precision() const { return n_random() > 0; }
  int n_columns() const { return n_fixed() + n_random(); }
  int dim() const { return n_columns() + (has_precision() ? 1 : 0); }

  // Column indices of the design row for (age, year, covariates). With
  // prediction set, SBH bias columns are left out.
  int row_columns(int age, int year, const CovariateProfile& x, std::array<std::uint32_t, 8>& out,
                  bool prediction = false) const {
    const int a = clamp_age(age);
    int n = 0;
    if (a >= 0 && age_column[a] >= 0) out[n++] = static_cast<std::uint32_t>(age_column[a]);
    if (strata_effect && x.strata == Strata::urban) out[n++] = static_cast<std::uint32_t>(urban_column());
    if (district_effect && x.district > 0) {
      if (x.district >= n_districts) throw std::out_of_range("district id outside the model's district set");
      out[n++] = static_cast<std::uint32_t>(district_offset() + x.district - 1);
    }
    if (sbh_bias && x.is_sbh && !prediction) {
      out[n++] = static_cast<std::uint32_t>(sbh_offset());
      if (x.strata == Strata::urban) out[n++] = static_cast<std::uint32_t>(sbh_offset() + 1);
    }
    if (n_rw_groups > 0 && a >= 0 && rw_group[a] >= 0)
      out[n++] = static_cast<std::uint32_t>(n_fixed() + rw_group[a] * rw_axis.size() + rw_axis.index(year));
    std::sort(out.begin(), out.begin() + n);
    return n;
  }

  std::vector<std::string> column_names() const {
    std::vector<std::string> out = age_level_names;
    if (strata_effect) out.push_back("urban");
    for (int d = 1; d <= n_district_columns(); ++d) out.push_back("district_" + std::to_string(d));
    if (sbh_bias) {
      out.push_back("sbh");
      out.push_back("sbh_urban");
    }
    for (int g = 0; g < n_rw_groups; ++g)
      for (int t = 0; t < rw_axis.size(); ++t)
        out.push_back("rw_" + rw_group_names[g] + "_" + std::to_string(rw_axis.starts[t]));
    return out;
  }

  // True for columns that enter predictions.
  std::vector<bool> prediction_mask() const {
    std::vector<bool> m(static_cast<std::size_t>(n_columns()), true);
    if (sbh_bias) m[sbh_offset()] = m[sbh_offset() + 1] = false;
    return m;
  }
};

namespace detail {

// Drops the first fixed age level inside every RW2 group; the random walk
// carries that group's level.
inline void drop_levels_absorbed_by_rw(ModelSpec& s, const std::vector<int>& level_of_age,
                                       const std::vector<std::string>& level_names) {
  const int n_levels = static_cast<int>(level_names.size());
  std::vector<bool> dropped(static_cast<std::size_t>(n_levels), false);
  std::vector<bool> seen(static_cast<std::size_t>(s.n_rw_groups), false);
  for (std::size_t a = 0; a < level_of_age.size(); ++a) {
    const int lvl = level_of_age[a];
    const int g = s.rw_group.empty() ? -1 : s.rw_group[a];
    if (lvl < 0 || g < 0 || seen[g]) continue;
    seen[g] = true;
    dropped[lvl] = true;
  }
  std::vector<int> remap(static_cast<std::size_t>(n_levels), -1);
  s.age_level_names.clear();
  for (int l = 0; l < n_levels; ++l) {
    if (dropped[l]) continue;
    remap[l] = static_cast<int>(s.age_level_names.size());
    s.age_level_names.push_back(level_names[l]);
  }
  s.age_column.assign(level_of_age.size(), -1);
  for (std::size_t a = 0; a < level_of_age.size(); ++a)
    if (level_of_age[a] >= 0) s.age_column[a] = remap[level_of_age[a]];
}

}  // namespace detail

/// Simulation fertility model: logit f = beta_{c[m]} with bands 15-19, 20-24,
/// 25-29, 30-34, 35-49 and no time effect.
inline ModelSpec simulation_fertility_spec() {
  ModelSpec s;
  s.response = Response::fertility;
  s.name = "simulation-fertility";
  s.ages = {15, 49};
  std::vector<int> lvl(50, -1);
  for (int m = 15; m <= 49; ++m) lvl[m] = m < 35 ? (m - 15) / 5 : 4;
  s.age_column = lvl;
  s.age_level_names = {"fert_15_19", "fert_20_24", "fert_25_29", "fert_30_34", "fert_35_49"};
  return s;
}

/// Simulation hazard model: logit 1q_a = phi_{b[a]}(p), b[a] in {0, 1-4, 5+},
/// RW2 over periods. The age-band intercepts are carried by the RW2 levels.
inline ModelSpec simulation_hazard_spec(PeriodAxis periods) {
  ModelSpec s;
  s.response = Response::hazard;
  s.name = "simulation-hazard";
  s.age_cap = 5;
  s.rw_group = {0, 1, 1, 1, 1, 2};
  s.n_rw_groups = 3;
  s.rw_group_names = {"a0", "a1_4", "a5plus"};
  s.rw_axis = std::move(periods);
  detail::drop_levels_absorbed_by_rw(s, {0, 1, 1, 1, 1, 2}, {"haz_a0", "haz_a1_4", "haz_a5plus"});
  return s;
}

/// Fertility model for mixed survey/census data: logit f = phi_{c[m]}(p) +
/// beta_m + beta_strata over ages 9-48, ages 9-11 pooled, RW2 groups 9-14,
/// 15-19, 20-24, 25-29, 30-34, 35-48.
inline ModelSpec data_fertility_spec(PeriodAxis periods) {
  ModelSpec s;
  s.response = Response::fertility;
  s.name = "data-fertility";
  s.ages = {9, 48};
  std::vector<int> lvl(49, -1);
  std::vector<std::string> names;
  names.push_back("age_9_11");
  for (int m = 9; m <= 48; ++m) {
    if (m >= 12) {
      lvl[m] = static_cast<int>(names.size());
      names.push_back("age_" + std::to_string(m));
    } else {
      lvl[m] = 0;
    }
  }
  s.rw_group.assign(49, -1);
  for (int m = 9; m <= 48; ++m) s.rw_group[m] = m < 15 ? 0 : (m < 35 ? 1 + (m - 15) / 5 : 5);
  s.n_rw_groups = 6;
  s.rw_group_names = {"m9_14", "m15_19", "m20_24", "m25_29", "m30_34", "m35_48"};
  s.rw_axis = std::move(periods);
  s.strata_effect = true;
  detail::drop_levels_absorbed_by_rw(s, lvl, names);
  return s;
}

/// Hazard model for mixed survey/census data: logit 1q_a = beta_SBH,strata +
/// phi_{b[a]}(t) + beta_{c[a]} + beta_district + beta_strata, RW2 over years,
/// observed hazard scaled by k(t; survey).
inline ModelSpec data_hazard_spec(PeriodAxis years, int n_districts) {
  ModelSpec s;
  s.response = Response::hazard;
  s.name = "data-hazard";
  s.age_cap = 5;
  s.rw_group = {0, 1, 1, 1, 1, 2};
  s.n_rw_groups = 3;
  s.rw_group_names = {"a0", "a1_4", "a5plus"};
  s.rw_axis = std::move(years);
  s.strata_effect = true;
  s.n_districts = n_districts;
  s.district_effect = n_districts > 1;
  s.sbh_bias = true;
  s.use_hiv = true;
  detail::drop_levels_absorbed_by_rw(s, {0, 1, 2, 3, 4, 5}, {"age_0", "age_1", "age_2", "age_3", "age_4", "age_5plus"});
  return s;
}

// ---------------------------------------------------------------------------
// Binomial cells: Y_i ~ Binomial(N_i, k_i p_i), logit p_i = X*_i theta.

struct BinomialCells {
  std::vector<double> y, n, k;
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> cols;

  std::size_t size() const { return y.size(); }
  std::span<const std::uint32_t> row(std::size_t i) const {
    return {cols.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
};

/// Creates cells on demand for distinct (design row, k) pairs and accumulates
/// Bernoulli indicators into them.
class CellBuilder {
 public:
  CellBuilder(const ModelSpec& spec, ObservationRules rules, const HivFactors* hiv = nullptr)
      : spec_(&spec), rules_(rules), hiv_(hiv) {}

  std::uint32_t fertility_cell(int m, int year, const CovariateProfile& x, int t_surv) {
    const auto key = pack(0, m, year, x, t_surv);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    return memo_[key] = cell(m, year, x, rules_.fertility_factor(year, t_surv));
  }

  std::uint32_t hazard_cell(int a, int year, const CovariateProfile& x, int t_surv) {
    const auto key = pack(1, a, year, x, t_surv);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    double k = rules_.hazard_factor(year, t_surv);
    if (spec_->use_hiv && hiv_) k *= hiv_->at(x.survey_id, year);
    return memo_[key] = cell(a, year, x, k);
  }

  /// Zeroes all counts while keeping the cell layout.
  void clear_counts() {
    std::fill(cells_.y.begin(), cells_.y.end(), 0.0);
    std::fill(cells_.n.begin(), cells_.n.end(), 0.0);
  }

  void add(std::uint32_t c, double y, double n) {
    cells_.y[c] += y;
    cells_.n[c] += n;
  }

  /// Fertility at-risk years of one woman: every feasible year before the
  /// survey, with y = 1 in birth years.
  void add_fertility(int m_surv, int t_surv, const CovariateProfile& x, const std::vector<int>& birth_years) {
    const int first = rules_.first_birth_year(m_surv, t_surv, spec_->ages);
    const int last = rules_.last_feasible_birth_year(m_surv, t_surv, spec_->ages);
    for (int t = first; t <= last; ++t) {
      const bool born = std::find(birth_years.begin(), birth_years.end(), t) != birth_years.end();
      add(fertility_cell(m_surv - (t_surv - t), t, x, t_surv), born ? 1.0 : 0.0, 1.0);
    }
  }

  /// Child-years at risk from birth until death or the end of exposure.
  void add_child(int t_b, std::optional<int> t_d, int t_surv, const CovariateProfile& x) {
    const int n_exp = rules_.exposure_years(t_b, t_surv);
    const int last = t_d ? rules_.death_age(t_b, *t_d, t_surv) : n_exp - 1;
    for (int a = 0; a <= last; ++a)
      add(hazard_cell(a, t_b + a, x, t_surv), (t_d && a == last) ? 1.0 : 0.0, 1.0);
  }

  const BinomialCells& cells() const { return cells_; }
  BinomialCells& cells() { return cells_; }
  const ModelSpec& spec() const { return *spec_; }
  const ObservationRules& rules() const { return rules_; }

  std::uint32_t cell(int age, int year, const CovariateProfile& x, double k) {
    std::array<std::uint32_t, 8> buf{};
    const int n = spec_->row_columns(age, year, x, buf);
    Key key{std::vector<std::uint32_t>(buf.begin(), buf.begin() + n), k};
    auto [it, fresh] = index_.try_emplace(std::move(key), static_cast<std::uint32_t>(cells_.size()));
    if (fresh) {
      cells_.y.push_back(0.0);
      cells_.n.push_back(0.0);
      cells_.k.push_back(k);
      cells_.cols.insert(cells_.cols.end(), buf.begin(), buf.begin() + n);
      cells_.offsets.push_back(static_cast<std::uint32_t>(cells_.cols.size()));
    }
    return it->second;
  }

 private:
  using Key = std::pair<std::vector<std::uint32_t>, double>;

  static std::uint64_t pack(int kind, int age, int year, const CovariateProfile& x, int t_surv) {
    const int ya = std::min(spec_age_limit, std::max(0, age));
    const int yo = year - 1800, so = t_surv - 1800;
    if (yo < 0 || yo >= 512 || so < 0 || so >= 512 || x.district < 0 || x.district >= (1 << 16) || x.survey_id < 0 ||
        x.survey_id >= (1 << 10) || age < 0 || age > spec_age_limit)
      throw std::out_of_range("record outside the supported year/age/covariate range");
    std::uint64_t k = static_cast<std::uint64_t>(kind);
    k = (k << 7) | static_cast<std::uint64_t>(ya);
    k = (k << 9) | static_cast<std::uint64_t>(yo);
    k = (k << 9) | static_cast<std::uint64_t>(so);
    k = (k << 16) | static_cast<std::uint64_t>(x.district);
    k = (k << 10) | static_cast<std::uint64_t>(x.survey_id);
    k = (k << 1) | (x.strata == Strata::urban ? 1u : 0u);
    k = (k << 1) | (x.is_sbh ? 1u : 0u);
    return k;
  }
  static constexpr int spec_age_limit = 127;

  const ModelSpec* spec_;
  ObservationRules rules_;
  const HivFactors* hiv_;
  BinomialCells cells_;
  std::map<Key, std::uint32_t> index_;
  std::unordered_map<std::uint64_t, std::uint32_t> memo_;
};

/// Aggregated cells for one response from full histories plus augmented
/// summary histories (which must align with `sbh`).
inline BinomialCells build_design(const std::vector<FullBirthHistory>& fbh, const std::vector<SummaryBirthHistory>& sbh,
                                  const std::vector<AugmentedRecord>& augmented, const ModelSpec& spec,
                                  ObservationRules rules, const HivFactors* hiv = nullptr) {
  if (sbh.size() != augmented.size()) throw std::invalid_argument("augmented records must align with SBH women");
  CellBuilder b(spec, rules, hiv);
  for (const auto& w : fbh) {
    if (spec.response == Response::fertility) {
      std::vector<int> years;
      for (const auto& c : w.children) years.push_back(c.birth_year);
      b.add_fertility(w.mother_age_at_survey, w.survey_year, w.covariates, years);
    } else {
      for (const auto& c : w.children) b.add_child(c.birth_year, c.death_year, w.survey_year, w.covariates);
    }
  }
  for (std::size_t i = 0; i < sbh.size(); ++i) {
    const auto& w = sbh[i];
    const auto& r = augmented[i];
    if (spec.response == Response::fertility) {
      b.add_fertility(w.mother_age_at_survey, w.survey_year, w.covariates, r.config.birth_years);
    } else {
      std::size_t k = 0;
      for (std::size_t j = 0; j < r.config.birth_years.size(); ++j) {
        std::optional<int> td;
        if (r.config.death_indicators[j]) td = r.death_years[k++];
        b.add_child(r.config.birth_years[j], td, w.survey_year, w.covariates);
      }
    }
  }
  return b.cells();
}

// ---------------------------------------------------------------------------
// Priors.

/// RW2 precision scaled so the geometric mean of the marginal variances under
/// its generalized inverse is 1.
struct ScaledRW2Precision {
  Eigen::MatrixXd K;
  int rank = 0;
  double scale = 1.0;
};

inline Eigen::MatrixXd generalized_inverse(const Eigen::MatrixXd& K, int rank) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
  const auto n = K.rows();
  Eigen::MatrixXd inv = Eigen::MatrixXd::Zero(n, n);
  // Eigenvalues ascend; the null space is the first n - rank of them.
  for (Eigen::Index i = n - rank; i < n; ++i) inv += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() / es.eigenvalues()(i);
  return inv;
}

inline double generalized_variance(const Eigen::MatrixXd& K, int rank) {
  const Eigen::MatrixXd inv = generalized_inverse(K, rank);
  double s = 0.0;
  for (Eigen::Index i = 0; i < inv.rows(); ++i) s += std::log(inv(i, i));
  return std::exp(s / static_cast<double>(inv.rows()));
}

inline ScaledRW2Precision build_rw2_precision(int n) {
  if (n < 3) throw std::invalid_argument("RW2 needs at least 3 time points");
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n - 2, n);
  for (int i = 0; i < n - 2; ++i) {
    D(i, i) = 1.0;
    D(i, i + 1) = -2.0;
    D(i, i + 2) = 1.0;
  }
  ScaledRW2Precision p;
  p.K = D.transpose() * D;
  p.rank = n - 2;
  p.scale = generalized_variance(p.K, p.rank);
  p.K *= p.scale;
  return p;
}

/// PC prior on a precision kappa, calibrated by P(sigma > u) = alpha with
/// sigma = kappa^{-1/2}. literal_lambda selects lambda = -log(alpha)/2.
struct PcPrior {
  double alpha = 0.01;
  double u = 0.5;
  bool literal_lambda = false;

  double lambda() const { return literal_lambda ? -std::log(alpha) / 2.0 : -std::log(alpha) / u; }
};

inline double pc_prior_logdensity(double kappa, double alpha, double u, bool literal_lambda = false) {
  if (!(kappa > 0.0)) throw std::invalid_argument("precision must be positive");
  const double lambda = PcPrior{alpha, u, literal_lambda}.lambda();
  return std::log(lambda / 2.0) - 1.5 * std::log(kappa) - lambda / std::sqrt(kappa);
}

struct Priors {
  double sigma2_beta = 100.0;
  PcPrior pc;
};

// ---------------------------------------------------------------------------
// Negative log posterior.

struct ParameterState {
  std::vector<double> beta;
  std::vector<double> phi;
  double eta_kappa = 0.0;

  static ParameterState zeros(const ModelSpec& s) {
    return {std::vector<double>(static_cast<std::size_t>(s.n_fixed()), 0.0),
            std::vector<double>(static_cast<std::size_t>(s.n_random()), 0.0), 0.0};
  }

  std::vector<double> flatten(const ModelSpec& s) const {
    std::vector<double> v(beta);
    v.insert(v.end(), phi.begin(), phi.end());
    if (s.has_precision()) v.push_back(eta_kappa);
    return v;
  }

  static ParameterState unflatten(const ModelSpec& s, std::span<const double> v) {
    if (static_cast<int>(v.size()) != s.dim()) throw std::invalid_argument("parameter vector has wrong length");
    ParameterState p;
    const auto nf = static_cast<std::size_t>(s.n_fixed());
    const auto nr = static_cast<std::size_t>(s.n_random());
    p.beta.assign(v.begin(), v.begin() + nf);
    p.phi.assign(v.begin() + nf, v.begin() + nf + nr);
    p.eta_kappa = s.has_precision() ? v[nf + nr] : 0.0;
    return p;
  }
};

class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t cell) : std::runtime_error(what), cell_(cell) {}
  std::size_t cell() const { return cell_; }

 private:
  std::size_t cell_;
};

/// U(theta) and its gradient for one model over aggregated binomial cells.
/// theta is [beta, phi, eta_kappa] with eta_kappa present only when the model
/// has RW2 terms.
class Posterior {
 public:
  Posterior(const ModelSpec& spec, const BinomialCells& cells, Priors priors = {})
      : spec_(&spec), cells_(&cells), priors_(priors) {
    if (spec.n_random() > 0) {
      const auto rw = build_rw2_precision(spec.rw_axis.size());
      block_ = rw.K;
      rank_ = rw.rank * spec.n_rw_groups;
    }
  }

  void set_cells(const BinomialCells& cells) { cells_ = &cells; }
  const ModelSpec& spec() const { return *spec_; }
  std::size_t dim() const { return static_cast<std::size_t>(spec_->dim()); }
  int rank() const { return rank_; }
  const Eigen::MatrixXd& rw_block() const { return block_; }
  const Priors& priors() const { return priors_; }

  double value(std::span<const double> theta) const { return evaluate(theta, nullptr); }

  /// Fills grad and returns U.
  double gradient(std::span<const double> theta, std::span<double> grad) const { return evaluate(theta, &grad); }

 private:
  double evaluate(std::span<const double> theta, std::span<double>* grad) const {
    const auto& c = *cells_;
    const auto nf = static_cast<std::size_t>(spec_->n_fixed());
    const auto nc = static_cast<std::size_t>(spec_->n_columns());
    if (theta.size() != dim()) throw std::invalid_argument("theta has wrong length");
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    double u = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      double lp = 0.0;
      for (auto j : c.row(i)) lp += theta[j];
      if (!std::isfinite(lp)) throw NumericalError("nonfinite linear predictor in cell " + std::to_string(i), i);
      const double y = c.y[i], n = c.n[i], k = c.k[i];
      u += -y * lp + n * log1pexp(lp);
      double dlp = -y + n * expit(lp);
      if (k < 1.0) {
        const double shifted = lp + std::log1p(-k);
        u -= (n - y) * log1pexp(shifted);
        dlp -= (n - y) * expit(shifted);
      }
      if (grad)
        for (auto j : c.row(i)) (*grad)[j] += dlp;
    }
    for (std::size_t j = 0; j < nf; ++j) {
      u += theta[j] * theta[j] / (2.0 * priors_.sigma2_beta);
      if (grad) (*grad)[j] += theta[j] / priors_.sigma2_beta;
    }
    if (spec_->has_precision()) {
      const double eta = theta[nc];
      const double kappa = std::exp(eta);
      const double lambda = priors_.pc.lambda();
      const auto T = static_cast<Eigen::Index>(spec_->rw_axis.size());
      double quad = 0.0;
      for (int g = 0; g < spec_->n_rw_groups; ++g) {
        const std::size_t off = nf + static_cast<std::size_t>(g) * static_cast<std::size_t>(T);
        Eigen::Map<const Eigen::VectorXd> phi(theta.data() + off, T);
        const Eigen::VectorXd kphi = block_ * phi;
        quad += phi.dot(kphi);
        if (grad)
          for (Eigen::Index t = 0; t < T; ++t) (*grad)[off + static_cast<std::size_t>(t)] += kappa * kphi(t);
      }
      u += kappa * quad / 2.0 - rank_ / 2.0 * eta + eta / 2.0 + lambda * std::exp(-eta / 2.0);
      if (grad) (*grad)[nc] = kappa * quad / 2.0 - rank_ / 2.0 + 0.5 - lambda / 2.0 * std::exp(-eta / 2.0);
    }
    return u;
  }

  const ModelSpec* spec_;
  const BinomialCells* cells_;
  Priors priors_;
  Eigen::MatrixXd block_;
  int rank_ = 0;
};

inline double neg_log_posterior(const ParameterState& state, const ModelSpec& spec, const BinomialCells& cells,
                                const Priors& priors = {}) {
  const auto theta = state.flatten(spec);
  return Posterior(spec, cells, priors).value(theta);
}

/// Gradient in ParameterState layout: (dU/dbeta, dU/dphi, dU/deta).
inline ParameterState gradient(const ParameterState& state, const ModelSpec& spec, const BinomialCells& cells,
                               const Priors& priors = {}) {
  const auto theta = state.flatten(spec);
  std::vector<double> g(theta.size());
  Posterior(spec, cells, priors).gradient(theta, g);
  return ParameterState::unflatten(spec, g);
}

// ---------------------------------------------------------------------------
// Schedules implied by a parameter vector.

/// Probability surface of a fitted model. The observation scale includes SBH
/// bias terms and (for hazards) HIV factors; the prediction scale leaves both
/// out. Calendar corrections are applied by the callers that know birth years.
class ModelSchedule {
 public:
  ModelSchedule(const ModelSpec& spec, std::vector<double> theta, bool prediction, const HivFactors* hiv = nullptr)
      : spec_(&spec), theta_(std::move(theta)), prediction_(prediction), hiv_(hiv) {}

  double linear_predictor(int age, int year, const CovariateProfile& x) const {
    std::array<std::uint32_t, 8> buf{};
    const int n = spec_->row_columns(age, year, x, buf, prediction_);
    double lp = 0.0;
    for (int i = 0; i < n; ++i) lp += theta_[buf[i]];
    return lp;
  }

  double operator()(int age, int year, const CovariateProfile& x) const {
    if (spec_->response == Response::fertility && !spec_->ages.contains(age)) return 0.0;
    double p = expit(linear_predictor(age, year, x));
    if (!prediction_ && spec_->use_hiv && hiv_) p = std::min(1.0, p * hiv_->at(x.survey_id, year));
    return p;
  }

 private:
  const ModelSpec* spec_;
  std::vector<double> theta_;
  bool prediction_;
  const HivFactors* hiv_;
};

}  // namespace u5mr
