#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <tomlplusplus/toml.hpp>

#include "u5mr/brass.hpp"
#include "u5mr/direct.hpp"
#include "u5mr/evaluate.hpp"
#include "u5mr/gibbs.hpp"
#include "u5mr/io.hpp"
#include "u5mr/posterior.hpp"
#include "u5mr/simulator.hpp"

namespace u5mr {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode { kOk = 0, kSchemaError = 2, kNumericalFailure = 3, kInfeasibleRecords = 4 };

/// Everything a pipeline stage reads. Round-trips through JSON so a manifest
/// alone reproduces a run.
struct RunConfig {
  std::string stage = "simulate";
  std::string preset = "simulation";  // simulation | malawi
  std::uint64_t seed = 2010;
  int threads = 1;
  std::string output = "out";
  std::string calendar;  // whole_years | survey_months; empty picks the preset default

  // simulation
  int n_women = 5000, n_fbh = 1000, survey_year = 2010, cluster_size = 25;
  std::string truth;  // JSON truth file; empty uses the built-in defaults

  // inputs; empty paths fall back to files in the output directory
  std::string fbh, sbh, hiv, coefficients = "data/trussell_coefficients.csv", life_tables = "data/life_tables.csv",
                              population;

  // model
  int period_start = 1975, period_width = 5, periods = 7;  // reporting periods (and simulation RW2 axis)
  int fert_period_start = 1964, fert_periods = 11;         // malawi fertility RW2 periods
  int hazard_first_year = 1975, hazard_last_year = 2009;   // malawi hazard RW2 years
  bool fbh_only = false;

  // sampler
  double step_size = 0.05, target_acceptance = 0.8, step_jitter = 0.1;
  int leapfrog_steps = 25, warmup = 1000, chain_length = 5000, thin = 5;
  bool adapt_mass = true;
  double enumeration_cap = 10000.0;
  int mh_steps_per_sweep = 1;
  double max_excluded_fraction = 0.05;

  // priors
  double sigma2_beta = 100.0, pc_alpha = 0.01, pc_u = 0.5;
  bool literal_lambda = false;

  // comparators
  std::string family = "north";  // or "auto"
  bool include_15_19 = false;
  int hiv_draws = 100000;
  std::string hiv_mode = "literal";

  // evaluation: model name -> estimate file; reference is truth JSON or an estimate file
  std::map<std::string, std::string> models;
  std::string reference;
  bool literal_ninth = false;
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"mode", c.stage},
          {"preset", c.preset},
          {"seed", c.seed},
          {"threads", c.threads},
          {"output", c.output},
          {"calendar", c.calendar},
          {"simulation",
           {{"n_women", c.n_women}, {"n_fbh", c.n_fbh}, {"survey_year", c.survey_year}, {"cluster_size", c.cluster_size},
            {"truth", c.truth}}},
          {"inputs",
           {{"fbh", c.fbh}, {"sbh", c.sbh}, {"hiv", c.hiv}, {"coefficients", c.coefficients},
            {"life_tables", c.life_tables}, {"population", c.population}}},
          {"model",
           {{"period_start", c.period_start}, {"period_width", c.period_width}, {"periods", c.periods},
            {"fert_period_start", c.fert_period_start}, {"fert_periods", c.fert_periods},
            {"hazard_first_year", c.hazard_first_year}, {"hazard_last_year", c.hazard_last_year},
            {"fbh_only", c.fbh_only}}},
          {"hmc",
           {{"step_size", c.step_size}, {"leapfrog_steps", c.leapfrog_steps}, {"warmup", c.warmup},
            {"chain_length", c.chain_length}, {"thin", c.thin}, {"target_acceptance", c.target_acceptance},
            {"step_jitter", c.step_jitter}, {"adapt_mass", c.adapt_mass}}},
          {"augmentation",
           {{"enumeration_cap", c.enumeration_cap}, {"mh_steps_per_sweep", c.mh_steps_per_sweep},
            {"max_excluded_fraction", c.max_excluded_fraction}}},
          {"priors",
           {{"sigma2_beta", c.sigma2_beta}, {"pc_alpha", c.pc_alpha}, {"pc_u", c.pc_u},
            {"literal_lambda", c.literal_lambda}}},
          {"brass", {{"family", c.family}, {"include_15_19", c.include_15_19}}},
          {"hiv", {{"draws", c.hiv_draws}, {"mode", c.hiv_mode}}},
          {"evaluate", {{"models", c.models}, {"reference", c.reference}, {"literal_ninth", c.literal_ninth}}}};
}

namespace detail {

template <class T>
void take(const nlohmann::json& j, const char* section, const char* key, T& out) {
  const nlohmann::json* node = &j;
  if (section) {
    if (!j.contains(section)) return;
    node = &j.at(section);
    if (!node->is_object()) throw SchemaError("config", 0, std::string("[") + section + "] must be a table");
  }
  if (!node->contains(key)) return;
  try {
    out = node->at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError("config", 0, std::string(section ? section : "") + (section ? "." : "") + key + " has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const std::string& where) {
  if (!j.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw SchemaError("config", 0, "unknown key '" + where + it.key() + "'");
    if (it.value().is_object() && known.at(it.key()).is_object() && it.key() != "models")
      reject_unknown(it.value(), known.at(it.key()), where + it.key() + ".");
  }
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::take;
  RunConfig c;
  detail::reject_unknown(j, to_json(c), "");
  take(j, nullptr, "mode", c.stage);
  take(j, nullptr, "preset", c.preset);
  take(j, nullptr, "seed", c.seed);
  take(j, nullptr, "threads", c.threads);
  take(j, nullptr, "output", c.output);
  take(j, nullptr, "calendar", c.calendar);
  take(j, "simulation", "n_women", c.n_women);
  take(j, "simulation", "n_fbh", c.n_fbh);
  take(j, "simulation", "survey_year", c.survey_year);
  take(j, "simulation", "cluster_size", c.cluster_size);
  take(j, "simulation", "truth", c.truth);
  take(j, "inputs", "fbh", c.fbh);
  take(j, "inputs", "sbh", c.sbh);
  take(j, "inputs", "hiv", c.hiv);
  take(j, "inputs", "coefficients", c.coefficients);
  take(j, "inputs", "life_tables", c.life_tables);
  take(j, "inputs", "population", c.population);
  take(j, "model", "period_start", c.period_start);
  take(j, "model", "period_width", c.period_width);
  take(j, "model", "periods", c.periods);
  take(j, "model", "fert_period_start", c.fert_period_start);
  take(j, "model", "fert_periods", c.fert_periods);
  take(j, "model", "hazard_first_year", c.hazard_first_year);
  take(j, "model", "hazard_last_year", c.hazard_last_year);
  take(j, "model", "fbh_only", c.fbh_only);
  take(j, "hmc", "step_size", c.step_size);
  take(j, "hmc", "leapfrog_steps", c.leapfrog_steps);
  take(j, "hmc", "warmup", c.warmup);
  take(j, "hmc", "chain_length", c.chain_length);
  take(j, "hmc", "thin", c.thin);
  take(j, "hmc", "target_acceptance", c.target_acceptance);
  take(j, "hmc", "step_jitter", c.step_jitter);
  take(j, "hmc", "adapt_mass", c.adapt_mass);
  take(j, "augmentation", "enumeration_cap", c.enumeration_cap);
  take(j, "augmentation", "mh_steps_per_sweep", c.mh_steps_per_sweep);
  take(j, "augmentation", "max_excluded_fraction", c.max_excluded_fraction);
  take(j, "priors", "sigma2_beta", c.sigma2_beta);
  take(j, "priors", "pc_alpha", c.pc_alpha);
  take(j, "priors", "pc_u", c.pc_u);
  take(j, "priors", "literal_lambda", c.literal_lambda);
  take(j, "brass", "family", c.family);
  take(j, "brass", "include_15_19", c.include_15_19);
  take(j, "hiv", "draws", c.hiv_draws);
  take(j, "hiv", "mode", c.hiv_mode);
  take(j, "evaluate", "models", c.models);
  take(j, "evaluate", "reference", c.reference);
  take(j, "evaluate", "literal_ninth", c.literal_ninth);

  if (c.preset != "simulation" && c.preset != "malawi") throw SchemaError("config", 0, "preset must be simulation or malawi");
  if (!c.calendar.empty() && c.calendar != "whole_years" && c.calendar != "survey_months")
    throw SchemaError("config", 0, "calendar must be whole_years or survey_months");
  if (c.hiv_mode != "literal" && c.hiv_mode != "observed_scale")
    throw SchemaError("config", 0, "hiv.mode must be literal or observed_scale");
  if (c.threads < 1) throw SchemaError("config", 0, "threads must be at least 1");
  if (c.periods < 1 || c.period_width < 1) throw SchemaError("config", 0, "periods and period_width must be positive");
  return c;
}

inline RunConfig config_from_toml(const std::string& text, const std::string& name = "config") {
  toml::table tbl;
  try {
    tbl = toml::parse(text, name);
  } catch (const toml::parse_error& e) {
    throw SchemaError(name, e.source().begin.line, std::string(e.description()));
  }
  std::ostringstream ss;
  ss << toml::json_formatter{tbl};
  return config_from_json(nlohmann::json::parse(ss.str()));
}

/// A TOML run config or a JSON manifest written by an earlier run.
inline RunConfig load_config(const std::string& path) {
  const std::string text = read_file(path);
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(path, 0, e.what());
    }
    if (!j.contains("config")) throw SchemaError(path, 0, "manifest has no config");
    return config_from_json(j.at("config"));
  }
  return config_from_toml(text, path);
}

// ---------------------------------------------------------------------------
// Helpers shared by stages.

struct StageResult {
  int exit_code = kOk;
  std::vector<std::string> outputs;  // file names inside the output directory
  std::vector<std::string> messages;
};

class StageFailure : public std::runtime_error {
 public:
  StageFailure(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

struct Workspace {
  RunConfig cfg;
  std::filesystem::path out;
  StageResult result;

  std::string path(const std::string& configured, const std::string& fallback) const {
    return configured.empty() ? (out / fallback).string() : configured;
  }
  void write(const std::string& name, const std::string& text) {
    write_file((out / name).string(), text);
    result.outputs.push_back(name);
  }
};

inline ObservationRules rules_of(const RunConfig& c) {
  ObservationRules r;
  const std::string mode = c.calendar.empty() ? (c.preset == "malawi" ? "survey_months" : "whole_years") : c.calendar;
  r.mode = mode == "survey_months" ? CalendarMode::survey_months : CalendarMode::whole_years;
  return r;
}

inline std::vector<Period> periods_of(const RunConfig& c) {
  return regular_periods(c.period_start, c.period_width, c.periods);
}

inline Dataset load_dataset(const Workspace& w, bool need_fbh, bool need_sbh) {
  const auto& c = w.cfg;
  std::vector<FbhRow> fbh;
  std::vector<SbhRow> sbh;
  const std::string fp = w.path(c.fbh, "fbh.csv"), sp = w.path(c.sbh, "sbh.csv");
  if (need_fbh) fbh = parse_fbh(read_csv(fp));
  if (need_sbh && (!c.sbh.empty() || std::filesystem::exists(sp))) sbh = parse_sbh(read_csv(sp));
  return build_dataset(fbh, sbh, rules_of(c), fp);
}

inline HmcConfig hmc_of(const RunConfig& c) {
  HmcConfig h;
  h.step_size = c.step_size;
  h.leapfrog_steps = c.leapfrog_steps;
  h.warmup_iterations = c.warmup;
  h.chain_length = c.chain_length;
  h.thin = c.thin;
  h.target_acceptance = c.target_acceptance;
  h.step_jitter = c.step_jitter;
  h.adapt_mass = c.adapt_mass;
  h.seed = c.seed;
  return h;
}

inline std::vector<double> logit_all(const std::vector<double>& q) {
  std::vector<double> out;
  for (double v : q) out.push_back(logit(std::clamp(v, 1e-12, 1.0 - 1e-12)));
  return out;
}

/// Posterior summary row: logit mean/variance, median q5 and 95% quantiles.
inline EstimateRow posterior_row(const std::string& period, const std::string& district, const std::string& method,
                                 const std::vector<double>& q5_draws) {
  const auto lq = logit_all(q5_draws);
  EstimateRow r;
  r.period = period;
  r.district = district;
  r.method = method;
  r.estimate = mean(lq);
  r.variance = lq.size() > 1 ? sample_variance(lq) : 0.0;
  r.q5 = quantile(q5_draws, 0.5);
  r.lower = quantile(q5_draws, 0.025);
  r.upper = quantile(q5_draws, 0.975);
  return r;
}

// ---------------------------------------------------------------------------
// Stages.

inline void stage_simulate(Workspace& w) {
  const auto& c = w.cfg;
  SimulationConfig sc;
  sc.n_women = c.n_women;
  sc.n_fbh = c.n_fbh;
  sc.survey_year = c.survey_year;
  sc.cluster_size = c.cluster_size;
  sc.seed = c.seed;
  if (!c.truth.empty()) {
    try {
      sc.truth = truth_from_json(nlohmann::json::parse(read_file(c.truth)));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(c.truth, 0, e.what());
    }
  }
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError("config", 0, e.what());
  }
  const SimulatedCohort co = simulate_cohort(sc);
  w.write("fbh.csv", emit_fbh(fbh_rows_of(co.fbh, co.surveys, co.districts)));
  w.write("sbh.csv", emit_sbh(sbh_rows_of(co.sbh, co.surveys, co.districts)));
  w.write("truth.json", truth_to_json(co.truth).dump(2) + "\n");
}

struct FitModels {
  ModelSpec fertility, hazard;
};

inline FitModels models_of(const RunConfig& c, int n_districts) {
  if (c.preset == "simulation")
    return {simulation_fertility_spec(), simulation_hazard_spec(PeriodAxis::regular(c.period_start, c.period_width, c.periods))};
  if (c.hazard_last_year - c.hazard_first_year < 2) throw SchemaError("config", 0, "hazard RW2 needs at least 3 years");
  return {data_fertility_spec(PeriodAxis::regular(c.fert_period_start, 5, c.fert_periods)),
          data_hazard_spec(PeriodAxis::yearly(c.hazard_first_year, c.hazard_last_year), n_districts)};
}

inline void stage_fit(Workspace& w) {
  const auto& c = w.cfg;
  Dataset d = load_dataset(w, true, !c.fbh_only);
  if (c.fbh_only) d.sbh.clear();
  HivFactors hiv;
  if (!c.hiv.empty()) hiv = parse_hiv(read_csv(c.hiv), d.surveys);
  const auto m = models_of(c, static_cast<int>(d.districts.labels.size()));

  McmcConfig mc;
  mc.hmc = hmc_of(c);
  mc.priors.sigma2_beta = c.sigma2_beta;
  mc.priors.pc = PcPrior{c.pc_alpha, c.pc_u, c.literal_lambda};
  mc.augmentation.rules = rules_of(c);
  mc.augmentation.enumeration_cap = c.enumeration_cap;
  mc.augmentation.mh_steps_per_sweep = c.mh_steps_per_sweep;
  mc.seed = c.seed;
  mc.threads = c.threads;

  ChainOutput out;
  try {
    out = run_mcmc(d.fbh, d.sbh, m.fertility, m.hazard, mc, c.hiv.empty() ? nullptr : &hiv);
  } catch (const InfeasibleRecord& e) {
    throw StageFailure(kInfeasibleRecords, e.what());
  }
  for (const auto& e : out.excluded) w.result.messages.push_back("excluded SBH woman " + e);
  if (!d.sbh.empty() && static_cast<double>(out.excluded.size()) > c.max_excluded_fraction * static_cast<double>(d.sbh.size()))
    throw StageFailure(kInfeasibleRecords, std::to_string(out.excluded.size()) + " infeasible SBH records exceed the threshold");

  w.write("chain.csv", emit_chain(out));
  const std::string method = d.sbh.empty() ? "bayes_fbh" : "bayes_fbh_sbh";
  const auto periods = periods_of(c);
  std::vector<EstimateRow> rows;
  if (c.preset == "simulation") {
    const CovariateProfile x{};
    for (const auto& p : periods) {
      std::vector<double> q5;
      for (const auto& th : out.hazard_draws) q5.push_back(under_five_mortality(p.start, x, ModelSchedule(m.hazard, th, true)));
      rows.push_back(posterior_row(p.label(), "all", method, q5));
    }
    std::string fert = csv_line({"parameter", "median", "lower", "upper"});
    for (int b = 0; b < m.fertility.n_age_columns(); ++b) {
      std::vector<double> v;
      for (const auto& th : out.fertility_draws) v.push_back(expit(th[static_cast<std::size_t>(b)]));
      fert += csv_line({m.fertility.age_level_names[static_cast<std::size_t>(b)], format_double(quantile(v, 0.5)),
                        format_double(quantile(v, 0.025)), format_double(quantile(v, 0.975))});
    }
    w.write("fertility.csv", fert);
  } else {
    std::vector<PopulationCount> pop;
    if (!c.population.empty()) pop = parse_population(read_csv(c.population), d.districts);
    const int nd = static_cast<int>(d.districts.labels.size());
    for (std::size_t pi = 0; pi < periods.size(); ++pi) {
      const auto& p = periods[pi];
      for (int dist = 0; dist < nd; ++dist) {
        std::vector<double> q5;
        for (std::size_t j = 0; j < out.hazard_draws.size(); ++j) {
          ModelSchedule hz(m.hazard, out.hazard_draws[j], true), fz(m.fertility, out.fertility_draws[j], true);
          double num = 0.0, den = 0.0;
          for (int t = p.start; t <= p.end; ++t)
            for (Strata s : {Strata::urban, Strata::rural}) {
              const CovariateProfile x{dist, s, 0, false};
              double wgt = 1.0;  // equal weights without population counts
              if (!pop.empty()) {
                wgt = 0.0;
                for (const auto& pc : pop)
                  if (pc.year == t && pc.district == dist && pc.strata == s)
                    wgt += static_cast<double>(pc.women) * fz(pc.age, t, x);
              }
              num += wgt * under_five_mortality(t, x, hz);
              den += wgt;
            }
          if (den > 0.0) q5.push_back(num / den);
        }
        if (!q5.empty()) rows.push_back(posterior_row(p.label(), d.districts.labels[static_cast<std::size_t>(dist)], method, q5));
      }
    }
  }
  w.write("fit_estimates.csv", emit_estimates(rows));
  w.result.messages.push_back("fertility acceptance " + format_fixed(out.fertility_acceptance, 3) +
                              ", hazard acceptance " + format_fixed(out.hazard_acceptance, 3) +
                              ", augmentation MH acceptance " + format_fixed(out.augmentation_acceptance, 3));
  if (out.divergence_flagged) throw StageFailure(kNumericalFailure, "divergent chain: consecutive nonfinite Hamiltonians");
}

inline LifeTables load_life_tables(const RunConfig& c) { return parse_life_tables(read_csv(c.life_tables)); }

/// (1q0, 4q1) pairs from the FBH data, one per reporting period with deaths.
inline std::vector<std::pair<double, double>> direct_child_pairs(const Dataset& d, const RunConfig& c) {
  std::vector<std::pair<double, double>> out;
  for (const auto& p : periods_of(c)) {
    HazardTally t;
    for (const auto& w : d.fbh) t.add(tally_woman(w, p, rules_of(c)));
    if (t.exposure0 > 0 && t.exposure14 > 0 && t.deaths0 > 0 && t.deaths14 > 0) {
      const double q1 = t.deaths0 / t.exposure0;
      out.emplace_back(q1, 1.0 - std::pow(1.0 - t.deaths14 / t.exposure14, 4));
    }
  }
  return out;
}

inline void stage_brass(Workspace& w) {
  const auto& c = w.cfg;
  const std::string fp = w.path(c.fbh, "fbh.csv");
  const bool have_fbh = !c.fbh.empty() || std::filesystem::exists(fp);
  Dataset d = load_dataset(w, have_fbh && c.family == "auto", true);
  if (d.sbh.empty()) throw SchemaError(w.path(c.sbh, "sbh.csv"), 0, "no records");
  const auto coef = parse_trussell(read_csv(c.coefficients));
  const auto lt = load_life_tables(c);
  Family fam;
  if (c.family == "auto") {
    const auto pairs = direct_child_pairs(d, c);
    if (pairs.empty()) throw StageFailure(kNumericalFailure, "no direct (1q0, 4q1) pairs to select a life table");
    fam = select_life_table(pairs, lt);
    w.result.messages.push_back(std::string("selected life table family ") + to_string(fam));
  } else {
    try {
      fam = parse_family(c.family);
    } catch (const std::invalid_argument& e) {
      throw SchemaError("config", 0, e.what());
    }
  }
  std::string out = csv_line({"survey_id", "family", "age_group", "x", "q_x", "years_before_survey", "reference_time",
                              "q5", "logit_q5", "variance", "discouraged"});
  for (int s = 0; s < static_cast<int>(d.surveys.labels.size()); ++s) {
    std::vector<SummaryBirthHistory> women;
    for (const auto& x : d.sbh)
      if (x.covariates.survey_id == s) women.push_back(x);
    if (women.empty()) continue;
    BrassDiagnostics diag;
    const auto est = brass_pipeline(women, coef, lt, fam, women.front().survey_year, nullptr, &diag);
    for (const auto& m : diag.messages) w.result.messages.push_back(d.surveys.labels[s] + ": " + m);
    const std::string body = emit_brass(est, fam);
    std::istringstream in(body);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) out += csv_escape(d.surveys.labels[s]) + "," + line + "\n";
  }
  w.write("brass.csv", out);
}

inline void stage_direct(Workspace& w) {
  const auto& c = w.cfg;
  Dataset d = load_dataset(w, true, false);
  std::vector<DirectEstimate> all;
  for (int s = 0; s < static_cast<int>(d.surveys.labels.size()); ++s) {
    std::vector<FullBirthHistory> women;
    for (const auto& x : d.fbh)
      if (x.covariates.survey_id == s) women.push_back(x);
    if (women.empty()) continue;
    for (const auto& p : periods_of(c)) {
      std::string why;
      if (auto e = direct_estimate(women, p, rules_of(c), &why))
        all.push_back(*e);
      else
        w.result.messages.push_back(d.surveys.labels[s] + " " + p.label() + ": " + why + "; omitted");
    }
  }
  w.write("direct.csv", emit_direct(all, d.surveys.labels));
}

inline void stage_combine(Workspace& w) {
  const auto& c = w.cfg;
  const auto periods = periods_of(c);
  const auto direct = parse_direct(read_csv((w.out / "direct.csv").string()));
  const CsvTable bt = read_csv((w.out / "brass.csv").string());
  std::vector<std::pair<std::string, IndirectEstimate>> brass;
  {
    const auto est = parse_brass(bt);
    for (std::size_t r = 0; r < est.size(); ++r) brass.emplace_back(bt.rows[r][bt.column("survey_id")], est[r]);
  }
  // HIV factors keyed by survey label; period factors average the yearly ones.
  std::map<std::string, std::map<int, double>> k;
  if (!c.hiv.empty()) {
    const CsvTable ht = read_csv(c.hiv);
    detail::require_header(ht, {"survey_id", "year", "factor"});
    for (std::size_t r = 0; r < ht.rows.size(); ++r)
      k[ht.rows[r][ht.column("survey_id")]][static_cast<int>(detail::parse_int(ht, r, ht.column("year")))] =
          detail::parse_double(ht, r, ht.column("factor"));
  }
  auto factor = [&](const std::string& survey, int y0, int y1) {
    auto it = k.find(survey);
    if (it == k.end()) return 1.0;
    double s = 0.0;
    int n = 0;
    for (int y = y0; y <= y1; ++y)
      if (auto f = it->second.find(y); f != it->second.end()) {
        s += f->second;
        ++n;
      }
    return n ? s / n : 1.0;
  };
  const HivMode mode = c.hiv_mode == "literal" ? HivMode::literal : HivMode::observed_scale;
  std::vector<std::vector<SourceEstimate>> parts(periods.size());
  std::uint64_t stream = 0;
  for (const auto& dr : direct) {
    ++stream;
    const auto pi = period_of(dr.est.period.start, periods);
    if (!pi) continue;
    double th = dr.est.logit_q5, v = dr.est.variance;
    const double kk = factor(dr.survey_id, dr.est.period.start, dr.est.period.end);
    if (!k.empty() && !dr.est.hiv_adjusted) {
      Rng rng = make_stream(c.seed, 0x484956, stream);
      const auto a = hiv_adjust(th, v, kk, c.hiv_draws, rng, mode);
      th = a.mean;
      v = a.variance;
    }
    parts[*pi].push_back({"direct:" + dr.survey_id, th, v});
  }
  for (const auto& [survey, e] : brass) {
    ++stream;
    if (e.discouraged && !c.include_15_19) continue;
    const auto pi = period_of(e.reference_time, periods);
    if (!pi || !(e.variance > 0.0)) continue;
    double th = e.logit_q5, v = e.variance;
    const int year = static_cast<int>(std::floor(e.reference_time));
    if (!k.empty()) {
      Rng rng = make_stream(c.seed, 0x484956, stream);
      const auto a = hiv_adjust(th, v, factor(survey, year, year), c.hiv_draws, rng, mode);
      th = a.mean;
      v = a.variance;
    }
    parts[*pi].push_back({"brass:" + survey + ":" + age_group_label(e.age_group), th, v});
  }
  std::vector<EstimateRow> rows;
  for (std::size_t p = 0; p < periods.size(); ++p)
    if (auto f = fuse(parts[p], periods[p])) rows.push_back(logit_row(periods[p].label(), "all", "direct_brass", f->theta, f->variance));
  w.write("combined.csv", emit_estimates(rows));
}

inline void stage_evaluate(Workspace& w) {
  const auto& c = w.cfg;
  if (c.models.empty()) throw SchemaError("config", 0, "evaluate needs [evaluate.models]");
  const auto periods = periods_of(c);
  std::map<std::string, std::vector<EstimateRow>> est;
  for (const auto& [name, path] : c.models) est[name] = parse_estimates(read_csv(path));
  const std::string ref = c.reference.empty() ? (w.out / "truth.json").string() : c.reference;

  MetricTable a, b;
  for (const auto& p : periods) {
    a.periods.push_back(p.label());
    b.periods.push_back(p.label());
  }
  for (const auto& [name, rows] : est) {
    a.models.push_back(name);
    b.models.push_back(name);
  }
  a.values.assign(periods.size(), std::vector<double>(a.models.size(), std::nan("")));
  b.values = a.values;

  if (ref.size() >= 5 && ref.substr(ref.size() - 5) == ".json") {
    // Simulation truth: absolute bias of the q5 point and 95% interval width.
    SimulationTruth truth = truth_from_json(nlohmann::json::parse(read_file(ref)));
    for (std::size_t p = 0; p < periods.size(); ++p) {
      const auto tp = static_cast<std::size_t>(truth.period_of_year(periods[p].start));
      const double q = truth.q5_in_period(tp);
      std::size_t m = 0;
      for (const auto& [name, rows] : est) {
        for (const auto& r : rows)
          if (r.period == periods[p].label()) {
            a.values[p][m] = std::abs(r.q5 - q);
            b.values[p][m] = r.upper - r.lower;
          }
        ++m;
      }
    }
    w.write("metrics_bias.csv", emit_metric_table(a, 100.0, 3));
    w.write("metrics_width.csv", emit_metric_table(b, 100.0, 3));
    return;
  }
  const auto holdout = parse_estimates(read_csv(ref));
  for (std::size_t p = 0; p < periods.size(); ++p) {
    std::size_t m = 0;
    for (const auto& [name, rows] : est) {
      std::vector<EvaluationCell> cells;
      std::vector<PareCell> pc;
      for (const auto& h : holdout) {
        if (h.period != periods[p].label()) continue;
        for (const auto& r : rows)
          if (r.period == h.period && r.district == h.district) {
            cells.push_back({r.estimate, r.variance, h.estimate, h.variance});
            pc.push_back({r.q5, h.q5, h.variance});
          }
      }
      if (!cells.empty()) {
        a.values[p][m] = weighted_mse(cells).mse;
        b.values[p][m] = pare(pc, c.literal_ninth, &w.result.messages);
      }
      ++m;
    }
  }
  w.write("metrics_mse.csv", emit_metric_table(a, 100.0, 3));
  w.write("metrics_pare.csv", emit_metric_table(b, 100.0, 3));
}

inline void stage_report(Workspace& w) {
  std::string md = "# Run report\n";
  for (const char* name : {"fit_estimates.csv", "combined.csv", "metrics_bias.csv", "metrics_width.csv",
                           "metrics_mse.csv", "metrics_pare.csv"}) {
    const auto p = w.out / name;
    if (!std::filesystem::exists(p)) continue;
    const CsvTable t = read_csv(p.string());
    md += std::string("\n## ") + name + "\n\n|";
    for (const auto& h : t.header) md += " " + h + " |";
    md += "\n|";
    for (std::size_t i = 0; i < t.header.size(); ++i) md += " --- |";
    md += "\n";
    for (const auto& r : t.rows) {
      md += "|";
      for (const auto& f : r) md += " " + f + " |";
      md += "\n";
    }
  }
  w.write("report.md", md);
}

inline std::string manifest_name(const std::string& stage) { return "manifest_" + stage + ".json"; }

/// Runs one stage into cfg.output and writes manifest_<stage>.json next to its
/// outputs. Errors become exit codes; messages carry the reason.
inline StageResult run_stage(const RunConfig& cfg) {
  Workspace w{cfg, cfg.output, {}};
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(w.out);
  try {
    if (cfg.stage == "simulate") stage_simulate(w);
    else if (cfg.stage == "fit") stage_fit(w);
    else if (cfg.stage == "brass") stage_brass(w);
    else if (cfg.stage == "direct") stage_direct(w);
    else if (cfg.stage == "combine") stage_combine(w);
    else if (cfg.stage == "evaluate") stage_evaluate(w);
    else if (cfg.stage == "report") stage_report(w);
    else throw SchemaError("config", 0, "unknown mode '" + cfg.stage + "'");
  } catch (const SchemaError& e) {
    w.result.exit_code = kSchemaError;
    w.result.messages.push_back(cfg.stage + ": " + e.what());
  } catch (const StageFailure& e) {
    w.result.exit_code = e.code();
    w.result.messages.push_back(cfg.stage + ": " + e.what());
  } catch (const NumericalError& e) {
    w.result.exit_code = kNumericalFailure;
    w.result.messages.push_back(cfg.stage + ": " + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  nlohmann::json m;
  const auto cj = to_json(cfg);
  m["config"] = cj;
  m["config_hash"] = fnv1a_hex(cj.dump());
  m["stage"] = cfg.stage;
  m["seed"] = cfg.seed;
  m["version"] = kVersion;
  m["exit_code"] = w.result.exit_code;
  nlohmann::json outs = nlohmann::json::object();
  for (const auto& f : w.result.outputs) outs[f] = fnv1a_hex(read_file((w.out / f).string()));
  m["outputs"] = outs;
  m["messages"] = w.result.messages;
  m["wall_clock_seconds"] = secs;
  write_file((w.out / manifest_name(cfg.stage)).string(), m.dump(2) + "\n");
  return w.result;
}

}  // namespace u5mr
