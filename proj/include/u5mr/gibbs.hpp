#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "u5mr/augmentation.hpp"
#include "u5mr/calendar.hpp"
#include "u5mr/core.hpp"
#include "u5mr/hmc.hpp"
#include "u5mr/numeric.hpp"
#include "u5mr/posterior.hpp"

namespace u5mr {

struct McmcConfig {
  HmcConfig hmc;
  Priors priors;
  AugmentationSettings augmentation;
  std::uint64_t seed = 1;
  int threads = 1;
  int init_iterations = 500;   // gradient steps toward the FBH-only mode
  int divergence_flag_run = 20;  // consecutive divergent transitions that flag a chain
};

struct ChainOutput {
  std::vector<std::string> fertility_names, hazard_names;
  std::vector<std::vector<double>> fertility_draws, hazard_draws;  // retained iterations
  std::vector<int> iterations;
  double fertility_acceptance = 0.0, hazard_acceptance = 0.0;
  double augmentation_acceptance = 1.0;
  double fertility_step_size = 0.0, hazard_step_size = 0.0;
  int fertility_divergent = 0, hazard_divergent = 0;
  bool divergence_flagged = false;
  std::size_t augmentation_groups = 0;
  std::vector<std::string> excluded;
  std::uint64_t seed = 0;
};

class InfeasibleRecord : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Plain gradient descent with backtracking on (beta, phi) with eta fixed.
inline void descend_to_mode(const Posterior& post, std::vector<double>& theta, int iterations) {
  const std::size_t n = theta.size();
  const std::size_t free = post.spec().has_precision() ? n - 1 : n;
  std::vector<double> g(n), trial(n), gt(n);
  double u = post.gradient(theta, g);
  double step = 1e-2;
  for (int it = 0; it < iterations; ++it) {
    double gg = 0.0;
    for (std::size_t i = 0; i < free; ++i) gg += g[i] * g[i];
    if (gg < 1e-16) break;
    bool moved = false;
    for (int bt = 0; bt < 40; ++bt) {
      trial = theta;
      for (std::size_t i = 0; i < free; ++i) trial[i] -= step * g[i];
      double ut;
      try {
        ut = post.gradient(trial, gt);
      } catch (const NumericalError&) {
        step *= 0.5;
        continue;
      }
      if (std::isfinite(ut) && ut <= u - 1e-4 * step * gg) {
        theta = trial;
        g = gt;
        u = ut;
        step *= 2.0;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
}

}  // namespace detail

/// Gibbs sampler alternating data augmentation of the SBH women with HMC
/// updates of the fertility and hazard models. With no SBH women the DA step is
/// skipped and the chain is an FBH-only fit.
inline ChainOutput run_mcmc(const std::vector<FullBirthHistory>& fbh, const std::vector<SummaryBirthHistory>& sbh,
                            const ModelSpec& fert_spec, const ModelSpec& haz_spec, const McmcConfig& cfg,
                            const HivFactors* hiv = nullptr) {
  const ObservationRules& rules = cfg.augmentation.rules;
  for (const auto& w : fbh) {
    const std::string why = check_record(w, fert_spec.ages, rules);
    if (!why.empty()) throw InfeasibleRecord("woman " + w.woman_id + ": " + why);
  }
  AugmentationSettings da_settings = cfg.augmentation;
  da_settings.ages = fert_spec.ages;
  DataAugmenter da(sbh, da_settings);

  ChainOutput out;
  out.seed = cfg.seed;
  out.excluded = da.excluded();
  out.augmentation_groups = da.group_count();
  const auto fert_cols = fert_spec.column_names();
  const auto haz_cols = haz_spec.column_names();
  out.fertility_names = fert_cols;
  out.hazard_names = haz_cols;
  if (fert_spec.has_precision()) out.fertility_names.push_back("eta_kappa");
  if (haz_spec.has_precision()) out.hazard_names.push_back("eta_kappa");

  CellBuilder fert_b(fert_spec, rules, hiv), haz_b(haz_spec, rules, hiv);
  for (const auto& w : fbh) {
    std::vector<int> years;
    for (const auto& c : w.children) {
      years.push_back(c.birth_year);
      haz_b.add_child(c.birth_year, c.death_year, w.survey_year, w.covariates);
    }
    fert_b.add_fertility(w.mother_age_at_survey, w.survey_year, w.covariates, years);
  }
  const BinomialCells fert_base = fert_b.cells(), haz_base = haz_b.cells();

  Posterior fert_post(fert_spec, fert_b.cells(), cfg.priors), haz_post(haz_spec, haz_b.cells(), cfg.priors);
  std::vector<double> theta_f(fert_post.dim(), 0.0), theta_h(haz_post.dim(), 0.0);
  detail::descend_to_mode(fert_post, theta_f, cfg.init_iterations);
  detail::descend_to_mode(haz_post, theta_h, cfg.init_iterations);

  auto rebuild = [&](CellBuilder& b, const BinomialCells& base, Response r) {
    b.clear_counts();
    const auto& women = da.women();
    const auto& recs = da.records();
    for (std::size_t i = 0; i < women.size(); ++i) {
      const auto& w = women[i];
      const auto& rec = recs[i];
      if (r == Response::fertility) {
        b.add_fertility(w.mother_age_at_survey, w.survey_year, w.covariates, rec.config.birth_years);
      } else {
        std::size_t k = 0;
        for (std::size_t j = 0; j < rec.config.birth_years.size(); ++j) {
          std::optional<int> td;
          if (rec.config.death_indicators[j]) td = rec.death_years[k++];
          b.add_child(rec.config.birth_years[j], td, w.survey_year, w.covariates);
        }
      }
    }
    auto& c = b.cells();
    for (std::size_t i = 0; i < base.size(); ++i) {
      c.y[i] += base.y[i];
      c.n[i] += base.n[i];
    }
  };

  const bool augment = da.size() > 0;
  if (augment) {
    ModelSchedule f(fert_spec, theta_f, false, hiv), q(haz_spec, theta_h, false, hiv);
    da.initialize(f, q, cfg.seed);
  }

  HmcKernel kf(cfg.hmc, theta_f.size()), kh(cfg.hmc, theta_h.size());
  Rng rng_f = make_stream(cfg.seed, 0x484D43, 1), rng_h = make_stream(cfg.seed, 0x484D43, 2);
  const int total = cfg.hmc.warmup_iterations + cfg.hmc.chain_length;
  std::size_t mh_prop = 0, mh_acc = 0;
  int run = 0;
  for (int it = 0; it < total; ++it) {
    if (augment) {
      ModelSchedule f(fert_spec, theta_f, false, hiv), q(haz_spec, theta_h, false, hiv);
      da.sweep(f, q, cfg.seed, static_cast<std::uint64_t>(it) + 1, cfg.threads);
      if (it >= cfg.hmc.warmup_iterations) {
        mh_prop += da.last_stats().mh_proposals;
        mh_acc += da.last_stats().mh_accepts;
      }
      rebuild(fert_b, fert_base, Response::fertility);
      rebuild(haz_b, haz_base, Response::hazard);
    }
    const auto sf = kf.step(theta_f, fert_post, rng_f);
    const auto sh = kh.step(theta_h, haz_post, rng_h);
    run = (sf.divergent || sh.divergent) ? run + 1 : 0;
    if (run >= cfg.divergence_flag_run) out.divergence_flagged = true;
    const int post = it - cfg.hmc.warmup_iterations;
    if (post >= 0 && post % cfg.hmc.thin == 0) {
      out.fertility_draws.push_back(theta_f);
      out.hazard_draws.push_back(theta_h);
      out.iterations.push_back(it);
    }
  }
  out.fertility_acceptance = kf.post_warmup_acceptance();
  out.hazard_acceptance = kh.post_warmup_acceptance();
  out.fertility_step_size = kf.step_size();
  out.hazard_step_size = kh.step_size();
  out.fertility_divergent = kf.divergent();
  out.hazard_divergent = kh.divergent();
  if (mh_prop > 0) out.augmentation_acceptance = static_cast<double>(mh_acc) / static_cast<double>(mh_prop);
  return out;
}

}  // namespace u5mr
