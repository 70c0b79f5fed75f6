// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "u5mr/brass.hpp"
#include "u5mr/direct.hpp"
#include "u5mr/hmc.hpp"
#include "u5mr/pipeline.hpp"

using namespace u5mr;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::cout << "criterion " << id << " " << (ok ? "PASS" : "FAIL") << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v, int digits = 4) { return format_fixed(v, digits); }

fs::path work_dir(const std::string& name) {
  const auto p = fs::current_path() / "acceptance_work" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig base_config(const fs::path& out) {
  RunConfig c;
  c.output = out.string();
  c.coefficients = U5MR_DATA_DIR "/trussell_coefficients.csv";
  c.life_tables = U5MR_DATA_DIR "/life_tables.csv";
  return c;
}

// ---------------------------------------------------------------------------
// 1 and 2: full simulation study.

void simulation_study() {
  const auto dir = work_dir("simulation");
  RunConfig c = base_config(dir);
  c.stage = "simulate";
  if (run_stage(c).exit_code != kOk) {
    report(1, false, "simulate stage failed");
    report(2, false, "simulate stage failed");
    return;
  }
  const auto sbh_dir = dir / "fbh_sbh", fbh_dir = dir / "fbh_only";
  fs::create_directories(sbh_dir);
  fs::create_directories(fbh_dir);
  RunConfig both = c, only = c;
  both.stage = only.stage = "fit";
  both.fbh = only.fbh = (dir / "fbh.csv").string();
  both.sbh = only.sbh = (dir / "sbh.csv").string();
  both.output = sbh_dir.string();
  only.output = fbh_dir.string();
  only.fbh_only = true;

  const auto t0 = std::chrono::steady_clock::now();
  const auto r_only = run_stage(only);
  const auto r_both = run_stage(both);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  for (const auto& m : r_both.messages) std::cout << "  fbh+sbh fit: " << m << "\n";
  if (r_only.exit_code != kOk || r_both.exit_code != kOk) {
    report(1, false, "fit stage exit codes " + std::to_string(r_only.exit_code) + "/" + std::to_string(r_both.exit_code));
    report(2, false, "fit stage failed");
    return;
  }

  const auto truth = truth_from_json(nlohmann::json::parse(read_file((dir / "truth.json").string())));
  const auto est_only = parse_estimates(read_csv((fbh_dir / "fit_estimates.csv").string()));
  const auto est_both = parse_estimates(read_csv((sbh_dir / "fit_estimates.csv").string()));
  int better = 0;
  double ratio = std::nan("");
  std::ostringstream rows;
  for (std::size_t p = 0; p < est_both.size() && p < est_only.size(); ++p) {
    const double q = truth.q5_in_period(p);
    const double b_both = std::abs(est_both[p].q5 - q), b_only = std::abs(est_only[p].q5 - q);
    better += b_both <= b_only;
    const double w_both = est_both[p].upper - est_both[p].lower, w_only = est_only[p].upper - est_only[p].lower;
    rows << "  " << est_both[p].period << ": truth " << fmt(q) << ", bias fbh " << fmt(b_only) << " fbh+sbh "
         << fmt(b_both) << ", width fbh " << fmt(w_only) << " fbh+sbh " << fmt(w_both) << "\n";
    if (est_both[p].period == "2005-2009") ratio = w_both / w_only;
  }
  std::cout << rows.str();
  const bool ok1 = ratio < 1.0 && std::abs(ratio - 0.62) <= 0.15 && better >= 5 && minutes < 30.0;
  report(1, ok1,
         "2005-2009 q5 interval width ratio " + fmt(ratio, 3) + " (target 0.62 +/- 0.15); FBH+SBH bias <= FBH bias in " +
             std::to_string(better) + "/7 periods (need 5); both fits " + fmt(minutes, 1) + " min (< 30)");

  const auto fert = read_csv((sbh_dir / "fertility.csv").string());
  int within = 0, covered = 0;
  std::ostringstream frows;
  for (std::size_t b = 0; b < fert.rows.size(); ++b) {
    const double med = std::stod(fert.rows[b][fert.column("median")]);
    const double lo = std::stod(fert.rows[b][fert.column("lower")]);
    const double hi = std::stod(fert.rows[b][fert.column("upper")]);
    const double t = truth.fertility[b];
    within += std::abs(med - t) <= 0.01;
    covered += lo <= t && t <= hi;
    frows << "  " << fert.rows[b][0] << ": truth " << fmt(t, 3) << " median " << fmt(med) << " [" << fmt(lo) << ", "
          << fmt(hi) << "]\n";
  }
  std::cout << frows.str();
  report(2, within == static_cast<int>(fert.rows.size()) && covered >= 4 && fert.rows.size() == 5,
         std::to_string(within) + "/5 band medians within 0.01 of truth; 95% intervals cover " +
             std::to_string(covered) + "/5 (need 4)");
}

// ---------------------------------------------------------------------------
// 3: augmentation sampler.

void augmentation() {
  Rng rng(303);
  double worst_exact = 0.0, worst_mh = 0.0;
  const int n = 100000;
  for (const auto& w : oracle::toy_women()) {
    const auto truth = oracle::brute_force(w, oracle::toy_fertility, oracle::toy_hazard);
    if (truth.size() > 200) continue;
    WomanTables tab(WomanGroupKey::of(w), AugmentationSettings{}, oracle::toy_fertility, oracle::toy_hazard);
    EnumeratedConfigurations e(tab);
    const auto cdf = e.cdf();
    std::map<Configuration, double> exact, mh;
    Configuration cur = truth.begin()->first;
    for (int i = 0; i < n; ++i) {
      exact[e.at(sample_cumulative(std::span<const double>(cdf), rng))] += 1.0 / n;
      cur = mh_step(cur, tab, rng);
      mh[cur] += 1.0 / n;
    }
    worst_exact = std::max(worst_exact, oracle::total_variation(exact, truth));
    worst_mh = std::max(worst_mh, oracle::total_variation(mh, truth));
  }

  // Cohort with a high-fertility, high-mortality schedule; every group
  // forced through the independence chain.
  SimulationConfig sc;
  sc.n_women = 5000;
  sc.n_fbh = 0;
  sc.seed = 31;
  const auto co = simulate_cohort(sc);
  TruthFertility f{&co.truth};
  TruthHazard q{&co.truth};
  AugmentationSettings s;
  s.enumeration_cap = 0.0;
  DataAugmenter da(co.sbh, s);
  da.initialize(f, q, 5);
  SweepStats total;
  for (int it = 1; it <= 20; ++it) {
    da.sweep(f, q, 5, static_cast<std::uint64_t>(it));
    total += da.last_stats();
  }
  const double acc = total.mh_acceptance();
  report(3, worst_exact < 0.02 && worst_mh < 0.02 && acc > 0.6,
         "max TV exact " + fmt(worst_exact) + ", MH " + fmt(worst_mh) + " (< 0.02 at 1e5 draws); MH acceptance " +
             fmt(acc, 3) + " (> 0.6)");
}

// ---------------------------------------------------------------------------
// 4: gradients.

void gradients() {
  Rng rng(404);
  const std::vector<ModelSpec> specs{simulation_fertility_spec(), simulation_hazard_spec(PeriodAxis::regular(1975, 5, 7)),
                                     data_fertility_spec(PeriodAxis::regular(1964, 5, 11)),
                                     data_hazard_spec(PeriodAxis::yearly(1975, 2009), 9)};
  double worst = 0.0;
  int states = 0;
  for (const auto& spec : specs)
    for (bool k_one : {true, false}) {
      const auto cells = oracle::random_cells(spec, rng, k_one, 120);
      Posterior post(spec, cells);
      std::normal_distribution<double> nd(-1.0, 1.0);
      for (int s = 0; s < 100; ++s) {
        std::vector<double> th(post.dim());
        for (auto& v : th) v = nd(rng);
        if (spec.has_precision()) th.back() = std::uniform_real_distribution<double>(-1.0, 4.0)(rng);
        worst = std::max(worst, oracle::gradient_error(post, th));
        ++states;
      }
    }
  report(4, worst < 1e-6,
         "max relative gradient error " + format_double(worst) + " over " + std::to_string(states) +
             " states (fertility and hazard models, k = 1 and k < 1; < 1e-6)");
}

// ---------------------------------------------------------------------------
// 5: RW2 and PC prior.

void priors() {
  double null_norm = 0.0, gv_err = 0.0;
  bool rank_ok = true;
  for (int n : {3, 7, 11, 35, 60}) {
    const auto p = build_rw2_precision(n);
    Eigen::VectorXd one = Eigen::VectorXd::Ones(n), lin(n);
    for (int i = 0; i < n; ++i) lin(i) = i;
    null_norm = std::max({null_norm, (p.K * one).norm(), (p.K * lin).norm() / lin.norm()});
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.K);
    int pos = 0;
    for (int i = 0; i < n; ++i) pos += es.eigenvalues()(i) > 1e-9 * es.eigenvalues()(n - 1);
    rank_ok = rank_ok && pos == n - 2;
    gv_err = std::max(gv_err, std::abs(generalized_variance(p.K, n - 2) - 1.0));
  }
  const auto [mass, tail] = oracle::pc_prior_quadrature(0.01, 0.5);
  report(5, null_norm < 1e-9 && rank_ok && gv_err < 1e-8 && std::abs(mass - 1.0) < 1e-6 && std::abs(tail - 0.01) < 1e-6,
         "null-space residual " + format_double(null_norm) + ", rank n-2 " + (rank_ok ? "yes" : "no") +
             ", generalized variance error " + format_double(gv_err) + "; PC prior mass " + fmt(mass, 9) +
             ", P(sigma > 0.5) " + fmt(tail, 9));
}

// ---------------------------------------------------------------------------
// 6: Brass.

void brass() {
  const auto lt = parse_life_tables(read_csv(U5MR_DATA_DIR "/life_tables.csv"));
  const auto coef = parse_trussell(read_csv(U5MR_DATA_DIR "/trussell_coefficients.csv"));

  const auto [cohort, q5] = oracle::life_table_cohort(lt, Family::north, 12, 40000, 606);
  bool identity = true;
  const auto id = TrussellCoefficients::constant({1.0, 0.0, 0.0}, {0.0, 0.0, 0.0});
  const auto tab = tabulate(cohort);
  for (int g = 0; g < kAgeGroups; ++g) {
    const auto qx = brass_qx(tab, id.at(Family::north, g), g);
    identity = identity && qx && *qx == *tab.d(g);
  }

  double rel = std::nan("");
  for (const auto& e : brass_pipeline(cohort, coef, lt, Family::north, 2010.0))
    if (e.age_group == 3) rel = std::abs(e.q5 - q5) / q5;

  std::vector<SummaryBirthHistory> fifty(cohort.begin(), cohort.begin() + 50);
  bool bits = true;
  const auto full = tabulate(fifty);
  for (int g = 1; g < kAgeGroups; ++g) {
    const auto fast = jackknife_replicates(fifty, full, coef, lt, Family::north, g);
    const auto slow = oracle::brute_force_jackknife(fifty, coef, lt, Family::north, g);
    bits = bits && fast == slow && jackknife_variance(fast) == jackknife_variance(slow);
  }
  report(6, identity && rel < 0.10 && bits,
         std::string("identity coefficients reproduce d_i: ") + (identity ? "yes" : "no") +
             "; 30-34 q5 relative error " + fmt(rel) + " (< 0.10, truth " + fmt(q5) +
             "); incremental jackknife bit-matches leave-one-out on n = 50: " + (bits ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// 7: fusion.

void fusion() {
  const auto two = fuse({{"a", -2.2, 0.05}, {"b", -1.8, 0.05}}, {});
  const bool exact = two && two->theta == -2.0 && two->variance == 0.025;
  Rng rng(707);
  std::uniform_real_distribution<double> th(-4.0, 0.0), lv(-7.0, 1.0);
  std::uniform_int_distribution<int> k(1, 8);
  int bad = 0;
  for (int t = 0; t < 10000; ++t) {
    std::vector<SourceEstimate> parts;
    double vmin = 1e300;
    for (int i = 0, n = k(rng); i < n; ++i) {
      parts.push_back({"s", th(rng), std::exp(lv(rng))});
      vmin = std::min(vmin, parts.back().variance);
    }
    bad += fuse(parts, {})->variance > vmin;
  }
  report(7, exact && bad == 0,
         std::string("equal-variance pair gives mean and half variance exactly: ") + (exact ? "yes" : "no") +
             "; fused variance above smallest component in " + std::to_string(bad) + "/10000 trials");
}

// ---------------------------------------------------------------------------
// 8: HMC.

struct Gaussian {
  std::vector<double> sd;
  double c = 0.0;
  double gradient(std::span<const double> x, std::span<double> g) const {
    double u = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      u += x[i] * x[i] / (2.0 * sd[i] * sd[i]);
      g[i] = x[i] / (sd[i] * sd[i]);
    }
    u -= c * x[0] * x[1];
    g[0] -= c * x[1];
    g[1] -= c * x[0];
    return u;
  }
};

void hmc() {
  // Moments: independent and correlated targets.
  Gaussian t{{1.0, 2.0, 0.5, 1.0}, 0.3};
  // Covariance of the first pair: inverse of [[1, -0.3], [-0.3, 1/4]].
  const double det = 1.0 * 0.25 - 0.09;
  const double c00 = 0.25 / det, c11 = 1.0 / det, c01 = 0.3 / det;
  HmcConfig cfg;
  cfg.step_size = 0.2;
  cfg.leapfrog_steps = 15;
  cfg.warmup_iterations = 1000;
  HmcKernel k(cfg, 4);
  Rng rng(808);
  std::vector<double> x(4, 0.5);
  for (int i = 0; i < cfg.warmup_iterations; ++i) k.step(x, t, rng);
  const int n = 40000;
  std::vector<double> s(4, 0.0), ss(4, 0.0);
  double s01 = 0.0;
  for (int i = 0; i < n; ++i) {
    k.step(x, t, rng);
    for (std::size_t j = 0; j < 4; ++j) {
      s[j] += x[j];
      ss[j] += x[j] * x[j];
    }
    s01 += x[0] * x[1];
  }
  const std::vector<double> var{c00, c11, 0.25, 1.0};
  double mean_z = 0.0, var_err = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    const double m = s[j] / n;
    mean_z = std::max(mean_z, std::abs(m) / std::sqrt(var[j] * 4.0 / n));  // allow ESS = n/4
    var_err = std::max(var_err, std::abs(ss[j] / n - m * m - var[j]) / var[j]);
  }
  const double cov_err = std::abs(s01 / n - c01) / std::sqrt(c00 * c11);
  const bool moments = mean_z < 4.0 && var_err < 0.05 && cov_err < 0.05;

  // Reversibility.
  Gaussian r{{1.0, 2.0, 0.5}, 0.2};
  std::vector<double> q{0.3, -1.2, 0.8}, p{1.0, 0.4, -0.7}, g(3), one(3, 1.0);
  r.gradient(q, g);
  auto fwd = leapfrog(r, q, p, g, 0.05, 60, one);
  for (auto& v : fwd.p) v = -v;
  auto back = leapfrog(r, fwd.q, fwd.p, fwd.grad, 0.05, 60, one);
  double rev = 0.0;
  for (std::size_t i = 0; i < 3; ++i) rev = std::max({rev, std::abs(back.q[i] - q[i]), std::abs(back.p[i] + p[i])});

  // Energy error under step halving at fixed integration time.
  auto h = [&](const std::vector<double>& qq, const std::vector<double>& pp) {
    std::vector<double> gg(3);
    return r.gradient(qq, gg) + kinetic_energy(pp, one);
  };
  std::vector<double> err;
  for (double eps : {0.1, 0.05, 0.025, 0.0125}) {
    std::vector<double> gg(3);
    r.gradient(q, gg);
    auto tr = leapfrog(r, q, p, gg, eps, static_cast<int>(std::lround(1.0 / eps)), one);
    err.push_back(std::abs(h(tr.q, tr.p) - h(q, p)));
  }
  bool quad = true;
  std::string ratios;
  for (std::size_t i = 1; i < err.size(); ++i) {
    const double ratio = err[i - 1] / err[i];
    quad = quad && std::abs(ratio - 4.0) < 0.5;
    ratios += (i > 1 ? ", " : "") + fmt(ratio, 2);
  }
  report(8, moments && rev < 1e-10 && quad,
         "max |mean| z " + fmt(mean_z, 2) + " (< 4), max variance rel. error " + fmt(var_err, 3) +
             ", covariance error " + fmt(cov_err, 3) + " (< 0.05); reversibility " + format_double(rev) +
             " (< 1e-10); energy error ratios under halving " + ratios + " (4 +/- 0.5)");
}

// ---------------------------------------------------------------------------
// 9: manifest reruns.

void determinism() {
  const auto dir = work_dir("determinism");
  RunConfig c = base_config(dir);
  c.n_women = 600;
  c.n_fbh = 200;
  c.warmup = 40;
  c.chain_length = 60;
  c.thin = 2;
  c.hiv_draws = 2000;
  c.models = {{"bayes", (dir / "fit_estimates.csv").string()}, {"direct_brass", (dir / "combined.csv").string()}};
  const std::vector<std::string> stages{"simulate", "fit", "brass", "direct", "combine", "evaluate", "report"};
  for (const auto& s : stages) {
    c.stage = s;
    if (run_stage(c).exit_code != kOk) {
      report(9, false, "stage " + s + " failed");
      return;
    }
  }
  std::map<std::string, std::string> before;
  for (const auto& e : fs::directory_iterator(dir)) before[e.path().filename().string()] = read_file(e.path().string());
  auto strip = [](const std::string& text) {
    auto j = nlohmann::json::parse(text);
    j.erase("wall_clock_seconds");
    return j.dump();
  };
  for (const auto& s : stages) run_stage(load_config((dir / manifest_name(s)).string()));
  int same = 0, differ = 0;
  std::string which;
  for (const auto& [name, bytes] : before) {
    const std::string now = read_file((dir / name).string());
    const bool manifest = name.rfind("manifest_", 0) == 0;
    if (manifest ? strip(now) == strip(bytes) : now == bytes)
      ++same;
    else {
      ++differ;
      which += " " + name;
    }
  }
  report(9, differ == 0,
         std::to_string(same) + " artifacts byte-identical after rerunning all " + std::to_string(stages.size()) +
             " stages from their manifests (manifests compared without wall clock)" +
             (differ ? "; differing:" + which : ""));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int id) { return only.empty() || only.count(id); };
  if (want(1) || want(2)) simulation_study();
  if (want(3)) augmentation();
  if (want(4)) gradients();
  if (want(5)) priors();
  if (want(6)) brass();
  if (want(7)) fusion();
  if (want(8)) hmc();
  if (want(9)) determinism();
  return failures == 0 ? 0 : 1;
}
