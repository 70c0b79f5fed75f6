#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "u5mr/brass.hpp"
#include "u5mr/calendar.hpp"
#include "u5mr/core.hpp"
#include "u5mr/direct.hpp"
#include "u5mr/evaluate.hpp"
#include "u5mr/gibbs.hpp"
#include "u5mr/posterior.hpp"
#include "u5mr/simulator.hpp"

namespace u5mr {

/// Input that violates a file schema. `line` is 1-based (0 when the problem is
/// not tied to a line).
class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::string file, std::size_t line, const std::string& msg)
      : std::runtime_error(file + (line ? ":" + std::to_string(line) : std::string()) + ": " + msg),
        file_(std::move(file)),
        line_(line),
        msg_(msg) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }
  const std::string& message() const { return msg_; }

 private:
  std::string file_;
  std::size_t line_;
  std::string msg_;
};

// ---------------------------------------------------------------------------
// Formatting and CSV primitives.

/// Shortest decimal form that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_fixed(double v, int digits) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, r.ptr);
}

struct CsvTable {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // source line of each row

  std::size_t column(const std::string& c) const {
    auto it = std::find(header.begin(), header.end(), c);
    if (it == header.end()) throw SchemaError(name, 1, "missing column '" + c + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline CsvTable parse_csv(const std::string& text, const std::string& name) {
  CsvTable t;
  t.name = name;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (n == 1) {
      t.header = split_csv_line(line);
      continue;
    }
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != t.header.size())
      throw SchemaError(name, n, "expected " + std::to_string(t.header.size()) + " fields, found " +
                                     std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(n);
  }
  if (n == 0) throw SchemaError(name, 0, "empty file");
  return t;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError(path, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

inline CsvTable read_csv(const std::string& path) { return parse_csv(read_file(path), path); }

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::string csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(fields[i]);
  }
  return out + "\n";
}

namespace detail {

inline long long parse_int(const CsvTable& t, std::size_t r, std::size_t c) {
  const std::string& s = t.rows[r][c];
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw SchemaError(t.name, t.lines[r], "column '" + t.header[c] + "' expects an integer, got '" + s + "'");
  return v;
}

inline std::optional<int> parse_opt_int(const CsvTable& t, std::size_t r, std::size_t c) {
  if (t.rows[r][c].empty()) return std::nullopt;
  return static_cast<int>(parse_int(t, r, c));
}

inline double parse_double(const CsvTable& t, std::size_t r, std::size_t c) {
  const std::string& s = t.rows[r][c];
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw SchemaError(t.name, t.lines[r], "column '" + t.header[c] + "' expects a number, got '" + s + "'");
  return v;
}

inline std::string opt_to_string(const std::optional<int>& v) { return v ? std::to_string(*v) : std::string(); }

inline void require_header(const CsvTable& t, const std::vector<std::string>& expected) {
  for (const auto& c : expected) (void)t.column(c);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// FBH and SBH files.

inline const std::vector<std::string> kFbhColumns{"woman_id",   "survey_id",   "cluster_id", "weight",     "mother_age",
                                                  "survey_year", "survey_month", "child_index", "birth_month", "birth_year",
                                                  "death_month", "death_year",   "district",   "strata"};
inline const std::vector<std::string> kSbhColumns{"woman_id", "survey_id", "mother_age", "survey_year",
                                                  "ceb",      "cd",        "district",   "strata"};

/// One FBH line: a child, or a childless woman (child_index 0, no birth).
struct FbhRow {
  std::string woman_id, survey_id;
  int cluster_id = 0;
  double weight = 1.0;
  int mother_age = 0, survey_year = 0;
  std::optional<int> survey_month;
  int child_index = 0;
  std::optional<int> birth_month, birth_year, death_month, death_year;
  std::string district, strata;
};

struct SbhRow {
  std::string woman_id, survey_id;
  int mother_age = 0, survey_year = 0;
  int ceb = 0, cd = 0;
  std::string district, strata;
};

inline std::vector<FbhRow> parse_fbh(const CsvTable& t) {
  using namespace detail;
  require_header(t, kFbhColumns);
  std::vector<std::size_t> c;
  for (const auto& name : kFbhColumns) c.push_back(t.column(name));
  std::vector<FbhRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    FbhRow x;
    x.woman_id = f[c[0]];
    x.survey_id = f[c[1]];
    x.cluster_id = static_cast<int>(parse_int(t, r, c[2]));
    x.weight = parse_double(t, r, c[3]);
    x.mother_age = static_cast<int>(parse_int(t, r, c[4]));
    x.survey_year = static_cast<int>(parse_int(t, r, c[5]));
    x.survey_month = parse_opt_int(t, r, c[6]);
    x.child_index = static_cast<int>(parse_int(t, r, c[7]));
    x.birth_month = parse_opt_int(t, r, c[8]);
    x.birth_year = parse_opt_int(t, r, c[9]);
    x.death_month = parse_opt_int(t, r, c[10]);
    x.death_year = parse_opt_int(t, r, c[11]);
    x.district = f[c[12]];
    x.strata = f[c[13]];
    const auto line = t.lines[r];
    if (x.woman_id.empty()) throw SchemaError(t.name, line, "empty woman_id");
    if (!(x.weight > 0.0)) throw SchemaError(t.name, line, "weight must be positive");
    if (x.mother_age < 0) throw SchemaError(t.name, line, "negative mother_age");
    if (x.child_index < 0) throw SchemaError(t.name, line, "negative child_index");
    if (x.child_index == 0 && (x.birth_year || x.death_year))
      throw SchemaError(t.name, line, "child_index 0 marks a childless woman and takes no birth or death");
    if (x.child_index > 0 && !x.birth_year) throw SchemaError(t.name, line, "child without birth_year");
    if (x.death_month && !x.death_year) throw SchemaError(t.name, line, "death_month without death_year");
    for (auto m : {x.survey_month, x.birth_month, x.death_month})
      if (m && (*m < 1 || *m > 12)) throw SchemaError(t.name, line, "month outside 1..12");
    if (x.birth_year && x.death_year && *x.death_year < *x.birth_year)
      throw SchemaError(t.name, line, "death_year before birth_year");
    if (x.strata != "urban" && x.strata != "rural") throw SchemaError(t.name, line, "strata must be urban or rural");
    out.push_back(std::move(x));
  }
  if (out.empty()) throw SchemaError(t.name, 0, "no records");
  return out;
}

inline std::vector<SbhRow> parse_sbh(const CsvTable& t) {
  using namespace detail;
  require_header(t, kSbhColumns);
  std::vector<std::size_t> c;
  for (const auto& name : kSbhColumns) c.push_back(t.column(name));
  std::vector<SbhRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    SbhRow x;
    x.woman_id = f[c[0]];
    x.survey_id = f[c[1]];
    x.mother_age = static_cast<int>(parse_int(t, r, c[2]));
    x.survey_year = static_cast<int>(parse_int(t, r, c[3]));
    x.ceb = static_cast<int>(parse_int(t, r, c[4]));
    x.cd = static_cast<int>(parse_int(t, r, c[5]));
    x.district = f[c[6]];
    x.strata = f[c[7]];
    const auto line = t.lines[r];
    if (x.woman_id.empty()) throw SchemaError(t.name, line, "empty woman_id");
    if (x.ceb < 0 || x.cd < 0) throw SchemaError(t.name, line, "negative ceb or cd");
    if (x.cd > x.ceb) throw SchemaError(t.name, line, "children dead (cd) exceeds children ever born (ceb)");
    if (x.strata != "urban" && x.strata != "rural") throw SchemaError(t.name, line, "strata must be urban or rural");
    out.push_back(std::move(x));
  }
  if (out.empty()) throw SchemaError(t.name, 0, "no records");
  return out;
}

inline std::string emit_fbh(const std::vector<FbhRow>& rows) {
  using detail::opt_to_string;
  std::string out = csv_line(kFbhColumns);
  for (const auto& x : rows)
    out += csv_line({x.woman_id, x.survey_id, std::to_string(x.cluster_id), format_double(x.weight),
                     std::to_string(x.mother_age), std::to_string(x.survey_year), opt_to_string(x.survey_month),
                     std::to_string(x.child_index), opt_to_string(x.birth_month), opt_to_string(x.birth_year),
                     opt_to_string(x.death_month), opt_to_string(x.death_year), x.district, x.strata});
  return out;
}

inline std::string emit_sbh(const std::vector<SbhRow>& rows) {
  std::string out = csv_line(kSbhColumns);
  for (const auto& x : rows)
    out += csv_line({x.woman_id, x.survey_id, std::to_string(x.mother_age), std::to_string(x.survey_year),
                     std::to_string(x.ceb), std::to_string(x.cd), x.district, x.strata});
  return out;
}

/// Survey and district labels mapped to dense indices in order of first
/// appearance (FBH rows first, then SBH rows).
struct LabelRegistry {
  std::vector<std::string> labels;
  std::map<std::string, int> index;

  int id(const std::string& s) {
    auto [it, fresh] = index.try_emplace(s, static_cast<int>(labels.size()));
    if (fresh) labels.push_back(s);
    return it->second;
  }
  int find(const std::string& s) const {
    auto it = index.find(s);
    return it == index.end() ? -1 : it->second;
  }
};

struct Dataset {
  std::vector<FullBirthHistory> fbh;
  std::vector<SummaryBirthHistory> sbh;
  LabelRegistry surveys, districts;
  std::vector<std::string> sbh_surveys;  // labels of surveys that carry SBH records
};

/// Builds records on the discrete grid. In whole-years mode birth and death
/// years are grid years already; in survey-months mode they are calendar
/// dates aligned to the survey-anchored grid.
inline Dataset build_dataset(const std::vector<FbhRow>& fbh_rows, const std::vector<SbhRow>& sbh_rows,
                             const ObservationRules& rules, const std::string& fbh_name = "fbh",
                             LabelRegistry surveys = {}, LabelRegistry districts = {}) {
  Dataset d;
  d.surveys = std::move(surveys);
  d.districts = std::move(districts);
  std::map<std::pair<std::string, std::string>, std::size_t> woman_index;
  std::size_t line = 1;
  for (const auto& r : fbh_rows) {
    ++line;
    const auto key = std::make_pair(r.survey_id, r.woman_id);
    auto it = woman_index.find(key);
    if (it == woman_index.end()) {
      FullBirthHistory w;
      w.woman_id = r.woman_id;
      w.cluster = r.cluster_id;
      w.weight = r.weight;
      w.mother_age_at_survey = r.mother_age;
      w.survey_year = r.survey_year;
      w.covariates = CovariateProfile{d.districts.id(r.district), parse_strata(r.strata), d.surveys.id(r.survey_id), false};
      it = woman_index.emplace(key, d.fbh.size()).first;
      d.fbh.push_back(std::move(w));
    }
    auto& w = d.fbh[it->second];
    if (w.mother_age_at_survey != r.mother_age || w.survey_year != r.survey_year || w.cluster != r.cluster_id)
      throw SchemaError(fbh_name, line, "woman " + r.woman_id + " has inconsistent mother-level fields");
    if (r.child_index == 0) continue;
    Child c;
    if (rules.mode == CalendarMode::survey_months) {
      SurveyCalendar cal{r.survey_month.value_or(6), r.survey_year};
      try {
        c = discretize_child(cal, r.birth_month, *r.birth_year, r.death_month, r.death_year);
      } catch (const std::invalid_argument& e) {
        throw SchemaError(fbh_name, line, e.what());
      }
    } else {
      c.birth_year = *r.birth_year;
      c.death_year = r.death_year;
    }
    w.children.push_back(c);
  }
  for (auto& w : d.fbh)
    std::sort(w.children.begin(), w.children.end(), [](const Child& a, const Child& b) { return a.birth_year < b.birth_year; });
  std::map<std::string, bool> sbh_survey_seen;
  for (const auto& r : sbh_rows) {
    SummaryBirthHistory s;
    s.woman_id = r.woman_id;
    s.mother_age_at_survey = r.mother_age;
    s.survey_year = r.survey_year;
    s.births = r.ceb;
    s.deaths = r.cd;
    s.covariates = CovariateProfile{d.districts.id(r.district), parse_strata(r.strata), d.surveys.id(r.survey_id), true};
    if (!sbh_survey_seen[r.survey_id]) {
      sbh_survey_seen[r.survey_id] = true;
      d.sbh_surveys.push_back(r.survey_id);
    }
    d.sbh.push_back(std::move(s));
  }
  return d;
}

/// Rows for simulated cohorts (whole-years grid, blank months).
inline std::vector<FbhRow> fbh_rows_of(const std::vector<FullBirthHistory>& women, const std::vector<std::string>& surveys,
                                       const std::vector<std::string>& districts) {
  std::vector<FbhRow> out;
  for (const auto& w : women) {
    FbhRow base;
    base.woman_id = w.woman_id;
    base.survey_id = surveys.at(static_cast<std::size_t>(w.covariates.survey_id));
    base.cluster_id = w.cluster;
    base.weight = w.weight;
    base.mother_age = w.mother_age_at_survey;
    base.survey_year = w.survey_year;
    base.district = districts.at(static_cast<std::size_t>(w.covariates.district));
    base.strata = to_string(w.covariates.strata);
    if (w.children.empty()) {
      out.push_back(base);
      continue;
    }
    int idx = 0;
    for (const auto& c : w.children) {
      FbhRow r = base;
      r.child_index = ++idx;
      r.birth_year = c.birth_year;
      r.death_year = c.death_year;
      out.push_back(r);
    }
  }
  return out;
}

inline std::vector<SbhRow> sbh_rows_of(const std::vector<SummaryBirthHistory>& women,
                                       const std::vector<std::string>& surveys,
                                       const std::vector<std::string>& districts) {
  std::vector<SbhRow> out;
  for (const auto& w : women)
    out.push_back(SbhRow{w.woman_id, surveys.at(static_cast<std::size_t>(w.covariates.survey_id)), w.mother_age_at_survey,
                         w.survey_year, w.births, w.deaths, districts.at(static_cast<std::size_t>(w.covariates.district)),
                         to_string(w.covariates.strata)});
  return out;
}

// ---------------------------------------------------------------------------
// Reference data.

inline TrussellCoefficients parse_trussell(const CsvTable& t) {
  using namespace detail;
  const std::vector<std::string> cols{"family", "age_group", "a1", "a2", "a3", "b1", "b2", "b3"};
  require_header(t, cols);
  TrussellCoefficients out;
  std::map<std::pair<Family, int>, bool> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    Family f;
    try {
      f = parse_family(t.rows[r][t.column("family")]);
    } catch (const std::invalid_argument& e) {
      throw SchemaError(t.name, t.lines[r], e.what());
    }
    const std::string g = t.rows[r][t.column("age_group")];
    int group = -1;
    for (int i = 0; i < kAgeGroups; ++i)
      if (age_group_label(i) == g) group = i;
    if (group < 0) throw SchemaError(t.name, t.lines[r], "unknown age group '" + g + "'");
    if (seen[{f, group}]) throw SchemaError(t.name, t.lines[r], "duplicate row for " + g);
    seen[{f, group}] = true;
    TrussellRow row;
    for (int k = 0; k < 3; ++k) {
      row.a[k] = parse_double(t, r, t.column("a" + std::to_string(k + 1)));
      row.b[k] = parse_double(t, r, t.column("b" + std::to_string(k + 1)));
    }
    out.set(f, group, row);
  }
  try {
    out.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(t.name, 0, e.what());
  }
  return out;
}

inline LifeTables parse_life_tables(const CsvTable& t) {
  using namespace detail;
  require_header(t, {"family", "level", "q5", "x", "q_x_over_q5"});
  LifeTables lt;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    try {
      lt.add(parse_family(t.rows[r][t.column("family")]), static_cast<int>(parse_int(t, r, t.column("level"))),
             parse_double(t, r, t.column("q5")), static_cast<int>(parse_int(t, r, t.column("x"))),
             parse_double(t, r, t.column("q_x_over_q5")));
    } catch (const std::invalid_argument& e) {
      throw SchemaError(t.name, t.lines[r], e.what());
    }
  }
  try {
    lt.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(t.name, 0, e.what());
  }
  return lt;
}

/// survey_id, year, factor. Unknown surveys are ignored.
inline HivFactors parse_hiv(const CsvTable& t, const LabelRegistry& surveys) {
  using namespace detail;
  require_header(t, {"survey_id", "year", "factor"});
  HivFactors h;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int s = surveys.find(t.rows[r][t.column("survey_id")]);
    const double k = parse_double(t, r, t.column("factor"));
    if (!(k > 0.0)) throw SchemaError(t.name, t.lines[r], "HIV factor must be positive");
    if (s >= 0) h.factor[{s, static_cast<int>(parse_int(t, r, t.column("year")))}] = k;
  }
  return h;
}

/// age, year, district, strata, women.
inline std::vector<PopulationCount> parse_population(const CsvTable& t, const LabelRegistry& districts) {
  using namespace detail;
  require_header(t, {"age", "year", "district", "strata", "women"});
  std::vector<PopulationCount> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    PopulationCount c;
    c.age = static_cast<int>(parse_int(t, r, t.column("age")));
    c.year = static_cast<int>(parse_int(t, r, t.column("year")));
    c.district = districts.find(t.rows[r][t.column("district")]);
    if (c.district < 0) throw SchemaError(t.name, t.lines[r], "unknown district '" + t.rows[r][t.column("district")] + "'");
    try {
      c.strata = parse_strata(t.rows[r][t.column("strata")]);
    } catch (const std::invalid_argument& e) {
      throw SchemaError(t.name, t.lines[r], e.what());
    }
    c.women = parse_int(t, r, t.column("women"));
    if (c.women < 0) throw SchemaError(t.name, t.lines[r], "negative population count");
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimate series.

struct EstimateRow {
  std::string period;    // "1975-1979"
  std::string district;  // "all" for national series
  std::string method;
  double estimate = 0.0;  // logit q5
  double variance = 0.0;
  double q5 = 0.0;
  double lower = 0.0, upper = 0.0;
};

inline const std::vector<std::string> kEstimateColumns{"period", "district", "method", "estimate",
                                                       "variance", "q5",       "lower",  "upper"};

/// Normal-approximation row from a logit-scale mean and variance.
inline EstimateRow logit_row(std::string period, std::string district, std::string method, double theta, double var) {
  const double sd = std::sqrt(std::max(0.0, var));
  return {std::move(period), std::move(district), std::move(method), theta, var, expit(theta),
          expit(theta - 1.959963984540054 * sd), expit(theta + 1.959963984540054 * sd)};
}

inline std::string emit_estimates(const std::vector<EstimateRow>& rows) {
  std::string out = csv_line(kEstimateColumns);
  for (const auto& r : rows)
    out += csv_line({r.period, r.district, r.method, format_double(r.estimate), format_double(r.variance),
                     format_double(r.q5), format_double(r.lower), format_double(r.upper)});
  return out;
}

inline std::vector<EstimateRow> parse_estimates(const CsvTable& t) {
  using namespace detail;
  require_header(t, kEstimateColumns);
  std::vector<EstimateRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    EstimateRow e;
    e.period = t.rows[r][t.column("period")];
    e.district = t.rows[r][t.column("district")];
    e.method = t.rows[r][t.column("method")];
    e.estimate = parse_double(t, r, t.column("estimate"));
    e.variance = parse_double(t, r, t.column("variance"));
    e.q5 = parse_double(t, r, t.column("q5"));
    e.lower = parse_double(t, r, t.column("lower"));
    e.upper = parse_double(t, r, t.column("upper"));
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string emit_brass(const std::vector<IndirectEstimate>& est, Family f) {
  std::string out = csv_line({"family", "age_group", "x", "q_x", "years_before_survey", "reference_time", "q5",
                              "logit_q5", "variance", "discouraged"});
  for (const auto& e : est)
    out += csv_line({to_string(f), age_group_label(e.age_group), std::to_string(e.x), format_double(e.q_x),
                     format_double(e.years_before_survey), format_double(e.reference_time), format_double(e.q5),
                     format_double(e.logit_q5), format_double(e.variance), e.discouraged ? "1" : "0"});
  return out;
}

inline std::vector<IndirectEstimate> parse_brass(const CsvTable& t) {
  using namespace detail;
  std::vector<IndirectEstimate> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    IndirectEstimate e;
    const std::string g = t.rows[r][t.column("age_group")];
    e.age_group = -1;
    for (int i = 0; i < kAgeGroups; ++i)
      if (age_group_label(i) == g) e.age_group = i;
    if (e.age_group < 0) throw SchemaError(t.name, t.lines[r], "unknown age group '" + g + "'");
    e.x = static_cast<int>(parse_int(t, r, t.column("x")));
    e.q_x = parse_double(t, r, t.column("q_x"));
    e.years_before_survey = parse_double(t, r, t.column("years_before_survey"));
    e.reference_time = parse_double(t, r, t.column("reference_time"));
    e.q5 = parse_double(t, r, t.column("q5"));
    e.logit_q5 = parse_double(t, r, t.column("logit_q5"));
    e.variance = parse_double(t, r, t.column("variance"));
    e.discouraged = t.rows[r][t.column("discouraged")] == "1";
    out.push_back(e);
  }
  return out;
}

inline std::string emit_direct(const std::vector<DirectEstimate>& est, const std::vector<std::string>& surveys) {
  std::string out = csv_line({"survey_id", "period", "logit_q5", "variance", "q5", "clusters", "hiv_adjusted"});
  for (const auto& e : est)
    out += csv_line({surveys.at(static_cast<std::size_t>(e.survey_id)), e.period.label(), format_double(e.logit_q5),
                     format_double(e.variance), format_double(e.q5), std::to_string(e.clusters),
                     e.hiv_adjusted ? "1" : "0"});
  return out;
}

inline Period parse_period_label(const std::string& s) {
  const auto dash = s.find('-');
  if (dash == std::string::npos) throw std::invalid_argument("period label '" + s + "' is not start-end");
  return Period{std::stoi(s.substr(0, dash)), std::stoi(s.substr(dash + 1))};
}

struct DirectRow {
  std::string survey_id;
  DirectEstimate est;
};

inline std::vector<DirectRow> parse_direct(const CsvTable& t) {
  using namespace detail;
  std::vector<DirectRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    DirectRow d;
    d.survey_id = t.rows[r][t.column("survey_id")];
    try {
      d.est.period = parse_period_label(t.rows[r][t.column("period")]);
    } catch (const std::exception& e) {
      throw SchemaError(t.name, t.lines[r], e.what());
    }
    d.est.logit_q5 = parse_double(t, r, t.column("logit_q5"));
    d.est.variance = parse_double(t, r, t.column("variance"));
    d.est.q5 = parse_double(t, r, t.column("q5"));
    d.est.clusters = static_cast<int>(parse_int(t, r, t.column("clusters")));
    d.est.hiv_adjusted = t.rows[r][t.column("hiv_adjusted")] == "1";
    out.push_back(d);
  }
  return out;
}

/// model, iteration, parameter, value: one row per retained draw and parameter.
inline std::string emit_chain(const ChainOutput& c) {
  std::string out = csv_line({"model", "iteration", "parameter", "value"});
  auto dump = [&](const char* model, const std::vector<std::string>& names, const std::vector<std::vector<double>>& draws) {
    for (std::size_t i = 0; i < draws.size(); ++i)
      for (std::size_t j = 0; j < names.size(); ++j)
        out += csv_line({model, std::to_string(c.iterations[i]), names[j], format_double(draws[i][j])});
  };
  dump("fertility", c.fertility_names, c.fertility_draws);
  dump("hazard", c.hazard_names, c.hazard_draws);
  return out;
}

inline std::string emit_metric_table(const MetricTable& t, double scale, int digits) {
  std::vector<std::string> head{"period"};
  head.insert(head.end(), t.models.begin(), t.models.end());
  std::string out = csv_line(head);
  for (std::size_t p = 0; p < t.periods.size(); ++p) {
    std::vector<std::string> row{t.periods[p]};
    for (double v : t.values[p]) row.push_back(format_fixed(v * scale, digits));
    out += csv_line(row);
  }
  std::vector<std::string> avg{"average"};
  for (double v : t.averages()) avg.push_back(format_fixed(v * scale, digits));
  return out + csv_line(avg);
}

// ---------------------------------------------------------------------------
// JSON records.

inline nlohmann::json truth_to_json(const SimulationTruth& t) {
  return {{"fertile_ages", {t.ages.min_age, t.ages.max_age}},
          {"fertility_band_starts", t.fertility_band_starts},
          {"fertility", t.fertility},
          {"period_starts", t.period_starts},
          {"q0", t.q0},
          {"q1_4", t.q1_4},
          {"q5_plus", t.q5_plus}};
}

inline SimulationTruth truth_from_json(const nlohmann::json& j) {
  SimulationTruth t;
  try {
    if (j.contains("fertile_ages")) t.ages = {j["fertile_ages"][0].get<int>(), j["fertile_ages"][1].get<int>()};
    if (j.contains("fertility_band_starts")) t.fertility_band_starts = j["fertility_band_starts"].get<std::vector<int>>();
    if (j.contains("fertility")) t.fertility = j["fertility"].get<std::vector<double>>();
    if (j.contains("period_starts")) t.period_starts = j["period_starts"].get<std::vector<int>>();
    if (j.contains("q0")) t.q0 = j["q0"].get<std::vector<double>>();
    if (j.contains("q1_4")) t.q1_4 = j["q1_4"].get<std::vector<double>>();
    if (j.contains("q5_plus")) t.q5_plus = j["q5_plus"].get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("truth", 0, e.what());
  }
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError("truth", 0, e.what());
  }
  return t;
}

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  for (int i = 15; i >= 0; --i) {
    buf[i] = "0123456789abcdef"[h & 0xF];
    h >>= 4;
  }
  buf[16] = '\0';
  return buf;
}

}  // namespace u5mr
