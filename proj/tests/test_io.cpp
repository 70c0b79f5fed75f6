#include <gtest/gtest.h>

#include "u5mr/io.hpp"
#include "u5mr/pipeline.hpp"
#include "u5mr/simulator.hpp"

using namespace u5mr;

TEST(Io, CanonicalFilesRoundTrip) {
  SimulationConfig cfg;
  cfg.n_women = 300;
  cfg.n_fbh = 100;
  const auto co = simulate_cohort(cfg);
  const std::string fbh = emit_fbh(fbh_rows_of(co.fbh, co.surveys, co.districts));
  const std::string sbh = emit_sbh(sbh_rows_of(co.sbh, co.surveys, co.districts));
  EXPECT_EQ(emit_fbh(parse_fbh(parse_csv(fbh, "fbh"))), fbh);
  EXPECT_EQ(emit_sbh(parse_sbh(parse_csv(sbh, "sbh"))), sbh);

  // Records survive ingestion on the whole-year grid.
  const auto d = build_dataset(parse_fbh(parse_csv(fbh, "fbh")), parse_sbh(parse_csv(sbh, "sbh")), ObservationRules{});
  ASSERT_EQ(d.fbh.size(), co.fbh.size());
  ASSERT_EQ(d.sbh.size(), co.sbh.size());
  for (std::size_t i = 0; i < d.fbh.size(); ++i) EXPECT_EQ(d.fbh[i].children, co.fbh[i].children);
  for (std::size_t i = 0; i < d.sbh.size(); ++i) {
    EXPECT_EQ(d.sbh[i].births, co.sbh[i].births);
    EXPECT_EQ(d.sbh[i].deaths, co.sbh[i].deaths);
  }
}

TEST(Io, EmptyFbhHasNoRecords) {
  const std::string header = csv_line(kFbhColumns);
  try {
    parse_fbh(parse_csv(header, "fbh.csv"));
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("no records"), std::string::npos);
  }
}

TEST(Io, DeathsAboveBirthsRejectedWithLine) {
  const std::string text = csv_line(kSbhColumns) + "a,s,30,2010,2,1,d,rural\n" + "b,s,31,2010,1,2,d,rural\n";
  try {
    parse_sbh(parse_csv(text, "sbh.csv"));
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("exceeds"), std::string::npos);
  }
}

TEST(Io, MissingColumnIsSchemaError) {
  EXPECT_THROW(parse_sbh(parse_csv("woman_id,survey_id\na,b\n", "sbh.csv")), SchemaError);
}

TEST(Io, EstimatesRoundTrip) {
  std::vector<EstimateRow> rows{logit_row("2005-2009", "all", "m", -2.1, 0.01)};
  const std::string s = emit_estimates(rows);
  EXPECT_EQ(emit_estimates(parse_estimates(parse_csv(s, "e"))), s);
}

TEST(Io, TruthJsonRoundTrip) {
  SimulationTruth t;
  t.q0[2] = 0.2;
  const auto back = truth_from_json(truth_to_json(t));
  EXPECT_EQ(back.q0, t.q0);
  EXPECT_EQ(back.fertility, t.fertility);
}

TEST(Config, TomlSectionsParse) {
  const auto c = config_from_toml(R"(
mode = "fit"
seed = 7
[hmc]
warmup = 20
chain_length = 40
[model]
fbh_only = true
[evaluate.models]
a = "x.csv"
)");
  EXPECT_EQ(c.stage, "fit");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.warmup, 20);
  EXPECT_EQ(c.chain_length, 40);
  EXPECT_TRUE(c.fbh_only);
  EXPECT_EQ(c.models.at("a"), "x.csv");
  EXPECT_EQ(config_from_json(to_json(c)).seed, 7u);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  EXPECT_THROW(config_from_toml("[hmc]\nwarmpu = 3\n"), SchemaError);
  EXPECT_THROW(config_from_toml("preset = \"elsewhere\"\n"), SchemaError);
  EXPECT_THROW(config_from_toml("seed = \"x\"\n"), SchemaError);
  EXPECT_THROW(config_from_toml("seed = \n"), SchemaError);
}
