#include <gtest/gtest.h>

#include <filesystem>

#include "u5mr/pipeline.hpp"

using namespace u5mr;
namespace fs = std::filesystem;

namespace {

RunConfig small_config(const fs::path& out) {
  RunConfig c;
  c.output = out.string();
  c.n_women = 400;
  c.n_fbh = 150;
  c.warmup = 30;
  c.chain_length = 30;
  c.thin = 1;
  c.hiv_draws = 1000;
  c.coefficients = U5MR_DATA_DIR "/trussell_coefficients.csv";
  c.life_tables = U5MR_DATA_DIR "/life_tables.csv";
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("u5mr_test_" + name);
  fs::remove_all(p);
  return p;
}

int run(RunConfig c, const std::string& stage) {
  c.stage = stage;
  return run_stage(c).exit_code;
}

}  // namespace

TEST(Pipeline, StagesProduceArtifacts) {
  const auto dir = fresh_dir("stages");
  auto c = small_config(dir);
  ASSERT_EQ(run(c, "simulate"), kOk);
  ASSERT_EQ(run(c, "fit"), kOk);
  ASSERT_EQ(run(c, "brass"), kOk);
  ASSERT_EQ(run(c, "direct"), kOk);
  ASSERT_EQ(run(c, "combine"), kOk);
  c.models = {{"bayes", (dir / "fit_estimates.csv").string()}, {"combined", (dir / "combined.csv").string()}};
  ASSERT_EQ(run(c, "evaluate"), kOk);
  ASSERT_EQ(run(c, "report"), kOk);
  for (const char* f : {"fbh.csv", "sbh.csv", "truth.json", "chain.csv", "fit_estimates.csv", "fertility.csv",
                        "brass.csv", "direct.csv", "combined.csv", "metrics_bias.csv", "metrics_width.csv",
                        "report.md", "manifest_fit.json", "manifest_report.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto est = parse_estimates(read_csv((dir / "fit_estimates.csv").string()));
  EXPECT_EQ(est.size(), 7u);
  const auto bias = read_csv((dir / "metrics_bias.csv").string());
  EXPECT_EQ(bias.rows.size(), 8u);  // seven periods and the average
}

TEST(Pipeline, ManifestRerunIsByteIdentical) {
  const auto dir = fresh_dir("rerun");
  auto c = small_config(dir);
  ASSERT_EQ(run(c, "simulate"), kOk);
  ASSERT_EQ(run(c, "fit"), kOk);
  const std::string chain = read_file((dir / "chain.csv").string());
  const auto m1 = nlohmann::json::parse(read_file((dir / "manifest_fit.json").string()));
  const auto again = load_config((dir / "manifest_fit.json").string());
  ASSERT_EQ(run_stage(again).exit_code, kOk);
  const auto m2 = nlohmann::json::parse(read_file((dir / "manifest_fit.json").string()));
  EXPECT_EQ(read_file((dir / "chain.csv").string()), chain);
  EXPECT_EQ(m1["config_hash"], m2["config_hash"]);
  EXPECT_EQ(m1["outputs"], m2["outputs"]);
}

TEST(Pipeline, SchemaErrorsExitTwo) {
  const auto dir = fresh_dir("schema");
  auto c = small_config(dir);
  fs::create_directories(dir);
  write_file((dir / "fbh.csv").string(), csv_line(kFbhColumns));
  EXPECT_EQ(run(c, "direct"), kSchemaError);
  const auto m = nlohmann::json::parse(read_file((dir / "manifest_direct.json").string()));
  EXPECT_NE(m["messages"][0].get<std::string>().find("no records"), std::string::npos);
}

TEST(Pipeline, InfeasibleFbhExitsFour) {
  const auto dir = fresh_dir("infeasible");
  auto c = small_config(dir);
  fs::create_directories(dir);
  // Two births to one woman in the same year.
  write_file((dir / "fbh.csv").string(), csv_line(kFbhColumns) + "w1,s,1,1,30,2010,,1,,2005,,,d,rural\n" +
                                             "w1,s,1,1,30,2010,,2,,2005,,,d,rural\n");
  EXPECT_EQ(run(c, "fit"), kInfeasibleRecords);
}
