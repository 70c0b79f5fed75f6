// Batch front end: one subcommand per pipeline stage.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "u5mr/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"u5mr: under-five mortality from full and summary birth histories"};
  app.require_subcommand(1);

  std::string config_path, output;
  std::uint64_t seed = 0;
  int threads = 0;
  app.add_option("--config", config_path, "TOML run config, or a manifest.json to rerun");
  app.add_option("--seed", seed, "override the configured seed");
  app.add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);
  app.add_option("--output", output, "output directory");

  for (const char* mode : {"simulate", "fit", "brass", "direct", "combine", "evaluate", "report"})
    app.add_subcommand(mode, std::string("run the ") + mode + " stage");

  CLI11_PARSE(app, argc, argv);

  u5mr::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = u5mr::load_config(config_path);
  } catch (const u5mr::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return u5mr::kSchemaError;
  }
  const std::string mode = app.get_subcommands().front()->get_name();
  // A manifest pins its own stage; a plain config takes the subcommand.
  if (config_path.size() < 5 || config_path.substr(config_path.size() - 5) != ".json") cfg.stage = mode;
  else if (cfg.stage != mode) {
    std::cerr << "error: manifest records mode '" << cfg.stage << "', not '" << mode << "'\n";
    return u5mr::kSchemaError;
  }
  if (app.count("--seed")) cfg.seed = seed;
  if (app.count("--threads")) cfg.threads = threads;
  if (app.count("--output")) cfg.output = output;

  const auto r = u5mr::run_stage(cfg);
  for (const auto& m : r.messages) std::cerr << m << "\n";
  for (const auto& f : r.outputs) std::cout << (std::filesystem::path(cfg.output) / f).string() << "\n";
  return r.exit_code;
}
