// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
//
// Command-line entry point. All real work lives in the library (cli.cpp);
// this file only parses arguments and forwards to run_cli so the behavior is
// testable without spawning processes.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "latecache/cli.hpp"

namespace {

CLI::App* add_command(CLI::App& app, latecache::CliOptions& opt, const std::string& name,
                      const std::string& description) {
  CLI::App* sub = app.add_subcommand(name, description);
  sub->add_option("--config", opt.config_path, "experiment config file (JSON)")->required();
  sub->add_option("--out", opt.out_dir, "artifact directory (created if absent)")->required();
  sub->add_option_function<std::uint64_t>(
      "--seed", [&opt](std::uint64_t v) {
        opt.seed = v;
        opt.seed_override = true;
      },
      "override the config seed");
  return sub;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learned-cache serving pipeline: prepare, explore, compose, simulate, plan"};
  app.require_subcommand(1);

  latecache::CliOptions opt;
  add_command(app, opt, "prepare", "generate the dataset, train the base model, write the layer profile");
  CLI::App* explore = add_command(app, opt, "explore", "train and measure every cache variant per layer");
  CLI::App* compose = add_command(app, opt, "compose", "select the deployed variants and report the trade-off");
  CLI::App* simulate = add_command(app, opt, "simulate", "serve a generated workload and emit trace/summary/CSV");
  CLI::App* plan = add_command(app, opt, "plan", "sweep SLOs over the query DAG and audit example queries");

  const std::string fixture_help = "use the published reference metrics (choices: table4)";
  explore->add_option("--fixture", opt.fixture, fixture_help);
  compose->add_option("--fixture", opt.fixture, fixture_help);
  simulate->add_option("--fixture", opt.fixture, fixture_help);
  simulate->add_flag("--adapt", opt.adapt, "paired run: periodic retraining vs frozen caches");
  plan->add_flag("--replan", opt.replan, "audit queries with mid-query budget redistribution");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? latecache::kExitOk : latecache::kExitConfigError;
  }

  for (const CLI::App* sub : app.get_subcommands()) opt.command = sub->get_name();
  return latecache::run_cli(opt, std::cout);
}
