// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "CLI11.hpp"
#include "sga/cli/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Block-sparse guided attention toolkit"};
  app.require_subcommand(1);
  sga::CommandOptions opts;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t workers = 0, steps = 0;

  for (const auto& name : sga::command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config, "run config (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--workers", workers, "candidate worker threads");
    sub->add_option("--steps", steps, "override training steps");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : sga::kExitConfig;
  }
  auto* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opts.seed = seed;
  if (sub->count("--out")) opts.out = out;
  if (sub->count("--workers")) opts.workers = workers;
  if (sub->count("--steps")) opts.steps = steps;
  return sga::run_command(sub->get_name(), opts, std::cerr);
}
