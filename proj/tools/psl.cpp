#include "psl/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Train, attack and analyse image classifiers across a spectrum of L-inf budgets"};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir = "psl_out";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  for (const auto& name : psl::subcommand_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "run directory")->capture_default_str();
    sub->add_option("--seed", seed, "override the config's base seed");
    sub->add_option("--jobs", jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  }

  CLI11_PARSE(app, argc, argv);

  const auto* sub = app.get_subcommands().front();
  psl::RunOptions options;
  options.out_dir = out_dir;
  options.jobs = jobs;
  options.log = &std::cout;
  if (sub->count("--seed") > 0) options.seed = seed;
  return psl::run(config, sub->get_name(), options);
}
