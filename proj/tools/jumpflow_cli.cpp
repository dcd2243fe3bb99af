#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "jumpflow/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"jump-diffusion simulation and verification toolkit"};

  std::string config;
  std::uint64_t seed = 0;
  std::size_t paths = 0;
  std::string out;
  int threads = 0;

  app.add_option("--config", config, "experiment config file (JSON)")
      ->required();
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  auto* paths_opt =
      app.add_option("--paths", paths, "override the experiment path count");
  auto* out_opt =
      app.add_option("--out", out, "override the output directory");
  app.add_option("--threads", threads,
                 "worker threads (0 = available parallelism)");

  CLI11_PARSE(app, argc, argv);

  jumpflow::runner::Overrides ov;
  if (seed_opt->count()) ov.seed = seed;
  if (paths_opt->count()) ov.paths = paths;
  if (out_opt->count()) ov.out = out;
  ov.threads = threads;

  return jumpflow::runner::run(config, ov, std::cout, std::cerr);
}
