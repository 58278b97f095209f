#include <iostream>

#include <CLI11.hpp>

#include "vib/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Variational information bottleneck experiments"};
  app.require_subcommand(1);
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool quiet = false;
  for (const char* name : {"train", "eval", "attack", "ibcurve", "embed2d", "gradcheck"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON experiment config")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides the config)");
    sub->add_option("--seed", seed, "seed (overrides the config)");
    sub->add_flag("--quiet", quiet, "no progress output");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();
  const bool seed_given = app.get_subcommands().front()->count("--seed") > 0;

  try {
    auto cfg = vib::load_config(config);
    if (!out.empty()) cfg.out = out;
    if (seed_given) {
      cfg.seed = seed;
      cfg.train.seed = seed;
    }
    std::ostream null(nullptr);
    return vib::cli::dispatch(command, cfg, quiet ? null : std::cerr);
  } catch (const vib::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const vib::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
