#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "morseflow/errors.h"
#include "morseflow/run.h"

int main(int argc, char** argv) {
  using namespace morseflow;
  CLI::App app{"Connection graphs of gradient flows with distributed memory"};
  app.require_subcommand(1, 1);
  std::string config;
  RunFlags flags;
  std::string eps_list;
  double eps = 0.0;
  int eq = -1;
  std::string side;
  std::uint64_t seed = 0;
  std::string out;
  for (const auto& name : subcommands()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "key = value configuration file");
    sub->add_option("--eps", eps, "perturbation strength");
    sub->add_option("--eps-list", eps_list, "comma separated eps values");
    sub->add_option("--eq", eq, "equilibrium index");
    sub->add_option("--side", side, "unstable or stable");
    sub->add_option("--seed", seed, "seed for randomized sampling");
    sub->add_option("--out", out, "output directory");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--eps")) flags.eps = eps;
  if (sub->count("--eq")) flags.eq = eq;
  if (sub->count("--side")) flags.side = side;
  if (sub->count("--seed")) flags.seed = seed;
  if (sub->count("--out")) flags.out = out;
  if (sub->count("--eps-list")) {
    try {
      flags.eps_list = parse_list(eps_list);
    } catch (const Error& e) {
      std::cerr << "--eps-list: " << e.what() << "\n";
      return 2;
    }
  }
  return run(sub->get_name(), config, flags, std::cout, std::cerr);
}
