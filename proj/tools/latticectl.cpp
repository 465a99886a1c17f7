// latticectl: declarative scenario runner for the lattice vibrational-state
// control toolkit. `run` executes one scenario config; `compare` ranks
// previously produced summaries.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lattice/lattice.hpp"
#include "lattice/scenario.hpp"

namespace {

constexpr int exit_config = 2;
constexpr int exit_physics = 3;
constexpr int exit_io = 4;

void print_error(const char* kind, const std::string& what, int code) {
  lattice::json err;
  err["error"] = {{"kind", kind}, {"message", what}, {"exit_code", code}};
  std::cerr << err.dump() << "\n";
}

int run_guarded(const lattice::json& config, const std::string& out_dir, int threads,
                std::int64_t seed) {
  try {
    lattice::json summary = lattice::run_scenario(config, out_dir, threads, seed);
    std::cout << "wrote " << summary["files"].size() << " files + summary.json to "
              << summary["config"]["out_dir"].get<std::string>() << "\n";
    return 0;
  } catch (const lattice::ConfigError& e) {
    print_error("config", e.what(), exit_config);
    return exit_config;
  } catch (const lattice::IoError& e) {
    print_error("io", e.what(), exit_io);
    return exit_io;
  } catch (const std::exception& e) {
    print_error("physics", e.what(), exit_physics);
    return exit_physics;
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"optical-lattice vibrational-state control toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  int threads = -1;
  std::int64_t seed = -1;

  CLI::App* run = app.add_subcommand("run", "run a scenario config file");
  run->add_option("config", config_path, "JSON scenario config")->required();
  run->add_option("--out", out_dir, "output directory (overrides config)");
  run->add_option("--threads", threads, "worker threads (0 = hardware)");
  run->add_option("--seed", seed, "random seed (overrides config)");

  std::vector<std::string> summaries;
  std::string compare_out = "compare-out";
  CLI::App* cmp = app.add_subcommand("compare", "rank scenario summaries");
  cmp->add_option("summaries", summaries, "summary.json files")->required()->expected(-2);
  cmp->add_option("--out", compare_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    std::ifstream in(config_path);
    if (!in) {
      print_error("config", "cannot open " + config_path, exit_config);
      return exit_config;
    }
    lattice::json config;
    try {
      in >> config;
    } catch (const std::exception& e) {
      print_error("config", std::string("parse: ") + e.what(), exit_config);
      return exit_config;
    }
    return run_guarded(config, out_dir, threads, seed);
  }

  lattice::json config;
  config["scenario"] = "compare";
  config["compare_inputs"] = summaries;
  config["out_dir"] = compare_out;
  return run_guarded(config, "", threads, seed);
}
