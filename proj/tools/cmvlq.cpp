#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "cmvlq/cli/config.hpp"
#include "cmvlq/cli/run.hpp"
#include "cmvlq/error.hpp"

namespace {

// One machine-readable line per problem on stderr.
void report_error(std::string_view kind, const std::string& message) {
  std::istringstream lines(message);
  std::string line;
  while (std::getline(lines, line)) std::cerr << "error," << kind << ',' << line << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  using namespace cmvlq;
  CLI::App app{"Linear-quadratic conditional McKean-Vlasov control solver"};
  std::string mode_name;
  std::string config_path;
  std::uint64_t seed = 0;
  int paths = 0;
  std::string out_dir;
  std::string backend;
  app.add_option("mode", mode_name, "validate | solve | oracle | compare | simulate | suite")
      ->required()
      ->check(CLI::IsMember({"validate", "solve", "oracle", "compare", "simulate", "suite"}));
  app.add_option("--config", config_path, "configuration file (optional in suite mode)");
  auto* seed_opt = app.add_option("--seed", seed, "simulation / suite seed");
  auto* paths_opt = app.add_option("--paths", paths, "Monte Carlo paths")->check(CLI::Range(2, 1 << 30));
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--backend", backend, "ode | tree")->check(CLI::IsMember({"ode", "tree"}));
  CLI11_PARSE(app, argc, argv);

  try {
    cli::Mode mode = *cli::parse_mode(mode_name);
    cli::RunConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path, std::ios::binary);
      if (!in) throw Error(ErrorKind::io, "cannot read " + config_path);
      std::ostringstream text;
      text << in.rdbuf();
      cfg = cli::parse_config(text.str(), mode);
    } else if (mode != cli::Mode::suite) {
      throw Error(ErrorKind::invalid_argument, "--config is required in mode " + mode_name);
    }
    cfg.mode = mode;
    if (*seed_opt) cfg.sim.seed = seed;
    if (*paths_opt) cfg.sim.n_paths = paths;
    if (!out_dir.empty()) cfg.output = out_dir;
    if (!backend.empty()) cfg.grid.backend = parse_backend(backend);
    return cli::run(cfg, std::cout);
  } catch (const ConfigError& e) {
    for (const std::string& m : e.messages()) report_error("config", m);
  } catch (const Error& e) {
    report_error(to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    report_error("internal", e.what());
  }
  return 2;
}
