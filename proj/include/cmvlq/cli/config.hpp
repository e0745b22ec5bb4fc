#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "cmvlq/coeffs.hpp"
#include "cmvlq/riccati.hpp"
#include "cmvlq/sim.hpp"

namespace cmvlq::cli {

enum class Mode { validate, solve, oracle, compare, simulate, suite };

std::string_view to_string(Mode m);
std::optional<Mode> parse_mode(std::string_view s);

struct GridConfig {
  int steps = 4;
  double horizon = 1.0;
  Backend backend = Backend::tree;
};

/// Line-oriented `key = value` text with `[section]` headers and `#`
/// comments. Matrices are row-major, entries separated by spaces, rows by
/// `;`; time pieces by `|`. A coefficient `X` may carry `X.slope` with the
/// same piece count. Vectors accept any single row or column.
///
///   mode = compare
///   output = out
///   [coefficients]   n, d, A F B S Q R (+ .slope), b D D0 zeta varpi (+ .slope), H, QT
///   [initial]        mean, atoms (n × M), probs
///   [grid]           steps, horizon, backend = ode | tree
///   [simulation]     paths, seed, common_noise, checkpoints
///
/// Everything except R defaults to zero; ξ defaults to the deterministic 0.
struct RunConfig {
  Mode mode = Mode::solve;
  std::string output = ".";
  bool has_coefficients = false;
  bool has_grid = false;
  bool has_simulation = false;
  CoefficientSet coeffs;
  InitialCondition xi;
  GridConfig grid;
  SimOptions sim;

  TimeGrid time_grid() const { return TimeGrid::make(grid.steps, grid.horizon); }
};

/// Parses and checks a configuration. `mode` overrides the file's mode
/// before the per-mode section requirements are applied. Throws ConfigError
/// listing every problem found, each with its line number.
RunConfig parse_config(std::string_view text, std::optional<Mode> mode = std::nullopt);

/// Inverse of parse_config, reals at 17 significant digits.
std::string serialize_config(const RunConfig& cfg);

}  // namespace cmvlq::cli
