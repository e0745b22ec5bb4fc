#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "cmvlq/cli/config.hpp"
#include "cmvlq/suite.hpp"

namespace cmvlq::cli {

struct RunResult {
  std::vector<Metric> rows;
  std::vector<std::pair<std::string, double>> timing;  // phase, seconds
  std::optional<std::string> checkpoints_csv;          // simulate mode
  bool pass() const;
};

/// Runs the pipeline for cfg.mode without touching the filesystem.
RunResult execute(const RunConfig& cfg);

/// execute() plus artifacts in cfg.output: report.csv, timing.csv and, in
/// simulate mode, checkpoints.csv. Returns 0 iff every pass flag is true.
int run(const RunConfig& cfg, std::ostream& log);

}  // namespace cmvlq::cli
