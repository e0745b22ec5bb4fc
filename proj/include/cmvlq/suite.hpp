#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmvlq {

struct Metric {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// value ≤ tolerance.
Metric at_most(std::string name, double value, double tolerance);
/// value ≥ tolerance.
Metric at_least(std::string name, double value, double tolerance);
/// value > tolerance.
Metric above(std::string name, double value, double tolerance);

struct CriterionResult {
  int id = 0;
  std::string title;
  std::vector<Metric> metrics;
  double seconds = 0.0;  // wall clock; never written to reports
  bool pass() const;
};

struct SuiteOptions {
  std::uint64_t seed = 42;
  int mc_paths = 100000;
  int mc_steps = 1000;
};

/// Acceptance criteria 1 through 9. Instances are derived from the seed
/// only, so the metrics are reproducible bit for bit.
std::vector<CriterionResult> run_suite(const SuiteOptions& opts = {});

/// Individual criteria, as run by the suite.
CriterionResult criterion_decomposition(const SuiteOptions& opts);   // 1
CriterionResult criterion_lemma(const SuiteOptions& opts);           // 2
CriterionResult criterion_oracle(const SuiteOptions& opts);          // 3
CriterionResult criterion_constraints(const SuiteOptions& opts);     // 4
CriterionResult criterion_stationarity(const SuiteOptions& opts);    // 5
CriterionResult criterion_riccati(const SuiteOptions& opts);         // 6
CriterionResult criterion_picard(const SuiteOptions& opts);          // 7
CriterionResult criterion_value_function(const SuiteOptions& opts);  // 8
CriterionResult criterion_convexity(const SuiteOptions& opts);       // 9

}  // namespace cmvlq
