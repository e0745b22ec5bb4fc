// Runs the acceptance suite twice with the default seed and prints one line
// per criterion. Exit status is non-zero if any criterion fails.

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cmvlq/cli/report.hpp"
#include "cmvlq/suite.hpp"

using namespace cmvlq;

namespace {

// Wall-clock budgets in seconds, where the criterion has one.
const std::map<int, double> kBudget = {{1, 10.0}, {3, 60.0}, {6, 1.0}, {7, 30.0}, {8, 60.0}};

std::string report_bytes(const std::vector<CriterionResult>& results) {
  std::vector<Metric> rows;
  for (const auto& r : results) rows.insert(rows.end(), r.metrics.begin(), r.metrics.end());
  std::ostringstream out;
  cli::write_report(out, rows);
  return out.str();
}

std::string describe(const Metric& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s=%.6g (tol %g, %s)", m.name.c_str(), m.value, m.tolerance,
                m.pass ? "ok" : "FAIL");
  return buf;
}

}  // namespace

int main() {
  SuiteOptions opts;
  std::vector<CriterionResult> first = run_suite(opts);
  bool all = true;
  for (const CriterionResult& r : first) {
    bool pass = r.pass();
    std::string detail;
    for (const Metric& m : r.metrics) detail += (detail.empty() ? "" : "; ") + describe(m);
    auto budget = kBudget.find(r.id);
    if (budget != kBudget.end()) {
      bool in_time = r.seconds < budget->second;
      pass = pass && in_time;
      char buf[96];
      std::snprintf(buf, sizeof buf, "; runtime=%.2fs (limit %.0fs, %s)", r.seconds,
                    budget->second, in_time ? "ok" : "FAIL");
      detail += buf;
    } else {
      char buf[48];
      std::snprintf(buf, sizeof buf, "; runtime=%.2fs", r.seconds);
      detail += buf;
    }
    std::printf("criterion %2d %s  %s: %s\n", r.id, pass ? "PASS" : "FAIL", r.title.c_str(),
                detail.c_str());
    all = all && pass;
  }

  std::vector<CriterionResult> second = run_suite(opts);
  std::string a = report_bytes(first), b = report_bytes(second);
  bool same = a == b;
  std::printf("criterion 10 %s  determinism: report bytes %zu vs %zu, %s\n", same ? "PASS" : "FAIL",
              a.size(), b.size(), same ? "identical" : "different");
  all = all && same;
  std::printf("%s\n", all ? "ALL PASS" : "SOME CRITERIA FAILED");
  return all ? 0 : 1;
}
