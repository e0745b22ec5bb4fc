#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "cmvlq/suite.hpp"

namespace cmvlq::cli {

/// %.17g; NaN and infinities as nan, inf, -inf.
std::string format_real(double v);

/// Value reported for information only: empty tolerance, always passing.
Metric info(std::string name, double value);

/// Header `metric,value,tolerance,pass` then one row per metric.
void write_report(std::ostream& out, const std::vector<Metric>& rows);
void write_report_file(const std::string& path, const std::vector<Metric>& rows);

bool all_pass(const std::vector<Metric>& rows);

}  // namespace cmvlq::cli
