#include "cmvlq/cli/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "cmvlq/error.hpp"

namespace cmvlq::cli {

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Metric info(std::string name, double value) {
  return {std::move(name), value, std::numeric_limits<double>::quiet_NaN(), true};
}

void write_report(std::ostream& out, const std::vector<Metric>& rows) {
  out << "metric,value,tolerance,pass\n";
  for (const Metric& m : rows)
    out << m.name << ',' << format_real(m.value) << ','
        << (std::isnan(m.tolerance) ? std::string() : format_real(m.tolerance)) << ','
        << (m.pass ? "true" : "false") << '\n';
}

void write_report_file(const std::string& path, const std::vector<Metric>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  write_report(out, rows);
  if (!out) throw Error(ErrorKind::io, "failed writing " + path);
}

bool all_pass(const std::vector<Metric>& rows) {
  for (const Metric& m : rows)
    if (!m.pass) return false;
  return true;
}

}  // namespace cmvlq::cli
