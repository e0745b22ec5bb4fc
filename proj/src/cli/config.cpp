#include "cmvlq/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "cmvlq/error.hpp"

namespace cmvlq::cli {

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::validate: return "validate";
    case Mode::solve: return "solve";
    case Mode::oracle: return "oracle";
    case Mode::compare: return "compare";
    case Mode::simulate: return "simulate";
    case Mode::suite: return "suite";
  }
  return "?";
}

std::optional<Mode> parse_mode(std::string_view s) {
  for (Mode m : {Mode::validate, Mode::solve, Mode::oracle, Mode::compare, Mode::simulate,
                 Mode::suite})
    if (s == to_string(m)) return m;
  return std::nullopt;
}

namespace {

const std::vector<std::string> kMatrixKeys = {"A", "F", "B", "S", "Q", "R"};
const std::vector<std::string> kVectorKeys = {"b", "D", "D0", "zeta", "varpi"};

std::set<std::string> allowed_keys(const std::string& section) {
  if (section.empty()) return {"mode", "output"};
  if (section == "coefficients") {
    std::set<std::string> keys{"n", "d", "H", "QT"};
    for (const auto& k : kMatrixKeys) keys.insert({k, k + ".slope"});
    for (const auto& k : kVectorKeys) keys.insert({k, k + ".slope"});
    return keys;
  }
  if (section == "initial") return {"mean", "atoms", "probs"};
  if (section == "grid") return {"steps", "horizon", "backend"};
  if (section == "simulation") return {"paths", "seed", "common_noise", "checkpoints"};
  return {};
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

struct Entry {
  std::string value;
  int line = 0;
};

struct Section {
  int line = 0;
  std::map<std::string, Entry> entries;
};

class Parser {
 public:
  std::vector<std::string> errors;

  void error(int line, const std::string& msg) {
    errors.push_back("line " + std::to_string(line) + ": " + msg);
  }

  std::optional<double> real(const Entry& e, const std::string& what) {
    double v = 0.0;
    const char* end = e.value.data() + e.value.size();
    auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
      error(e.line, what + ": expected a finite real, got '" + e.value + "'");
      return std::nullopt;
    }
    return v;
  }

  template <class Int>
  std::optional<Int> integer(const Entry& e, const std::string& what, Int min_value) {
    Int v{};
    const char* end = e.value.data() + e.value.size();
    auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
    if (ec != std::errc() || ptr != end || v < min_value) {
      error(e.line, what + ": expected an integer ≥ " + std::to_string(min_value) + ", got '" +
                        e.value + "'");
      return std::nullopt;
    }
    return v;
  }

  std::optional<Mat> matrix(const std::string& text, int line, const std::string& what) {
    std::vector<std::vector<double>> rows;
    for (const std::string& row : split(text, ';')) {
      std::vector<double> vals;
      std::istringstream in(row);
      std::string tok;
      while (in >> tok) {
        Entry e{tok, line};
        auto v = real(e, what);
        if (!v) return std::nullopt;
        vals.push_back(*v);
      }
      rows.push_back(std::move(vals));
    }
    if (rows.empty() || rows[0].empty()) {
      error(line, what + ": empty matrix");
      return std::nullopt;
    }
    for (const auto& r : rows)
      if (r.size() != rows[0].size()) {
        error(line, what + ": rows have different lengths");
        return std::nullopt;
      }
    Mat m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows[i].size(); ++j)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return m;
  }

  std::optional<Mat> shaped(const Entry& e, const std::string& what, Eigen::Index rows,
                            Eigen::Index cols) {
    auto m = matrix(e.value, e.line, what);
    if (!m) return std::nullopt;
    return conform(*m, e.line, what, rows, cols);
  }

  std::optional<Mat> conform(const Mat& m, int line, const std::string& what, Eigen::Index rows,
                             Eigen::Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    // Vectors may be written as a row.
    if (cols == 1 && m.rows() == 1 && m.cols() == rows) return Mat(m.transpose());
    error(line, what + ": expected " + std::to_string(rows) + "×" + std::to_string(cols) +
                    ", got " + std::to_string(m.rows()) + "×" + std::to_string(m.cols()));
    return std::nullopt;
  }

  std::optional<std::vector<Mat>> pieces(const Entry& e, const std::string& what,
                                         Eigen::Index rows, Eigen::Index cols) {
    std::vector<Mat> out;
    bool ok = true;
    for (const std::string& piece : split(e.value, '|')) {
      auto m = matrix(piece, e.line, what);
      if (m) m = conform(*m, e.line, what, rows, cols);
      if (!m) ok = false;
      else out.push_back(*m);
    }
    if (!ok) return std::nullopt;
    return out;
  }
};

template <class V>
void read_process(Parser& p, const Section& sec, const std::string& key, Eigen::Index rows,
                  Eigen::Index cols, AffineProcess<V>& out) {
  const std::string label = "[coefficients]." + key;
  auto base_it = sec.entries.find(key);
  auto slope_it = sec.entries.find(key + ".slope");
  if (base_it == sec.entries.end()) {
    if (slope_it != sec.entries.end())
      p.error(slope_it->second.line, label + ".slope given without " + label);
    return;
  }
  auto base = p.pieces(base_it->second, label, rows, cols);
  if (!base) return;
  AffineProcess<V> proc;
  for (const Mat& m : *base) proc.base.push_back(m);
  if (slope_it != sec.entries.end()) {
    auto slope = p.pieces(slope_it->second, label + ".slope", rows, cols);
    if (!slope) return;
    if (slope->size() != base->size()) {
      p.error(slope_it->second.line, label + ".slope has " + std::to_string(slope->size()) +
                                         " pieces, base has " + std::to_string(base->size()));
      return;
    }
    for (const Mat& m : *slope) proc.slope.push_back(m);
  }
  out = std::move(proc);
}

void require(Parser& p, const std::map<std::string, Section>& sections, const std::string& name,
             Mode mode) {
  if (!sections.count(name))
    p.errors.push_back("missing section [" + name + "] required by mode " +
                       std::string(to_string(mode)));
}

}  // namespace

RunConfig parse_config(std::string_view text, std::optional<Mode> mode_override) {
  Parser p;
  std::map<std::string, Section> sections;
  sections[""] = Section{};
  std::string current;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        p.error(line_no, "malformed section header '" + line + "'");
        continue;
      }
      current = trim(line.substr(1, line.size() - 2));
      if (allowed_keys(current).empty()) p.error(line_no, "unknown section [" + current + "]");
      if (sections.count(current) && !current.empty())
        p.error(line_no, "duplicate section [" + current + "]");
      sections[current].line = line_no;
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      p.error(line_no, "expected key = value, got '" + line + "'");
      continue;
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    std::string where = current.empty() ? key : "[" + current + "]." + key;
    auto allowed = allowed_keys(current);
    if (!allowed.empty() && !allowed.count(key)) {
      p.error(line_no, "unknown key " + where);
      continue;
    }
    if (allowed.empty()) continue;  // already reported the section
    auto& entries = sections[current].entries;
    if (entries.count(key)) {
      p.error(line_no, "duplicate key " + where + " (first at line " +
                           std::to_string(entries[key].line) + ")");
      continue;
    }
    entries[key] = Entry{value, line_no};
  }

  RunConfig cfg;
  const Section& top = sections[""];
  if (auto it = top.entries.find("mode"); it != top.entries.end()) {
    if (auto m = parse_mode(it->second.value)) cfg.mode = *m;
    else p.error(it->second.line, "unknown mode '" + it->second.value + "'");
  }
  if (mode_override) cfg.mode = *mode_override;
  if (auto it = top.entries.find("output"); it != top.entries.end()) {
    if (it->second.value.empty()) p.error(it->second.line, "output: empty path");
    cfg.output = it->second.value;
  }

  cfg.has_grid = sections.count("grid") > 0;
  if (cfg.has_grid) {
    const auto& e = sections["grid"].entries;
    if (auto it = e.find("steps"); it != e.end())
      if (auto v = p.integer<int>(it->second, "[grid].steps", 1)) cfg.grid.steps = *v;
    if (auto it = e.find("horizon"); it != e.end())
      if (auto v = p.real(it->second, "[grid].horizon")) {
        if (*v > 0.0) cfg.grid.horizon = *v;
        else p.error(it->second.line, "[grid].horizon must be positive");
      }
    if (auto it = e.find("backend"); it != e.end()) {
      if (it->second.value == "ode") cfg.grid.backend = Backend::ode;
      else if (it->second.value == "tree") cfg.grid.backend = Backend::tree;
      else p.error(it->second.line, "[grid].backend must be ode or tree");
    }
  }

  cfg.has_coefficients = sections.count("coefficients") > 0;
  int n = 1, d = 1;
  if (cfg.has_coefficients) {
    const Section& sec = sections["coefficients"];
    const auto& e = sec.entries;
    bool dims_ok = true;
    if (auto it = e.find("n"); it != e.end()) {
      auto v = p.integer<int>(it->second, "[coefficients].n", 1);
      if (v) n = *v;
      else dims_ok = false;
    }
    if (auto it = e.find("d"); it != e.end()) {
      auto v = p.integer<int>(it->second, "[coefficients].d", 1);
      if (v) d = *v;
      else dims_ok = false;
    }
    cfg.coeffs = CoefficientSet::zeros(n, d, cfg.grid.horizon);
    if (!e.count("R"))
      p.error(sec.line, "missing required key [coefficients].R");
    if (dims_ok) {
      read_process(p, sec, "A", n, n, cfg.coeffs.A);
      read_process(p, sec, "F", n, n, cfg.coeffs.F);
      read_process(p, sec, "B", n, d, cfg.coeffs.B);
      read_process(p, sec, "S", n, d, cfg.coeffs.S);
      read_process(p, sec, "Q", n, n, cfg.coeffs.Q);
      read_process(p, sec, "R", d, d, cfg.coeffs.R);
      read_process(p, sec, "b", n, 1, cfg.coeffs.b);
      read_process(p, sec, "D", n, 1, cfg.coeffs.D);
      read_process(p, sec, "D0", n, 1, cfg.coeffs.D0);
      read_process(p, sec, "zeta", n, 1, cfg.coeffs.zeta);
      read_process(p, sec, "varpi", d, 1, cfg.coeffs.varpi);
      if (auto it = e.find("H"); it != e.end())
        if (auto m = p.shaped(it->second, "[coefficients].H", n, n)) cfg.coeffs.H = *m;
      if (auto it = e.find("QT"); it != e.end())
        if (auto m = p.shaped(it->second, "[coefficients].QT", n, n)) cfg.coeffs.QT = *m;
    }
  }

  cfg.xi = InitialCondition::deterministic(Vec::Zero(n));
  if (sections.count("initial")) {
    const auto& e = sections["initial"].entries;
    if (auto it = e.find("mean"); it != e.end())
      if (auto m = p.shaped(it->second, "[initial].mean", n, 1)) cfg.xi.mean = *m;
    if (auto it = e.find("atoms"); it != e.end()) {
      if (auto m = p.matrix(it->second.value, it->second.line, "[initial].atoms")) {
        if (m->rows() != n)
          p.error(it->second.line, "[initial].atoms must have n = " + std::to_string(n) + " rows");
        else {
          cfg.xi.atoms = *m;
          cfg.xi.probs.assign(m->cols(), 1.0 / static_cast<double>(m->cols()));
        }
      }
    }
    if (auto it = e.find("probs"); it != e.end()) {
      if (auto m = p.shaped(it->second, "[initial].probs", cfg.xi.atoms.cols(), 1))
        cfg.xi.probs.assign(m->data(), m->data() + m->size());
    }
    try {
      cfg.xi.validate(n);
    } catch (const Error& err) {
      p.error(sections["initial"].line, std::string("[initial]: ") + err.what());
    }
  }

  cfg.has_simulation = sections.count("simulation") > 0;
  if (cfg.has_simulation) {
    const auto& e = sections["simulation"].entries;
    if (auto it = e.find("paths"); it != e.end())
      if (auto v = p.integer<int>(it->second, "[simulation].paths", 2)) cfg.sim.n_paths = *v;
    if (auto it = e.find("seed"); it != e.end())
      if (auto v = p.integer<std::uint64_t>(it->second, "[simulation].seed", 0))
        cfg.sim.seed = *v;
    if (auto it = e.find("common_noise"); it != e.end())
      if (auto v = p.integer<int>(it->second, "[simulation].common_noise", 1))
        cfg.sim.n_common_noise = *v;
    if (auto it = e.find("checkpoints"); it != e.end())
      if (auto v = p.integer<int>(it->second, "[simulation].checkpoints", 1))
        cfg.sim.checkpoints = *v;
  }

  if (cfg.mode != Mode::suite) {
    require(p, sections, "coefficients", cfg.mode);
    require(p, sections, "grid", cfg.mode);
  }
  if (cfg.mode == Mode::simulate) require(p, sections, "simulation", cfg.mode);

  if (!p.errors.empty()) {
    // Report in file order; messages without a line number go last.
    auto line_of = [](const std::string& m) {
      return m.rfind("line ", 0) == 0 ? std::atoi(m.c_str() + 5) : 1 << 30;
    };
    std::stable_sort(p.errors.begin(), p.errors.end(),
                     [&](const std::string& a, const std::string& b) { return line_of(a) < line_of(b); });
    throw ConfigError(p.errors);
  }
  return cfg;
}

namespace {

std::string real17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_matrix(const Mat& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (i) out += "; ";
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ' ';
      out += real17(m(i, j));
    }
  }
  return out;
}

template <class V>
std::string format_pieces(const std::vector<V>& ps) {
  std::string out;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (i) out += " | ";
    out += format_matrix(ps[i]);
  }
  return out;
}

template <class V>
void write_process(std::ostream& out, const std::string& key, const AffineProcess<V>& p) {
  out << key << " = " << format_pieces(p.base) << '\n';
  if (p.has_slope()) out << key << ".slope = " << format_pieces(p.slope) << '\n';
}

}  // namespace

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "mode = " << to_string(cfg.mode) << '\n';
  out << "output = " << cfg.output << '\n';
  if (cfg.has_coefficients) {
    const CoefficientSet& c = cfg.coeffs;
    out << "\n[coefficients]\n";
    out << "n = " << c.n << "\nd = " << c.d << '\n';
    write_process(out, "A", c.A);
    write_process(out, "F", c.F);
    write_process(out, "B", c.B);
    write_process(out, "S", c.S);
    write_process(out, "Q", c.Q);
    write_process(out, "R", c.R);
    write_process(out, "b", c.b);
    write_process(out, "D", c.D);
    write_process(out, "D0", c.D0);
    write_process(out, "zeta", c.zeta);
    write_process(out, "varpi", c.varpi);
    out << "H = " << format_matrix(c.H) << '\n';
    out << "QT = " << format_matrix(c.QT) << '\n';
  }
  out << "\n[initial]\n";
  out << "mean = " << format_matrix(cfg.xi.mean) << '\n';
  out << "atoms = " << format_matrix(cfg.xi.atoms) << '\n';
  out << "probs =";
  for (double p : cfg.xi.probs) out << ' ' << real17(p);
  out << '\n';
  if (cfg.has_grid) {
    out << "\n[grid]\n";
    out << "steps = " << cfg.grid.steps << '\n';
    out << "horizon = " << real17(cfg.grid.horizon) << '\n';
    out << "backend = " << to_string(cfg.grid.backend) << '\n';
  }
  if (cfg.has_simulation) {
    out << "\n[simulation]\n";
    out << "paths = " << cfg.sim.n_paths << '\n';
    out << "seed = " << cfg.sim.seed << '\n';
    out << "common_noise = " << cfg.sim.n_common_noise << '\n';
    out << "checkpoints = " << cfg.sim.checkpoints << '\n';
  }
  return out.str();
}

}  // namespace cmvlq::cli
