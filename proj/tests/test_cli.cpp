#include <cmath>
#include <sstream>
#include <string>

#include "doctest.h"
#include "support.hpp"

#include "cmvlq/cli/config.hpp"
#include "cmvlq/cli/report.hpp"
#include "cmvlq/cli/run.hpp"
#include "cmvlq/error.hpp"
#include "cmvlq/instances.hpp"

using namespace cmvlq;
using namespace cmvlq::cli;
using namespace cmvlq::test;

namespace {

std::vector<std::string> config_messages(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.messages();
  }
  FAIL("expected a config error");
  return {};
}

bool mentions(const std::vector<std::string>& msgs, const std::string& needle) {
  for (const auto& m : msgs)
    if (m.find(needle) != std::string::npos) return true;
  return false;
}

const Metric* find_row(const RunResult& r, const std::string& name) {
  for (const Metric& m : r.rows)
    if (m.name == name) return &m;
  return nullptr;
}

}  // namespace

TEST_CASE("minimal config fills in defaults") {
  RunConfig cfg = parse_config("mode = validate\n[coefficients]\nR = 2\n[grid]\n");
  CHECK(cfg.mode == Mode::validate);
  CHECK(cfg.output == ".");
  CHECK(cfg.coeffs.n == 1);
  CHECK(cfg.coeffs.d == 1);
  CHECK(cfg.coeffs.R.base[0](0, 0) == 2.0);
  CHECK(max_abs(cfg.coeffs.A.base[0]) == 0.0);
  CHECK(cfg.grid.steps == 4);
  CHECK(cfg.grid.backend == Backend::tree);
  CHECK(cfg.xi.count() == 1);
  CHECK(max_abs(cfg.xi.mean) == 0.0);
}

TEST_CASE("missing control weight is named") {
  auto msgs = config_messages("mode = solve\n[coefficients]\nn = 1\n[grid]\n");
  CHECK(mentions(msgs, "[coefficients].R"));
  CHECK(mentions(msgs, "line 2"));
}

TEST_CASE("every problem is reported with its line") {
  auto msgs = config_messages(
      "mode = solve\n[coefficients]\nR = 1\nAA = 1\nQ = 1 2; 3\n[grid]\nsteps = -3\nsteps = 2\n");
  CHECK(mentions(msgs, "line 4"));
  CHECK(mentions(msgs, "line 5"));
  CHECK(mentions(msgs, "line 7"));
  CHECK(mentions(msgs, "line 8"));
  CHECK(msgs.size() >= 4);
}

TEST_CASE("malformed values and missing sections") {
  CHECK(mentions(config_messages("[coefficients]\nR = 1 x\n[grid]\n"), "line 2"));
  CHECK(mentions(config_messages("mode = simulate\n[coefficients]\nR = 1\n[grid]\n"),
                 "[simulation]"));
  CHECK(mentions(config_messages("mode = solve\n[coefficients]\nR = 1\n"), "[grid]"));
  CHECK(mentions(config_messages("mode = teleport\n"), "line 1"));
  CHECK(mentions(config_messages("[coefficients]\nR = 1\n[grid]\n[initial]\natoms = 1 -2\n"
                                 "probs = 0.5 0.5\n"),
                 "[initial]"));
  RunConfig cfg = parse_config("mode = simulate\n[grid]\n", Mode::suite);
  CHECK(cfg.mode == Mode::suite);
}

TEST_CASE("matrices round-trip bit for bit") {
  const char* text =
      "mode = compare\n"
      "output = out\n"
      "[coefficients]\n"
      "n = 2\nd = 1\n"
      "A = 0.1 0.2; -0.3 0.4 | 1 0; 0 1\n"
      "A.slope = 0 0; 0 0 | 0.25 0; 0 -0.125\n"
      "B = 1; 0.5\n"
      "R = 1.5\n"
      "Q = 2 0.1; 0.1 3\n"
      "b = 0.3 -0.2\n"
      "H = 0.5 0; 0 0.25\n"
      "QT = 1 0; 0 1\n"
      "[initial]\n"
      "mean = 0.1 0.2\n"
      "atoms = 1 -1; 0.5 -0.5\n"
      "probs = 0.5 0.5\n"
      "[grid]\nsteps = 3\nhorizon = 0.7\n";
  RunConfig a = parse_config(text);
  RunConfig b = parse_config(serialize_config(a));
  CHECK(serialize_config(b) == serialize_config(a));
  CHECK(a.coeffs.A.pieces() == 2);
  CHECK(a.coeffs.A.slope[1](1, 1) == -0.125);
  CHECK(b.coeffs.A.base[0] == a.coeffs.A.base[0]);
  CHECK(b.coeffs.H == a.coeffs.H);
  CHECK(b.xi.atoms == a.xi.atoms);
  CHECK(b.grid.horizon == 0.7);
}

TEST_CASE("reals keep seventeen digits") {
  CHECK(format_real(0.1) == "0.10000000000000001");
  CHECK(format_real(std::nan("")) == "nan");
  CHECK(format_real(-INFINITY) == "-inf");
  std::ostringstream out;
  write_report(out, {info("a", 1.0), at_most("b", 2.0, 1.0)});
  CHECK(out.str() == "metric,value,tolerance,pass\na,1,,true\nb,2,1,false\n");
  CHECK_FALSE(all_pass({info("a", 1.0), at_most("b", 2.0, 1.0)}));
}

TEST_CASE("validate mode on a passing instance") {
  RunConfig cfg = parse_config("mode = validate\n[coefficients]\nR = 1\nQ = 1\n[grid]\n");
  RunResult r = execute(cfg);
  CHECK(r.pass());
  REQUIRE(find_row(r, "validate.delta_hat") != nullptr);
  CHECK(find_row(r, "validate.delta_hat")->value == 1.0);
}

TEST_CASE("compare mode on a generated instance written as a config") {
  InstanceOptions io;
  io.max_steps = 3;
  Instance inst = random_instance(21, io);
  RunConfig cfg;
  cfg.mode = Mode::compare;
  cfg.has_coefficients = true;
  cfg.has_grid = true;
  cfg.coeffs = inst.coeffs;
  cfg.xi = inst.xi;
  cfg.grid.steps = inst.grid.steps;
  cfg.grid.horizon = inst.grid.horizon;
  RunConfig parsed = parse_config(serialize_config(cfg));
  RunResult r = execute(parsed);
  CHECK(r.pass());
  REQUIRE(find_row(r, "compare.control_gap_sup") != nullptr);
  CHECK(find_row(r, "compare.control_gap_sup")->value <= 1e-8);
  CHECK(find_row(r, "compare.J")->value ==
        doctest::Approx(find_row(r, "compare.J_oracle")->value).epsilon(1e-10));
}

TEST_CASE("oracle mode needs the tree backend") {
  RunConfig cfg = parse_config(
      "mode = oracle\n[coefficients]\nR = 1\n[grid]\nbackend = ode\nsteps = 20\n");
  CHECK_THROWS_AS(execute(cfg), Error);
}

TEST_CASE("simulate mode writes checkpoints") {
  RunConfig cfg = parse_config(
      "mode = simulate\n[coefficients]\nR = 1\nB = 1\nQ = 1\nD = 0.5\n"
      "[initial]\natoms = 1 -1\nprobs = 0.5 0.5\n"
      "[grid]\nbackend = ode\nsteps = 100\n"
      "[simulation]\npaths = 4000\nseed = 3\ncheckpoints = 5\n");
  RunResult r = execute(cfg);
  CHECK(r.pass());
  REQUIRE(r.checkpoints_csv.has_value());
  CHECK(r.checkpoints_csv->find('\n') != std::string::npos);
  REQUIRE(find_row(r, "simulate.breve_value_abs_z") != nullptr);
}
