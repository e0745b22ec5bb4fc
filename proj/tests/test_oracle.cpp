#include <cmath>
#include <vector>

#include "doctest.h"
#include "support.hpp"

#include "cmvlq/decomposition.hpp"
#include "cmvlq/error.hpp"
#include "cmvlq/fbsde.hpp"
#include "cmvlq/instances.hpp"
#include "cmvlq/oracle.hpp"

using namespace cmvlq;
using namespace cmvlq::test;

namespace {

double pairing(const TreeProcess& a, const TreeProcess& b) {
  double s = 0.0;
  for (int k = 0; k < a.layers(); ++k) s += (a.layer(k).array() * b.layer(k).array()).sum();
  return s;
}

InstanceOptions small() {
  InstanceOptions io;
  io.max_steps = 3;
  return io;
}

}  // namespace

TEST_CASE("zero problem gives the zero minimiser") {
  CoefficientSet c = CoefficientSet::zeros(2, 2, 1.0);
  JointTree t = build_joint_tree(TimeGrid::make(2, 1.0));
  OracleSolution s = solve_qp_exact(c, InitialCondition::deterministic(Vec::Zero(2)), t);
  CHECK(sup_norm(s.u) == 0.0);
  CHECK(s.J == 0.0);
  CHECK(s.linear_norm == 0.0);
}

TEST_CASE("one step with terminal weight") {
  // J = ½(u² + (1 + u)²) is minimised at u = −½ with J = ¼.
  CoefficientSet c = scalar_zero();
  set(c.B, 1.0);
  c.QT = scalar(1.0);
  JointTree t = build_joint_tree(TimeGrid::make(1, 1.0));
  OracleSolution s = solve_qp_exact(c, InitialCondition::deterministic(scalar_vec(1.0)), t);
  CHECK(s.u.at(0, 0)(0) == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(s.J == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(s.dimension == 1);
}

TEST_CASE("oracle cost agrees with the tree cost evaluation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Instance inst = random_instance(seed, small());
    JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
    MftQuadratic f(inst.coeffs, inst.xi, t);
    TreeProcess u = random_control(t, inst.coeffs.d, seed);
    TreeProcess x = simulate_mft_state(inst.coeffs, inst.xi, u, t);
    double J = eval_cost_mft(inst.coeffs, x, u, t);
    CHECK(std::abs(f.cost(u) - J) <= 1e-12 * std::max(1.0, std::abs(J)));
  }
}

TEST_CASE("adjoint gradient matches central differences") {
  Instance inst = random_instance(7, small());
  JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
  MftQuadratic f(inst.coeffs, inst.xi, t);
  TreeProcess u = random_control(t, inst.coeffs.d, 1);
  TreeProcess g = f.gradient(u);
  const double h = 1e-6;
  for (std::uint64_t r = 0; r < 20; ++r) {
    TreeProcess v = random_control(t, inst.coeffs.d, 100 + r);
    double fd = (f.cost(u + h * v) - f.cost(u - h * v)) / (2 * h);
    double an = pairing(g, v);
    CHECK(std::abs(fd - an) <= 1e-6 * std::max(1.0, std::abs(an)));
  }
}

TEST_CASE("oracle and decomposition agree") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Instance inst = random_instance(seed, small());
    JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
    OracleSolution s = solve_qp_exact(inst.coeffs, inst.xi, t);
    DecompositionSolution dec = solve_decomposition(inst.coeffs, inst.xi, t);
    GapReport gap = compare_solutions(dec.control.u, dec.J, s.u, s.J, t);
    CHECK(gap.sup_gap <= 1e-8);
    CHECK(gap.cost_gap <= 1e-10);
    CHECK(s.kkt_residual <= 1e-10 * std::max(1.0, s.linear_norm));
  }
}

TEST_CASE("restricted problems recover the two parts") {
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    Instance inst = random_instance(seed, small());
    JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
    DecompositionSolution dec = solve_decomposition(inst.coeffs, inst.xi, t);
    OracleSolution full = solve_qp_exact(inst.coeffs, inst.xi, t);
    OracleSolution bar = solve_bar_qp(inst.coeffs, inst.xi, t);
    OracleSolution breve = solve_breve_qp(inst.coeffs, inst.xi, t);
    CHECK(sup_norm(bar.u - dec.bar.ubar) <= 1e-8);
    CHECK(sup_norm(breve.u - dec.breve.ubreve) <= 1e-8);
    CHECK(sup_norm(conditional_expectation_f0(breve.u, t)) <= 1e-12);
    CHECK(f0_adaptedness_defect(bar.u, t) <= 1e-14);
    CHECK(std::abs(bar.J + breve.J - full.J) <= 1e-10 * std::max(1.0, std::abs(full.J)));
  }
}

TEST_CASE("direct and conjugate gradient solutions coincide") {
  for (std::uint64_t seed = 30; seed < 34; ++seed) {
    Instance inst = random_instance(seed, small());
    JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
    OracleSolution a = solve_qp_exact(inst.coeffs, inst.xi, t, QpMethod::direct);
    OracleSolution b = solve_qp_exact(inst.coeffs, inst.xi, t, QpMethod::cg);
    CHECK(a.method == QpMethod::direct);
    CHECK(b.method == QpMethod::cg);
    CHECK(b.cg_iterations > 0);
    CHECK(sup_norm(a.u - b.u) <= 1e-8);
    CHECK(a.J == doctest::Approx(b.J).epsilon(1e-12));
  }
}

TEST_CASE("gap report") {
  Instance inst = random_instance(2, small());
  JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
  TreeProcess u = random_control(t, inst.coeffs.d, 3);
  GapReport same = compare_solutions(u, 1.5, u, 1.5, t);
  CHECK(same.sup_gap == 0.0);
  CHECK(same.l2_gap == 0.0);
  CHECK(same.cost_gap == 0.0);
  TreeProcess shift = fill(t, inst.coeffs.d, inst.grid.steps, Adaptedness::full,
                           [&](int, std::size_t) { return Vec::Constant(inst.coeffs.d, 1e-3); });
  GapReport g = compare_solutions(u + shift, 4.0, u, 2.0, t);
  CHECK(g.sup_gap == doctest::Approx(1e-3).epsilon(1e-9));
  CHECK(g.cost_gap == doctest::Approx(1.0));
}

TEST_CASE("oracle size limits") {
  CoefficientSet c = scalar_zero();
  JointTree t = build_joint_tree(TimeGrid::make(kMaxOracleSteps + 1, 1.0));
  try {
    solve_qp_exact(c, InitialCondition::deterministic(scalar_vec(0.0)), t);
    FAIL("expected a capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::capacity);
  }
  JointTree two = build_joint_tree(TimeGrid::make(2, 1.0), std::vector<double>{0.5, 0.5});
  CHECK_THROWS_AS(solve_qp_exact(c, InitialCondition::deterministic(scalar_vec(0.0)), two), Error);
}
