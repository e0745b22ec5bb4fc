#include <cmath>
#include <string>

#include "doctest.h"
#include "support.hpp"

#include "cmvlq/coeffs.hpp"
#include "cmvlq/error.hpp"
#include "cmvlq/instances.hpp"

using namespace cmvlq;
using namespace cmvlq::test;

TEST_CASE("identity-like scalar instance passes with unit margins") {
  CoefficientSet c = scalar_zero();
  set(c.Q, 1.0);
  c.QT = scalar(1.0);
  ValidationReport r = validate_coefficients(c, TimeGrid::make(4, 1.0));
  CHECK(r.delta_hat == 1.0);
  CHECK(r.schur_min == 1.0);
  CHECK(r.qt_min == 1.0);
  CHECK(r.pass);
}

TEST_CASE("cross term larger than the weights breaks the Schur condition") {
  CoefficientSet c = scalar_zero();
  set(c.Q, 1.0);
  set(c.S, 2.0);
  ValidationReport r = validate_coefficients(c, TimeGrid::make(4, 1.0));
  CHECK(r.schur_min == doctest::Approx(-3.0).epsilon(1e-15));
  CHECK_FALSE(r.pass);
}

TEST_CASE("singular control weight fails") {
  CoefficientSet c = CoefficientSet::zeros(1, 2, 1.0);
  Mat R = Mat::Zero(2, 2);
  R(0, 0) = 2.0;
  c.R = MatrixProcess::constant(R);
  ValidationReport r = validate_coefficients(c, TimeGrid::make(2, 1.0));
  CHECK(r.delta_hat == 0.0);
  CHECK_FALSE(r.pass);
}

TEST_CASE("asymmetric weights are rejected rather than symmetrised") {
  CoefficientSet c = CoefficientSet::zeros(2, 1, 1.0);
  Mat Q = Mat::Identity(2, 2);
  Q(0, 1) = 1e-9;
  c.Q = MatrixProcess::constant(Q);
  try {
    validate_coefficients(c, TimeGrid::make(2, 1.0));
    FAIL("expected a symmetry error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::symmetry);
  }
  Q(0, 1) = 1e-13;  // within tolerance
  c.Q = MatrixProcess::constant(Q);
  CHECK_NOTHROW(validate_coefficients(c, TimeGrid::make(2, 1.0)));
}

TEST_CASE("dimension errors name the offending field") {
  CoefficientSet c = CoefficientSet::zeros(2, 1, 1.0);
  c.B = MatrixProcess::constant(Mat::Zero(2, 2));
  try {
    validate_coefficients(c, TimeGrid::make(2, 1.0));
    FAIL("expected a dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dimension);
    CHECK(std::string(e.what()).rfind("B", 0) == 0);
  }
}

TEST_CASE("random coefficients beyond the tree cap are a capacity error") {
  CoefficientSet c = scalar_zero();
  c.A.slope = {scalar(0.1)};
  try {
    validate_coefficients(c, TimeGrid::make(kMaxTreeSteps + 1, 1.0));
    FAIL("expected a capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::capacity);
  }
}

TEST_CASE("validation is pathwise over W0 nodes") {
  // Q = 1 + 2·W0 turns negative on the lower branches of a 4-step tree.
  CoefficientSet c = scalar_zero();
  c.Q = MatrixProcess{{scalar(1.0)}, {scalar(2.0)}};
  ValidationReport r = validate_coefficients(c, TimeGrid::make(4, 1.0));
  CHECK(r.schur_min == doctest::Approx(1.0 - 2.0 * 3.0 * 0.5));
  CHECK_FALSE(r.pass);
}

TEST_CASE("affine process evaluation and pieces") {
  MatrixProcess p{{scalar(1.0), scalar(2.0)}, {scalar(0.5), scalar(-1.0)}};
  CHECK(p.at(0, 4, 2.0)(0, 0) == 2.0);
  CHECK(p.at(1, 4, 0.0)(0, 0) == 1.0);
  CHECK(p.at(2, 4, 1.0)(0, 0) == 1.0);
  CHECK(p.at(3, 4, -1.0)(0, 0) == 3.0);
  MatrixProcess q = p.resample(4);
  for (int k = 0; k < 4; ++k) CHECK(q.at(k, 4, 0.7)(0, 0) == p.at(k, 4, 0.7)(0, 0));
  CHECK_FALSE(p.deterministic());
  CHECK(MatrixProcess{{scalar(1.0)}, {scalar(0.0)}}.deterministic());
}

TEST_CASE("bar transform with H = 0 is the identity on the weights") {
  Instance inst = random_instance(5);
  CoefficientSet c = inst.coeffs;
  c.H = Mat::Zero(c.n, c.n);
  BarCoefficients cb = bar_transform(c);
  for (int k = 0; k < inst.grid.steps; ++k) {
    double w0 = 0.3 * k;
    BarStep b = cb.at(k, inst.grid.steps, w0);
    StepCoefficients s = c.at(k, inst.grid.steps, w0);
    CHECK(max_abs(b.Qbar - s.Q) <= 1e-15);
    CHECK(max_abs(b.Sbar - s.S) == 0.0);
    CHECK(max_abs(b.zetabar - s.zeta) == 0.0);
    CHECK(max_abs(b.Abar - (s.A + s.F)) <= 1e-15);
  }
  CHECK(max_abs(cb.QbarT - c.QT) <= 1e-15);
}

TEST_CASE("bar transform with H = I annihilates the weights") {
  Instance inst = random_instance(6);
  CoefficientSet c = inst.coeffs;
  c.H = Mat::Identity(c.n, c.n);
  BarCoefficients cb = bar_transform(c);
  BarStep b = cb.at(0, inst.grid.steps, 0.4);
  CHECK(max_abs(b.Qbar) == 0.0);
  CHECK(max_abs(b.Sbar) == 0.0);
  CHECK(max_abs(b.zetabar) == 0.0);
  CHECK(max_abs(cb.QbarT) == 0.0);
}

TEST_CASE("scalar bar transform arithmetic") {
  CoefficientSet c = scalar_zero();
  c.H = scalar(0.5);
  set(c.Q, 4.0);
  set(c.S, 2.0);
  set(c.zeta, 6.0);
  BarStep b = bar_transform(c).at(0, 1, 0.0);
  CHECK(b.Qbar(0, 0) == 1.0);
  CHECK(b.Sbar(0, 0) == 1.0);
  CHECK(b.zetabar(0) == 3.0);
}

TEST_CASE("bar transform preserves positive semidefiniteness") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Instance inst = random_instance(seed);
    BarCoefficients cb = bar_transform(inst.coeffs);
    for (int k = 0; k < inst.grid.steps; ++k) {
      BarStep b = cb.at(k, inst.grid.steps, 0.0);
      CHECK(min_eigenvalue(b.Qbar) >= -kTolPsd);
      CHECK(max_abs(b.Qbar - b.Qbar.transpose()) == 0.0);
    }
    CHECK(min_eigenvalue(cb.QbarT) >= -kTolPsd);
  }
}

TEST_CASE("bar transform of its own output with H = 0 is unchanged") {
  Instance inst = random_instance(8);
  BarCoefficients cb = bar_transform(inst.coeffs);
  CoefficientSet again = inst.coeffs;
  again.A = cb.Abar;
  again.F = MatrixProcess::constant(Mat::Zero(again.n, again.n));
  again.S = cb.Sbar;
  again.Q = cb.Qbar;
  again.zeta = cb.zetabar;
  again.QT = cb.QbarT;
  again.H = Mat::Zero(again.n, again.n);
  BarCoefficients twice = bar_transform(again);
  for (int k = 0; k < inst.grid.steps; ++k) {
    BarStep a = cb.at(k, inst.grid.steps, 0.2), b = twice.at(k, inst.grid.steps, 0.2);
    CHECK(max_abs(a.Qbar - b.Qbar) <= 1e-15);
    CHECK(max_abs(a.Sbar - b.Sbar) == 0.0);
    CHECK(max_abs(a.Abar - b.Abar) == 0.0);
  }
}

TEST_CASE("generated instances satisfy the convexity assumption at every node") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Instance inst = random_instance(seed);
    ValidationReport r = validate_coefficients(inst.coeffs, inst.grid);
    CHECK(r.pass);
    CHECK_NOTHROW(inst.xi.validate(inst.coeffs.n));
  }
}

TEST_CASE("instance generation is seed-deterministic") {
  Instance a = random_instance(77), b = random_instance(77);
  CHECK(a.grid == b.grid);
  CHECK(max_abs(a.coeffs.H - b.coeffs.H) == 0.0);
  CHECK(max_abs(a.xi.atoms - b.xi.atoms) == 0.0);
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}

TEST_CASE("initial condition checks") {
  InitialCondition xi = two_point(0.0, 1.0);
  CHECK_NOTHROW(xi.validate(1));
  CHECK(xi.covariance()(0, 0) == 1.0);
  xi.atoms(0, 0) = 2.0;
  CHECK_THROWS_AS(xi.validate(1), Error);
  CHECK_THROWS_AS(InitialCondition::deterministic(Vec::Zero(2)).validate(1), Error);
}
