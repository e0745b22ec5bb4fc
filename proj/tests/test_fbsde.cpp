#include <cmath>
#include <vector>

#include "doctest.h"
#include "support.hpp"

#include "cmvlq/decomposition.hpp"
#include "cmvlq/error.hpp"
#include "cmvlq/fbsde.hpp"
#include "cmvlq/instances.hpp"

using namespace cmvlq;
using namespace cmvlq::test;

namespace {

struct Case {
  Instance inst;
  JointTree tree;
  DecompositionSolution dec;
};

Case make_case(std::uint64_t seed, const InstanceOptions& io = {}) {
  Instance inst = random_instance(seed, io);
  JointTree tree = build_joint_tree(inst.grid, inst.xi.probs);
  DecompositionSolution dec = solve_decomposition(inst.coeffs, inst.xi, tree);
  return {inst, tree, dec};
}

InstanceOptions short_horizon() {
  InstanceOptions io;
  io.max_steps = 4;
  io.min_horizon = 0.1;
  io.max_horizon = 0.3;
  return io;
}

double cost_of(const Case& k, const TreeProcess& u) {
  TreeProcess x = simulate_mft_state(k.inst.coeffs, k.inst.xi, u, k.tree);
  return eval_cost_mft(k.inst.coeffs, x, u, k.tree);
}

}  // namespace

TEST_CASE("zero problem has the zero solution") {
  CoefficientSet c = CoefficientSet::zeros(2, 1, 1.0);
  InitialCondition xi = InitialCondition::deterministic(Vec::Zero(2));
  JointTree t = build_joint_tree(TimeGrid::make(3, 1.0));
  DecompositionSolution dec = solve_decomposition(c, xi, t);
  CHECK(sup_norm(dec.control.u) == 0.0);
  CHECK(sup_norm(dec.x) == 0.0);
  CHECK(sup_norm(dec.bar.p) == 0.0);
  CHECK(sup_norm(dec.breve.lambda) == 0.0);
  CHECK(dec.J == 0.0);
}

TEST_CASE("without idiosyncratic noise the breve state stays conditionally centred") {
  CoefficientSet c = scalar_zero();
  set(c.A, 0.4);
  set(c.B, 1.0);
  set(c.Q, 1.0);
  set(c.D0, 0.5);
  JointTree t = build_joint_tree(TimeGrid::make(4, 1.0), std::vector<double>{0.5, 0.5});
  DecompositionSolution dec = solve_decomposition(c, two_point(0.3), t);
  CHECK(sup_norm(conditional_expectation_f0(dec.breve.xbreve, t)) <= 1e-15);
  CHECK(sup_norm(conditional_expectation_f0(dec.breve.ubreve, t)) <= 1e-15);
}

TEST_CASE("optimality conditions and the adjoint representation hold") {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    Case k = make_case(seed);
    CHECK(k.dec.stationarity.bar <= 1e-10);
    CHECK(k.dec.stationarity.breve <= 1e-10);
    CHECK(k.dec.control.representation_gap <= 1e-10);
    CHECK(k.dec.bar.backward_residual <= 1e-9);
    CHECK(k.dec.breve.backward_residual <= 1e-9);
  }
}

TEST_CASE("the common part of the optimal control is the bar control") {
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    Case k = make_case(seed);
    TreeProcess ce = conditional_expectation_f0(k.dec.control.u, k.tree);
    CHECK(sup_norm(ce - k.dec.bar.ubar) <= 1e-12);
    CHECK(sup_norm(project_breve(k.dec.control.u, k.tree) - k.dec.breve.ubreve) <= 1e-12);
    TreeProcess adj = k.dec.breve.lambda_hat + k.dec.bar.p_hat;
    CHECK(sup_norm(conditional_expectation_f0(adj, k.tree) - k.dec.bar.p_hat) <= 1e-12);
  }
}

TEST_CASE("perturbing the optimal control never lowers the cost") {
  for (std::uint64_t seed = 40; seed < 45; ++seed) {
    Case k = make_case(seed);
    double J = cost_of(k, k.dec.control.u);
    CHECK(J == doctest::Approx(k.dec.J).epsilon(1e-13));
    for (int r = 0; r < 4; ++r) {
      TreeProcess v = random_control(k.tree, k.inst.coeffs.d, seed * 10 + r);
      for (double mu : {0.01, 0.1, 1.0}) CHECK(cost_of(k, k.dec.control.u + mu * v) >= J);
    }
  }
}

TEST_CASE("the cost along a perturbation is a parabola with zero slope") {
  // J(u* + μv) − J(u*) = ½μ²·(homogeneous quadratic form of v).
  for (std::uint64_t seed = 50; seed < 55; ++seed) {
    Case k = make_case(seed);
    TreeProcess v = random_control(k.tree, k.inst.coeffs.d, seed + 1);
    double J = cost_of(k, k.dec.control.u);
    double curvature = homogeneous_cost(k.inst.coeffs, v, k.tree);
    for (double mu : {0.01, 0.1, 1.0}) {
      double diff = cost_of(k, k.dec.control.u + mu * v) - J;
      double expect = 0.5 * mu * mu * curvature;
      CHECK(std::abs(diff - expect) <= 1e-9 * std::max(1.0, std::abs(J)));
    }
  }
}

TEST_CASE("martingale integrands match their feedback forms") {
  for (std::uint64_t seed = 60; seed < 70; ++seed) {
    Case k = make_case(seed);
    FeedFormDefects f = feedform_identities(k.inst.coeffs, k.dec.Pi, k.dec.L, k.dec.ell,
                                            k.dec.bar, k.dec.breve, k.tree);
    CHECK(f.q <= 1e-10);
    CHECK(f.beta <= 1e-10);
    CHECK(f.beta0 <= 1e-10);
  }
}

TEST_CASE("Picard on the zero problem stops after one sweep") {
  CoefficientSet c = CoefficientSet::zeros(1, 1, 1.0);
  JointTree t = build_joint_tree(TimeGrid::make(3, 1.0));
  CoupledSolution s = solve_coupled_mv_fbsde(c, InitialCondition::deterministic(Vec::Zero(1)), t);
  CHECK(s.iterations == 1);
  CHECK(sup_norm(s.u) == 0.0);
}

TEST_CASE("Picard reproduces the decomposition control on short horizons") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Case k = make_case(seed, short_horizon());
    CoupledSolution s = solve_coupled_mv_fbsde(k.inst.coeffs, k.inst.xi, k.tree);
    CHECK(sup_norm(s.u - k.dec.control.u) <= 1e-6);
    CHECK(s.residual_history.size() == static_cast<std::size_t>(s.iterations));
  }
}

TEST_CASE("Picard on each sub-problem reproduces its control") {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    Case k = make_case(seed, short_horizon());
    const CoefficientSet& c = k.inst.coeffs;

    InitialCondition mean_only = InitialCondition::deterministic(k.inst.xi.mean);
    JointTree t1 = build_joint_tree(k.inst.grid);
    DecompositionSolution d1 = solve_decomposition(c, mean_only, t1);
    CoupledSolution sb = solve_coupled_mv_fbsde(bar_as_mft(bar_transform(c)), mean_only, t1);
    CHECK(sup_norm(sb.u - d1.bar.ubar) <= 1e-8);

    InitialCondition centred = k.inst.xi;
    centred.mean.setZero();
    CoupledSolution sr = solve_coupled_mv_fbsde(breve_as_mft(c), centred, k.tree);
    CHECK(sup_norm(sr.u - k.dec.breve.ubreve) <= 1e-8);
  }
}

TEST_CASE("without mean-field terms Picard finds the classical feedback") {
  for (std::uint64_t seed = 20; seed < 24; ++seed) {
    Instance inst = random_instance(seed, short_horizon());
    CoefficientSet c = inst.coeffs;
    c.F = MatrixProcess::constant(Mat::Zero(c.n, c.n));
    c.H = Mat::Zero(c.n, c.n);
    c.D0 = VectorProcess::constant(Vec::Zero(c.n));
    c.b = VectorProcess::constant(Vec::Zero(c.n));
    c.zeta = VectorProcess::constant(Vec::Zero(c.n));
    c.varpi = VectorProcess::constant(Vec::Zero(c.d));
    JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
    CoupledSolution s = solve_coupled_mv_fbsde(c, inst.xi, t);
    RiccatiSolution P = solve_pi(c, inst.grid, Backend::tree);
    // u = −G⁻¹Mᵀx with the one-step pieces of the Π recursion.
    double worst = 0.0;
    for (int k = 0; k < inst.grid.steps; ++k)
      for (std::size_t i = 0; i < t.node_count(k); ++i) {
        int g = t.w0_id(k, i);
        StepCoefficients sc = c.at(k, inst.grid.steps, common_noise_value(inst.grid, k, g));
        DiscreteStep ds = discrete_step(sc.A, sc.B, sc.S, sc.R, P.Pi.next_mean(k, g),
                                        inst.grid.dt(), "test");
        Vec u = -ds.G_llt.solve(ds.M.transpose() * Vec(s.x.at(k, i)));
        worst = std::max(worst, (u - s.u.at(k, i)).cwiseAbs().maxCoeff());
      }
    CHECK(worst <= 1e-8);
  }
}

TEST_CASE("Picard argument and convergence errors") {
  Instance inst = random_instance(3);
  JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
  PicardOptions bad;
  bad.damping = 0.0;
  CHECK_THROWS_AS(solve_coupled_mv_fbsde(inst.coeffs, inst.xi, t, bad), Error);
  PicardOptions tight;
  tight.max_iter = 1;
  tight.tol = 0.0;
  try {
    solve_coupled_mv_fbsde(inst.coeffs, inst.xi, t, tight);
    FAIL("expected a convergence error");
  } catch (const ConvergenceError& e) {
    CHECK(e.history().size() == 1);
  }
  JointTree one = build_joint_tree(inst.grid);
  CHECK_THROWS_AS(solve_coupled_mv_fbsde(inst.coeffs, inst.xi, one), Error);
}
