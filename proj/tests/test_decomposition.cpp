#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "support.hpp"

#include "cmvlq/decomposition.hpp"
#include "cmvlq/error.hpp"
#include "cmvlq/instances.hpp"

using namespace cmvlq;
using namespace cmvlq::test;

namespace {

// Exhaustive summation over every (atom, increment history), written from
// the model equations without the library's tree operators. Histories are
// lists of (sign of ΔW⁰, sign of ΔW) with sign bit 1 meaning −√dt.
double brute_force_cost(const CoefficientSet& c, const InitialCondition& xi, int N, double T,
                        const TreeProcess& u) {
  struct Path {
    int atom;
    std::vector<int> b0, b;
    double prob;
    Vec x;
  };
  const double dt = T / N, sq = std::sqrt(dt);
  std::vector<Path> paths;
  for (int a = 0; a < xi.count(); ++a) paths.push_back({a, {}, {}, xi.probs[a], xi.mean + xi.atoms.col(a)});
  auto node_index = [](const Path& p) {
    std::size_t code = 0;
    for (std::size_t j = 0; j < p.b.size(); ++j) code = 4 * code + 2 * p.b0[j] + p.b[j];
    return (static_cast<std::size_t>(p.atom) << (2 * p.b.size())) + code;
  };
  auto w0_of = [&](const Path& p) {
    double w = 0.0;
    for (int s : p.b0) w += s ? -sq : sq;
    return w;
  };
  auto means = [&](const std::vector<Path>& ps) {
    std::map<std::vector<int>, std::pair<Vec, double>> m;
    for (const Path& p : ps) {
      auto& e = m[p.b0];
      if (e.first.size() == 0) e.first = Vec::Zero(c.n);
      e.first += p.prob * p.x;
      e.second += p.prob;
    }
    std::map<std::vector<int>, Vec> out;
    for (auto& [k, v] : m) out[k] = v.first / v.second;
    return out;
  };
  double J = 0.0;
  for (int k = 0; k <= N; ++k) {
    auto xbar = means(paths);
    std::vector<Path> next;
    for (const Path& p : paths) {
      Vec e = p.x - c.H * xbar[p.b0];
      if (k == N) {
        J += 0.5 * p.prob * e.dot(c.QT * e);
        continue;
      }
      StepCoefficients s = c.at(k, N, w0_of(p));
      Vec uk = u.at(k, node_index(p));
      J += 0.5 * dt * p.prob *
           (e.dot(s.Q * e) + 2 * e.dot(s.S * uk) + uk.dot(s.R * uk) + 2 * s.zeta.dot(e) +
            2 * s.varpi.dot(uk));
      for (int s0 = 0; s0 < 2; ++s0)
        for (int s1 = 0; s1 < 2; ++s1) {
          Path q = p;
          q.b0.push_back(s0);
          q.b.push_back(s1);
          q.prob *= 0.25;
          q.x = p.x + dt * (s.A * p.x + s.B * uk + s.F * xbar[p.b0] + s.b) +
                (s1 ? -sq : sq) * s.D + (s0 ? -sq : sq) * s.D0;
          next.push_back(q);
        }
    }
    paths = std::move(next);
  }
  return J;
}

CoefficientSet pure_noise() {
  CoefficientSet c = scalar_zero();
  set(c.D, 1.0);
  set(c.Q, 1.0);
  return c;
}

}  // namespace

TEST_CASE("split pair examples") {
  JointTree t = build_joint_tree(TimeGrid::make(2, 1.0), std::vector<double>{0.3, 0.7});
  TreeProcess x = random_control(t, 2, 1);
  TreeProcess common = random_control(t, 2, 2, Adaptedness::common);
  SplitPair a = split_pair(x, common, t);
  CHECK(sup_norm(a.ubar - common) <= 1e-15);
  CHECK(sup_norm(a.ubreve) <= 1e-15);
  TreeProcess centred = project_breve(random_control(t, 2, 3), t);
  SplitPair b = split_pair(x, centred, t);
  CHECK(sup_norm(b.ubar) <= 1e-15);
  CHECK(sup_norm(b.ubreve - centred) <= 1e-15);
  TreeProcess u = random_control(t, 2, 4);
  SplitPair s = split_pair(x, u, t);
  CHECK(sup_norm(s.ubar + s.ubreve - u) <= 1e-14);
  CHECK(sup_norm(s.xbar + s.xbreve - x) <= 1e-14);
  CHECK(sup_norm(conditional_expectation_f0(s.ubreve, t)) <= 1e-14);
}

TEST_CASE("zero instance costs zero") {
  CoefficientSet c = CoefficientSet::zeros(2, 1, 1.0);
  JointTree t = build_joint_tree(TimeGrid::make(3, 1.0));
  TreeProcess u(t, 1, 3, Adaptedness::full);
  TreeProcess x = simulate_mft_state(c, InitialCondition::deterministic(Vec::Zero(2)), u, t);
  CHECK(eval_cost_mft(c, x, u, t) == 0.0);
  DecompositionCheck d = check_decomposition(c, x, u, t);
  CHECK(d.J == 0.0);
  CHECK(d.J_bar == 0.0);
  CHECK(d.J_breve == 0.0);
  CHECK(d.residual == 0.0);
}

TEST_CASE("terminal-only one-step cost") {
  CoefficientSet c = scalar_zero();
  c.QT = scalar(1.0);
  JointTree t = build_joint_tree(TimeGrid::make(1, 1.0));
  TreeProcess u(t, 1, 1, Adaptedness::full);
  TreeProcess x = simulate_mft_state(c, InitialCondition::deterministic(scalar_vec(1.0)), u, t);
  CHECK(eval_cost_mft(c, x, u, t) == 0.5);
}

TEST_CASE("tree costs match exhaustive summation") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    InstanceOptions io;
    io.max_n = 1;
    io.max_d = 1;
    io.min_steps = 2;
    io.max_steps = 2;
    Instance inst = random_instance(seed, io);
    JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
    TreeProcess u = random_control(t, 1, seed + 50);
    TreeProcess x = simulate_mft_state(inst.coeffs, inst.xi, u, t);
    double J = eval_cost_mft(inst.coeffs, x, u, t);
    double ref = brute_force_cost(inst.coeffs, inst.xi, 2, inst.grid.horizon, u);
    CHECK(std::abs(J - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));

    // Bar and breve costs are the same summation on rewritten coefficients.
    BarCoefficients cb = bar_transform(inst.coeffs);
    TreeProcess v = random_control(t, 1, seed + 60, Adaptedness::common);
    TreeProcess y = simulate_bar_state(cb, inst.xi.mean, v, t);
    double Jb = eval_cost_bar(cb, y, v, t);
    double refb = brute_force_cost(bar_as_mft(cb), InitialCondition::deterministic(inst.xi.mean),
                                   2, inst.grid.horizon, v);
    CHECK(std::abs(Jb - refb) <= 1e-12 * std::max(1.0, std::abs(refb)));

    TreeProcess a = project_breve(random_control(t, 1, seed + 70), t);
    TreeProcess z = simulate_breve_state(inst.coeffs, inst.xi, a, t);
    double Jr = eval_cost_breve(inst.coeffs, z, a, t);
    InitialCondition centred = inst.xi;
    centred.mean.setZero();
    double refr = brute_force_cost(breve_as_mft(inst.coeffs), centred, 2, inst.grid.horizon, a);
    CHECK(std::abs(Jr - refr) <= 1e-12 * std::max(1.0, std::abs(refr)));
  }
}

TEST_CASE("with H = 0 and no idiosyncratic randomness the bar cost is the full cost") {
  CoefficientSet c = random_instance(9).coeffs;
  c.H = Mat::Zero(c.n, c.n);
  c.D = VectorProcess::constant(Vec::Zero(c.n));
  TimeGrid g = TimeGrid::make(3, c.horizon);
  JointTree t = build_joint_tree(g);
  TreeProcess v = random_control(t, c.d, 5, Adaptedness::common);
  Vec x0 = Vec::Constant(c.n, 0.4);
  TreeProcess x = simulate_mft_state(c, InitialCondition::deterministic(x0), v, t);
  BarCoefficients cb = bar_transform(c);
  TreeProcess y = simulate_bar_state(cb, x0, v, t);
  CHECK(std::abs(eval_cost_bar(cb, y, v, t) - eval_cost_mft(c, x, v, t)) <= 1e-12);
}

TEST_CASE("bar cost refuses non-adapted inputs, breve cost refuses uncentred ones") {
  Instance inst = random_instance(2);
  JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
  BarCoefficients cb = bar_transform(inst.coeffs);
  TreeProcess v = random_control(t, inst.coeffs.d, 1);
  TreeProcess y = simulate_bar_state(cb, inst.xi.mean, random_control(t, inst.coeffs.d, 2, Adaptedness::common), t);
  try {
    eval_cost_bar(cb, y, v, t);
    FAIL("expected an adaptedness error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::adaptedness);
  }
  TreeProcess a = random_control(t, inst.coeffs.d, 3);
  TreeProcess z = simulate_breve_state(inst.coeffs, inst.xi, project_breve(a, t), t);
  try {
    eval_cost_breve(inst.coeffs, z, a, t);
    FAIL("expected a constraint error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::constraint);
  }
}

TEST_CASE("pure-noise breve cost on the tree is a left Riemann sum of t") {
  // ½ Σ_k dt·E[z_k²] = ½ dt² Σ_{k<N} k = ¼(1 − 1/N), tending to ½∫_0^1 t dt = ¼.
  CoefficientSet c = pure_noise();
  for (int N : {1, 2, 5, 8}) {
    JointTree t = build_joint_tree(TimeGrid::make(N, 1.0));
    TreeProcess a(t, 1, N, Adaptedness::full);
    TreeProcess z = simulate_breve_state(c, InitialCondition::deterministic(scalar_vec(0.0)), a, t);
    CHECK(eval_cost_breve(c, z, a, t) == doctest::Approx(0.25 * (1.0 - 1.0 / N)).epsilon(1e-14));
  }
}

TEST_CASE("decomposition identity on generated instances") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Instance inst = random_instance(seed);
    JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
    TreeProcess u = random_control(t, inst.coeffs.d, seed);
    TreeProcess x = simulate_mft_state(inst.coeffs, inst.xi, u, t);
    DecompositionCheck d = check_decomposition(inst.coeffs, x, u, t);
    CHECK(d.residual <= 1e-10 * std::max(1.0, std::abs(d.J)));
    CHECK(lemma_identities(inst.coeffs, x, u, t).max() <= 1e-10);
  }
}

TEST_CASE("common controls leave only the uncontrolled breve cost") {
  Instance inst = random_instance(14);
  JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
  TreeProcess u = random_control(t, inst.coeffs.d, 8, Adaptedness::common);
  TreeProcess x = simulate_mft_state(inst.coeffs, inst.xi, u, t);
  DecompositionCheck d = check_decomposition(inst.coeffs, x, u, t);
  TreeProcess zero(t, inst.coeffs.d, inst.grid.steps, Adaptedness::full);
  TreeProcess z = simulate_breve_state(inst.coeffs, inst.xi, zero, t);
  CHECK(d.J_breve == doctest::Approx(eval_cost_breve(inst.coeffs, z, zero, t)).epsilon(1e-13));
  CHECK(d.J_breve >= 0.0);
  CHECK(d.residual <= 1e-10 * std::max(1.0, std::abs(d.J)));
}

TEST_CASE("admissibility: bar plus breve states rebuild the full state") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Instance inst = random_instance(seed);
    JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
    TreeProcess v = random_control(t, inst.coeffs.d, seed + 1, Adaptedness::common);
    TreeProcess a = project_breve(random_control(t, inst.coeffs.d, seed + 2), t);
    CHECK(admissibility_defect(inst.coeffs, inst.xi, v, a, t) <= 1e-12);
  }
}

TEST_CASE("convexity margins on cost-free and scaled instances") {
  JointTree t = build_joint_tree(TimeGrid::make(3, 1.0), std::vector<double>{0.5, 0.5});
  CoefficientSet c = CoefficientSet::zeros(2, 2, 1.0);
  c.A = MatrixProcess::constant(Mat::Identity(2, 2));
  c.B = MatrixProcess::constant(Mat::Ones(2, 2));
  ConvexityReport r = estimate_convexity_margin(c, t, 10, 1);
  CHECK(r.margin_mft == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(r.margin_bar == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(r.margin_breve == doctest::Approx(1.0).epsilon(1e-13));

  CoefficientSet s = scalar_zero();
  set(s.R, 2.0);
  ConvexityReport r2 = estimate_convexity_margin(s, t, 10, 2);
  CHECK(r2.margin_mft == doctest::Approx(2.0).epsilon(1e-13));
  CHECK(r2.margin_bar == doctest::Approx(2.0).epsilon(1e-13));
  CHECK(r2.margin_breve == doctest::Approx(2.0).epsilon(1e-13));
  CHECK_THROWS_AS(estimate_convexity_margin(s, t, 0, 2), Error);
}

TEST_CASE("margin ordering on generated instances") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Instance inst = random_instance(seed, InstanceOptions{.max_steps = 4});
    JointTree t = build_joint_tree(inst.grid, inst.xi.probs);
    ConvexityReport r = estimate_convexity_margin(inst.coeffs, t, 30, seed);
    CHECK(r.margin_bar > 0.0);
    CHECK(r.margin_breve > 0.0);
    CHECK(r.margin_mft >= std::min(r.margin_bar, r.margin_breve) - 1e-9);
  }
}
