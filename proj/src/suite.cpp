#include "cmvlq/suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "cmvlq/decomposition.hpp"
#include "cmvlq/error.hpp"
#include "cmvlq/fbsde.hpp"
#include "cmvlq/instances.hpp"
#include "cmvlq/oracle.hpp"
#include "cmvlq/riccati.hpp"
#include "cmvlq/sim.hpp"

namespace cmvlq {

Metric at_most(std::string name, double value, double tolerance) {
  return {std::move(name), value, tolerance, std::isfinite(value) && value <= tolerance};
}

Metric at_least(std::string name, double value, double tolerance) {
  return {std::move(name), value, tolerance, std::isfinite(value) && value >= tolerance};
}

Metric above(std::string name, double value, double tolerance) {
  return {std::move(name), value, tolerance, std::isfinite(value) && value > tolerance};
}

bool CriterionResult::pass() const {
  if (metrics.empty()) return false;
  return std::all_of(metrics.begin(), metrics.end(), [](const Metric& m) { return m.pass; });
}

namespace {

constexpr int kDecompositionInstances = 50;
constexpr int kOracleInstances = 25;
constexpr int kPicardInstances = 10;
constexpr int kConvexityDirections = 100;
constexpr int kConvexitySamples = 40;

constexpr double kTolDecomposition = 1e-10;
constexpr double kTolLemma = 1e-10;
constexpr double kTolCostGap = 1e-9;
constexpr double kTolControlGap = 1e-8;
constexpr double kTolSplit = 1e-9;
constexpr double kTolConstraint = 1e-12;
constexpr double kTolStationarity = 1e-10;
constexpr double kPerturbation = 0.1;
constexpr double kSensitivityFloor = 1e-3;
constexpr double kTolTanh = 1e-8;
constexpr double kTolBarRiccati = 1e-12;
constexpr double kTolPicard = 1e-6;
constexpr int kPicardIterations = 200;
constexpr double kZ = 3.0;
constexpr double kTolDescent = 1e-10;
constexpr double kTolMargin = 1e-9;

// Instance families, each drawn from its own substream of the suite seed.
Instance decomposition_instance(const SuiteOptions& o, int i) {
  return random_instance(mix_seed(o.seed, 1000 + static_cast<std::uint64_t>(i)));
}

Instance oracle_instance(const SuiteOptions& o, int i) {
  InstanceOptions io;
  io.max_steps = 4;
  return random_instance(mix_seed(o.seed, 2000 + static_cast<std::uint64_t>(i)), io);
}

// Short horizons: the Picard map stops contracting on some longer ones.
Instance picard_instance(const SuiteOptions& o, int i) {
  InstanceOptions io;
  io.max_steps = 4;
  io.min_horizon = 0.1;
  io.max_horizon = 0.3;
  return random_instance(mix_seed(o.seed, 3000 + static_cast<std::uint64_t>(i)), io);
}

struct OracleCase {
  Instance inst;
  JointTree tree;
  DecompositionSolution dec;
};

OracleCase oracle_case(const SuiteOptions& o, int i) {
  Instance inst = oracle_instance(o, i);
  JointTree tree = JointTree::build(inst.grid, inst.xi.probs);
  DecompositionSolution dec = solve_decomposition(inst.coeffs, inst.xi, tree);
  return {std::move(inst), std::move(tree), std::move(dec)};
}

double relative(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

template <class Fn>
CriterionResult timed(int id, std::string title, Fn&& body) {
  auto t0 = std::chrono::steady_clock::now();
  CriterionResult r;
  r.id = id;
  r.title = std::move(title);
  body(r.metrics);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace

CriterionResult criterion_decomposition(const SuiteOptions& o) {
  return timed(1, "cost decomposition identity", [&](std::vector<Metric>& m) {
    double worst = 0.0;
    for (int i = 0; i < kDecompositionInstances; ++i) {
      Instance inst = decomposition_instance(o, i);
      JointTree tree = JointTree::build(inst.grid, inst.xi.probs);
      TreeProcess u = random_control(tree, inst.coeffs.d, mix_seed(inst.seed, 1));
      TreeProcess x = simulate_mft_state(inst.coeffs, inst.xi, u, tree);
      DecompositionCheck chk = check_decomposition(inst.coeffs, x, u, tree);
      worst = std::max(worst, chk.residual / std::max(1.0, std::abs(chk.J)));
    }
    m.push_back(at_most("c1.decomposition_relative_max", worst, kTolDecomposition));
  });
}

CriterionResult criterion_lemma(const SuiteOptions& o) {
  return timed(2, "lemma identities", [&](std::vector<Metric>& m) {
    LemmaReport worst;
    for (int i = 0; i < kDecompositionInstances; ++i) {
      Instance inst = decomposition_instance(o, i);
      JointTree tree = JointTree::build(inst.grid, inst.xi.probs);
      TreeProcess u = random_control(tree, inst.coeffs.d, mix_seed(inst.seed, 1));
      TreeProcess x = simulate_mft_state(inst.coeffs, inst.xi, u, tree);
      LemmaReport r = lemma_identities(inst.coeffs, x, u, tree);
      worst.zeta_term = std::max(worst.zeta_term, r.zeta_term);
      worst.varpi_term = std::max(worst.varpi_term, r.varpi_term);
      worst.r_term = std::max(worst.r_term, r.r_term);
      worst.s_term = std::max(worst.s_term, r.s_term);
      worst.q_term = std::max(worst.q_term, r.q_term);
    }
    m.push_back(at_most("c2.lemma_zeta", worst.zeta_term, kTolLemma));
    m.push_back(at_most("c2.lemma_varpi", worst.varpi_term, kTolLemma));
    m.push_back(at_most("c2.lemma_r", worst.r_term, kTolLemma));
    m.push_back(at_most("c2.lemma_s", worst.s_term, kTolLemma));
    m.push_back(at_most("c2.lemma_q", worst.q_term, kTolLemma));
  });
}

CriterionResult criterion_oracle(const SuiteOptions& o) {
  return timed(3, "oracle equivalence", [&](std::vector<Metric>& m) {
    double cost = 0.0, sup = 0.0, split = 0.0, kkt = 0.0;
    for (int i = 0; i < kOracleInstances; ++i) {
      OracleCase oc = oracle_case(o, i);
      const CoefficientSet& c = oc.inst.coeffs;
      OracleSolution full = solve_qp_exact(c, oc.inst.xi, oc.tree);
      OracleSolution bar = solve_bar_qp(c, oc.inst.xi, oc.tree);
      OracleSolution breve = solve_breve_qp(c, oc.inst.xi, oc.tree);
      GapReport gap = compare_solutions(oc.dec.control.u, oc.dec.J, full.u, full.J, oc.tree);
      cost = std::max(cost, gap.cost_gap);
      sup = std::max(sup, gap.sup_gap);
      split = std::max(split, relative(bar.J + breve.J, full.J));
      kkt = std::max(kkt, full.kkt_residual / (1.0 + full.linear_norm));
    }
    m.push_back(at_most("c3.cost_gap_relative_max", cost, kTolCostGap));
    m.push_back(at_most("c3.control_gap_sup_max", sup, kTolControlGap));
    m.push_back(at_most("c3.restricted_split_relative_max", split, kTolSplit));
    m.push_back(at_most("c3.oracle_kkt_relative_max", kkt, 1e-10));
  });
}

CriterionResult criterion_constraints(const SuiteOptions& o) {
  return timed(4, "breve constraint satisfaction", [&](std::vector<Metric>& m) {
    double cu = 0.0, cx = 0.0;
    for (int i = 0; i < kOracleInstances; ++i) {
      OracleCase oc = oracle_case(o, i);
      cu = std::max(cu, sup_norm(conditional_expectation_f0(oc.dec.breve.ubreve, oc.tree)));
      cx = std::max(cx, sup_norm(conditional_expectation_f0(oc.dec.breve.xbreve, oc.tree)));
    }
    m.push_back(at_most("c4.ce_ubreve_sup_max", cu, kTolConstraint));
    m.push_back(at_most("c4.ce_xbreve_sup_max", cx, kTolConstraint));
  });
}

CriterionResult criterion_stationarity(const SuiteOptions& o) {
  return timed(5, "stationarity", [&](std::vector<Metric>& m) {
    double bar = 0.0, breve = 0.0;
    double perturbed = std::numeric_limits<double>::infinity();
    for (int i = 0; i < kOracleInstances; ++i) {
      OracleCase oc = oracle_case(o, i);
      bar = std::max(bar, oc.dec.stationarity.bar);
      breve = std::max(breve, oc.dec.stationarity.breve);
      TreeProcess u = oc.dec.control.u;
      for (int k = 0; k < oc.tree.grid().steps; ++k) u.layer(k).array() += kPerturbation;
      StationarityResiduals r =
          verify_stationarity(oc.inst.coeffs, oc.dec.bar, oc.dec.breve, u, oc.tree);
      perturbed = std::min(perturbed, std::max(r.bar, r.breve));
    }
    m.push_back(at_most("c5.stationarity_bar_max", bar, kTolStationarity));
    m.push_back(at_most("c5.stationarity_breve_max", breve, kTolStationarity));
    m.push_back(above("c5.perturbed_residual_min", perturbed, kSensitivityFloor));
  });
}

CriterionResult criterion_riccati(const SuiteOptions&) {
  return timed(6, "riccati closed form", [&](std::vector<Metric>& m) {
    Instance inst = tanh_instance(1000);
    RiccatiSolution Pi = solve_pi(inst.coeffs, inst.grid, Backend::ode);
    double err = 0.0;
    for (int k = 0; k <= inst.grid.steps; ++k)
      err = std::max(err, std::abs(Pi.Pi.at(k)(0, 0) -
                                   std::tanh(inst.grid.horizon - inst.grid.time(k))));
    m.push_back(at_most("c6.pi_tanh_sup", err, kTolTanh));

    // H = F = 0: L must reproduce Π on both backends.
    double gap = 0.0;
    for (Backend b : {Backend::ode, Backend::tree}) {
      InstanceOptions io;
      io.random_coefficients = b == Backend::tree;
      io.max_steps = 5;
      Instance r = random_instance(mix_seed(42, b == Backend::ode ? 61 : 62), io);
      CoefficientSet c = r.coeffs;
      c.F = MatrixProcess::constant(Mat::Zero(c.n, c.n));
      c.H = Mat::Zero(c.n, c.n);
      TimeGrid grid = b == Backend::ode ? TimeGrid::make(200, c.horizon) : r.grid;
      RiccatiSolution P = solve_pi(c, grid, b);
      BarRiccatiSolution L = solve_l(bar_transform(c), grid, b);
      for (int k = 0; k <= grid.steps; ++k)
        for (int g = 0; g < P.Pi.nodes(k); ++g)
          gap = std::max(gap, (P.Pi.at(k, g) - L.L.at(k, g)).cwiseAbs().maxCoeff());
    }
    m.push_back(at_most("c6.l_minus_pi_sup", gap, kTolBarRiccati));
  });
}

CriterionResult criterion_picard(const SuiteOptions& o) {
  return timed(7, "extended maximum principle consistency", [&](std::vector<Metric>& m) {
    double gap = 0.0;
    int iterations = 0;
    PicardOptions po;
    po.max_iter = kPicardIterations;
    for (int i = 0; i < kPicardInstances; ++i) {
      Instance inst = picard_instance(o, i);
      JointTree tree = JointTree::build(inst.grid, inst.xi.probs);
      DecompositionSolution dec = solve_decomposition(inst.coeffs, inst.xi, tree);
      try {
        CoupledSolution cs = solve_coupled_mv_fbsde(inst.coeffs, inst.xi, tree, po);
        gap = std::max(gap, sup_norm(cs.u - dec.control.u));
        iterations = std::max(iterations, cs.iterations);
      } catch (const ConvergenceError&) {
        gap = std::numeric_limits<double>::infinity();
        iterations = std::max(iterations, kPicardIterations + 1);
      }
    }
    m.push_back(at_most("c7.picard_control_gap_sup_max", gap, kTolPicard));
    m.push_back(at_most("c7.picard_iterations_max", iterations, kPicardIterations));
  });
}

CriterionResult criterion_value_function(const SuiteOptions& o) {
  return timed(8, "value function and bellman principle", [&](std::vector<Metric>& m) {
    Instance inst = tanh_instance(o.mc_steps);
    RiccatiSolution Pi = solve_pi(inst.coeffs, inst.grid, Backend::ode);
    SimOptions so;
    so.n_paths = o.mc_paths;
    so.seed = mix_seed(o.seed, 4000);
    BreveValueStudy s = study_breve_value(inst.coeffs, Pi, inst.xi, o.mc_steps / 2, so);
    m.push_back(at_most("c8.value_abs_z", std::abs(s.value.zscore), kZ));
    m.push_back(at_most("c8.bellman_mid_abs_z", std::abs(s.bellman.zscore), kZ));
    m.push_back(above("c8.plus_sign_excess_z", s.signs.gap_sigma, kZ));
  });
}

CriterionResult criterion_convexity(const SuiteOptions& o) {
  return timed(9, "uniform convexity", [&](std::vector<Metric>& m) {
    double descent = -std::numeric_limits<double>::infinity();
    double margin_min = std::numeric_limits<double>::infinity();
    double ordering = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kOracleInstances; ++i) {
      OracleCase oc = oracle_case(o, i);
      const CoefficientSet& c = oc.inst.coeffs;
      std::mt19937_64 rng(mix_seed(oc.inst.seed, 9));
      std::uniform_real_distribution<double> mu(-2.0, 2.0);
      for (int j = 0; j < kConvexityDirections; ++j) {
        TreeProcess u = random_control(oc.tree, c.d, mix_seed(oc.inst.seed, 100 + j));
        u *= mu(rng);
        u += oc.dec.control.u;
        TreeProcess x = simulate_mft_state(c, oc.inst.xi, u, oc.tree);
        double dJ = eval_cost_mft(c, x, u, oc.tree) - oc.dec.J;
        descent = std::max(descent, -dJ);
      }
      ConvexityReport cr =
          estimate_convexity_margin(c, oc.tree, kConvexitySamples, mix_seed(oc.inst.seed, 10));
      margin_min = std::min({margin_min, cr.margin_mft, cr.margin_bar, cr.margin_breve});
      ordering = std::max(ordering, std::min(cr.margin_bar, cr.margin_breve) - cr.margin_mft);
    }
    m.push_back(at_most("c9.cost_descent_max", descent, kTolDescent));
    m.push_back(above("c9.margin_min", margin_min, 0.0));
    m.push_back(at_most("c9.margin_ordering_violation", ordering, kTolMargin));
  });
}

std::vector<CriterionResult> run_suite(const SuiteOptions& o) {
  return {criterion_decomposition(o), criterion_lemma(o),    criterion_oracle(o),
          criterion_constraints(o),    criterion_stationarity(o), criterion_riccati(o),
          criterion_picard(o),         criterion_value_function(o), criterion_convexity(o)};
}

}  // namespace cmvlq
