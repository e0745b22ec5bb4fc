#include "cmvlq/cli/run.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmvlq/cli/report.hpp"
#include "cmvlq/decomposition.hpp"
#include "cmvlq/error.hpp"
#include "cmvlq/fbsde.hpp"
#include "cmvlq/oracle.hpp"
#include "cmvlq/sim.hpp"

namespace cmvlq::cli {

bool RunResult::pass() const { return all_pass(rows); }

namespace {

constexpr double kTolDecomposition = 1e-10;
constexpr double kTolStationarity = 1e-10;
constexpr double kTolCostGap = 1e-9;
constexpr double kTolControlGap = 1e-8;
constexpr double kTolSplit = 1e-9;
constexpr double kTolKkt = 1e-10;
constexpr double kTolConstraint = 1e-12;
constexpr double kTolFeedForm = 1e-10;
constexpr double kConditionalZ = 4.0;
constexpr double kValueZ = 3.0;
constexpr int kConvexitySamples = 40;

class Phases {
 public:
  explicit Phases(RunResult& r) : r_(r), t0_(std::chrono::steady_clock::now()) {}
  void mark(const std::string& phase) {
    auto t = std::chrono::steady_clock::now();
    r_.timing.emplace_back(phase, std::chrono::duration<double>(t - t0_).count());
    t0_ = t;
  }

 private:
  RunResult& r_;
  std::chrono::steady_clock::time_point t0_;
};

std::string entry_name(const std::string& base, Eigen::Index i, Eigen::Index j) {
  return base + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
}

void add_matrix(std::vector<Metric>& rows, const std::string& base, const Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) rows.push_back(info(entry_name(base, i, j), m(i, j)));
}

double relative(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

void run_validate(const RunConfig& cfg, RunResult& r) {
  ValidationReport v = validate_coefficients(cfg.coeffs, cfg.time_grid());
  r.rows.push_back(above("validate.delta_hat", v.delta_hat, 0.0));
  r.rows.push_back(at_least("validate.schur_min", v.schur_min, -kTolPsd));
  r.rows.push_back(at_least("validate.qt_min", v.qt_min, -kTolPsd));
}

void require_valid(const RunConfig& cfg) {
  ValidationReport v = validate_coefficients(cfg.coeffs, cfg.time_grid());
  if (!v.pass)
    throw Error(ErrorKind::invalid_argument,
                "coefficients fail the convexity assumption (delta_hat " +
                    format_real(v.delta_hat) + ", schur_min " + format_real(v.schur_min) +
                    ", qt_min " + format_real(v.qt_min) + ")");
}

void require_tree(const RunConfig& cfg) {
  if (cfg.grid.backend != Backend::tree)
    throw Error(ErrorKind::invalid_argument,
                std::string("mode ") + std::string(to_string(cfg.mode)) + " needs backend = tree");
}

void solve_tree(const RunConfig& cfg, RunResult& r, Phases& ph) {
  const CoefficientSet& c = cfg.coeffs;
  JointTree tree = JointTree::build(cfg.time_grid(), cfg.xi.probs);
  DecompositionSolution s = solve_decomposition(c, cfg.xi, tree);
  ph.mark("decomposition");
  r.rows.push_back(info("solve.J", s.J));
  r.rows.push_back(info("solve.J_bar", s.J_bar));
  r.rows.push_back(info("solve.J_breve", s.J_breve));
  r.rows.push_back(at_most("solve.decomposition_residual", std::abs(s.J - s.J_bar - s.J_breve),
                           kTolDecomposition * std::max(1.0, std::abs(s.J))));
  r.rows.push_back(at_most("solve.stationarity_bar", s.stationarity.bar, kTolStationarity));
  r.rows.push_back(at_most("solve.stationarity_breve", s.stationarity.breve, kTolStationarity));
  r.rows.push_back(at_most("solve.backward_residual_bar", s.bar.backward_residual,
                           kTolBackwardResidual));
  r.rows.push_back(at_most("solve.backward_residual_breve", s.breve.backward_residual,
                           kTolBackwardResidual));
  r.rows.push_back(at_most("solve.representation_gap", s.control.representation_gap,
                           kTolRepresentation));
  FeedFormDefects ff = feedform_identities(c, s.Pi, s.L, s.ell, s.bar, s.breve, tree);
  r.rows.push_back(at_most("solve.feedform_q", ff.q, kTolFeedForm));
  r.rows.push_back(at_most("solve.feedform_beta", ff.beta, kTolFeedForm));
  r.rows.push_back(at_most("solve.feedform_beta0", ff.beta0, kTolFeedForm));
  r.rows.push_back(at_most("solve.ce_ubreve",
                           sup_norm(conditional_expectation_f0(s.breve.ubreve, tree)),
                           kTolConstraint));
  r.rows.push_back(at_most("solve.ce_xbreve",
                           sup_norm(conditional_expectation_f0(s.breve.xbreve, tree)),
                           kTolConstraint));
  ConvexityReport cr = estimate_convexity_margin(c, tree, kConvexitySamples, cfg.sim.seed);
  ph.mark("convexity");
  r.rows.push_back(above("solve.margin_mft", cr.margin_mft, 0.0));
  r.rows.push_back(above("solve.margin_bar", cr.margin_bar, 0.0));
  r.rows.push_back(above("solve.margin_breve", cr.margin_breve, 0.0));
  // The coupled Picard iteration is a cross-check that may diverge on long
  // horizons; it is reported for information.
  try {
    CoupledSolution cs = solve_coupled_mv_fbsde(c, cfg.xi, tree);
    r.rows.push_back(info("solve.picard_iterations", cs.iterations));
    r.rows.push_back(info("solve.picard_control_gap", sup_norm(cs.u - s.control.u)));
  } catch (const ConvergenceError& e) {
    r.rows.push_back(info("solve.picard_iterations", static_cast<double>(e.history().size())));
    r.rows.push_back(info("solve.picard_control_gap", std::numeric_limits<double>::infinity()));
  }
  ph.mark("picard");
}

void solve_ode(const RunConfig& cfg, RunResult& r, Phases& ph) {
  const CoefficientSet& c = cfg.coeffs;
  const TimeGrid grid = cfg.time_grid();
  RiccatiSolution Pi = solve_pi(c, grid, Backend::ode);
  BarCoefficients cb = bar_transform(c);
  BarRiccatiSolution L = solve_l(cb, grid, Backend::ode);
  OffsetSolution ell = solve_offset(cb, L, grid, Backend::ode);
  ph.mark("riccati");
  double pi_min = INFINITY, l_min = INFINITY;
  for (int k = 0; k <= grid.steps; ++k) {
    pi_min = std::min(pi_min, min_eigenvalue(Pi.Pi.at(k)));
    l_min = std::min(l_min, min_eigenvalue(L.L.at(k)));
  }
  r.rows.push_back(at_least("solve.pi_min_eigenvalue", pi_min, -kTolPsd));
  r.rows.push_back(at_least("solve.l_min_eigenvalue", l_min, -kTolPsd));
  r.rows.push_back(info("solve.breve_value",
                        0.5 * (Pi.Pi.at(0) * cfg.xi.covariance()).trace() +
                            diffusion_value(c, Pi, 0)));
  add_matrix(r.rows, "solve.pi0", Pi.Pi.at(0));
  add_matrix(r.rows, "solve.l0", L.L.at(0));
  add_matrix(r.rows, "solve.ell0", ell.ell.at(0));
}

void run_oracle(const RunConfig& cfg, RunResult& r, Phases& ph) {
  require_tree(cfg);
  require_valid(cfg);
  JointTree tree = JointTree::build(cfg.time_grid(), cfg.xi.probs);
  OracleSolution full = solve_qp_exact(cfg.coeffs, cfg.xi, tree);
  ph.mark("oracle");
  OracleSolution bar = solve_bar_qp(cfg.coeffs, cfg.xi, tree);
  OracleSolution breve = solve_breve_qp(cfg.coeffs, cfg.xi, tree);
  ph.mark("restricted_oracles");
  r.rows.push_back(info("oracle.J", full.J));
  r.rows.push_back(info("oracle.J_bar", bar.J));
  r.rows.push_back(info("oracle.J_breve", breve.J));
  r.rows.push_back(info("oracle.dimension", full.dimension));
  r.rows.push_back(info("oracle.cg_iterations", full.cg_iterations));
  r.rows.push_back(at_most("oracle.kkt_relative", full.kkt_residual / (1.0 + full.linear_norm),
                           kTolKkt));
  r.rows.push_back(at_most("oracle.split_relative", relative(bar.J + breve.J, full.J), kTolSplit));
}

void run_compare(const RunConfig& cfg, RunResult& r, Phases& ph) {
  require_tree(cfg);
  require_valid(cfg);
  JointTree tree = JointTree::build(cfg.time_grid(), cfg.xi.probs);
  DecompositionSolution s = solve_decomposition(cfg.coeffs, cfg.xi, tree);
  ph.mark("decomposition");
  OracleSolution full = solve_qp_exact(cfg.coeffs, cfg.xi, tree);
  OracleSolution bar = solve_bar_qp(cfg.coeffs, cfg.xi, tree);
  OracleSolution breve = solve_breve_qp(cfg.coeffs, cfg.xi, tree);
  ph.mark("oracle");
  GapReport gap = compare_solutions(s.control.u, s.J, full.u, full.J, tree);
  r.rows.push_back(info("compare.J", s.J));
  r.rows.push_back(info("compare.J_oracle", full.J));
  r.rows.push_back(at_most("compare.cost_gap_relative", gap.cost_gap, kTolCostGap));
  r.rows.push_back(at_most("compare.control_gap_sup", gap.sup_gap, kTolControlGap));
  r.rows.push_back(info("compare.control_gap_l2", gap.l2_gap));
  r.rows.push_back(at_most("compare.split_relative", relative(bar.J + breve.J, full.J), kTolSplit));
  r.rows.push_back(at_most("compare.bar_cost_gap_relative", relative(s.J_bar, bar.J), kTolCostGap));
  r.rows.push_back(
      at_most("compare.breve_cost_gap_relative", relative(s.J_breve, breve.J), kTolCostGap));
  r.rows.push_back(at_most("compare.stationarity_bar", s.stationarity.bar, kTolStationarity));
  r.rows.push_back(at_most("compare.stationarity_breve", s.stationarity.breve, kTolStationarity));
}

std::string checkpoint_table(const PathEnsemble& ens) {
  std::ostringstream out;
  out << "checkpoint,step,time,quantity,component,mean,se\n";
  auto emit = [&](std::size_t cp, const std::string& q, Eigen::Index comp, const Vec& v) {
    ValueEstimate e = summarize(v);
    int k = ens.checkpoint_steps[cp];
    out << cp << ',' << k << ',' << format_real(ens.grid.time(k)) << ',' << q << ',' << comp
        << ',' << format_real(e.mean) << ',' << format_real(e.se) << '\n';
  };
  for (std::size_t cp = 0; cp < ens.checkpoint_steps.size(); ++cp) {
    Mat diff = ens.x[cp] - ens.xbar[cp];
    for (Eigen::Index i = 0; i < diff.rows(); ++i) {
      emit(cp, "x", i, ens.x[cp].row(i).transpose());
      emit(cp, "xbar", i, ens.xbar[cp].row(i).transpose());
      emit(cp, "x_minus_xbar", i, diff.row(i).transpose());
    }
    if (ens.checkpoint_steps[cp] < ens.grid.steps)
      for (Eigen::Index i = 0; i < ens.u[cp].rows(); ++i)
        emit(cp, "u", i, ens.u[cp].row(i).transpose());
    emit(cp, "running_cost", 0, ens.running_cost[cp]);
  }
  return out.str();
}

void run_simulate(const RunConfig& cfg, RunResult& r, Phases& ph) {
  require_valid(cfg);
  const CoefficientSet& c = cfg.coeffs;
  const TimeGrid grid = cfg.time_grid();
  const Backend b = cfg.grid.backend;
  RiccatiSolution Pi = solve_pi(c, grid, b);
  BarCoefficients cb = bar_transform(c);
  BarRiccatiSolution L = solve_l(cb, grid, b);
  OffsetSolution ell = solve_offset(cb, L, grid, b);
  OptimalPolicy policy = make_policy(c, Pi, L, ell, grid);
  ph.mark("riccati");
  PathEnsemble ens = simulate_forward(policy, c, cfg.xi, cfg.sim);
  ph.mark("simulate");
  ValueEstimate cost = estimate_cost(ens);
  r.rows.push_back(info("simulate.cost_mean", cost.mean));
  r.rows.push_back(info("simulate.cost_se", cost.se));
  r.rows.push_back(
      at_most("simulate.conditional_zero_max_z", conditional_zero_zscore(ens), kConditionalZ));
  const double N = grid.steps;
  r.rows.push_back(at_most("simulate.increment_mean_w", std::abs(ens.increment_mean_w),
                           4.0 / std::sqrt(cfg.sim.n_paths * N)));
  r.rows.push_back(at_most("simulate.increment_mean_w0", std::abs(ens.increment_mean_w0),
                           4.0 / std::sqrt(cfg.sim.n_common_noise * N)));
  if (b == Backend::ode) {
    ValueCheck v = check_value_function(c, Pi, cfg.xi, cfg.sim);
    ph.mark("value_check");
    r.rows.push_back(info("simulate.breve_value_estimate", v.estimate.mean));
    r.rows.push_back(info("simulate.breve_value_reference", v.reference));
    r.rows.push_back(at_most("simulate.breve_value_abs_z", std::abs(v.zscore), kValueZ));
  }
  r.checkpoints_csv = checkpoint_table(ens);
}

void run_suite_mode(const RunConfig& cfg, RunResult& r) {
  SuiteOptions so;
  so.seed = cfg.sim.seed;
  so.mc_paths = cfg.sim.n_paths;
  for (const CriterionResult& cr : run_suite(so)) {
    r.rows.insert(r.rows.end(), cr.metrics.begin(), cr.metrics.end());
    r.timing.emplace_back("c" + std::to_string(cr.id), cr.seconds);
  }
}

}  // namespace

RunResult execute(const RunConfig& cfg) {
  RunResult r;
  Phases ph(r);
  switch (cfg.mode) {
    case Mode::validate: run_validate(cfg, r); break;
    case Mode::solve:
      require_valid(cfg);
      if (cfg.grid.backend == Backend::tree) solve_tree(cfg, r, ph);
      else solve_ode(cfg, r, ph);
      break;
    case Mode::oracle: run_oracle(cfg, r, ph); break;
    case Mode::compare: run_compare(cfg, r, ph); break;
    case Mode::simulate: run_simulate(cfg, r, ph); break;
    case Mode::suite: run_suite_mode(cfg, r); break;
  }
  return r;
}

int run(const RunConfig& cfg, std::ostream& log) {
  RunResult r = execute(cfg);
  std::filesystem::path dir(cfg.output);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + cfg.output + ": " + ec.message());
  write_report_file((dir / "report.csv").string(), r.rows);
  {
    std::ofstream t(dir / "timing.csv", std::ios::binary);
    t << "phase,seconds\n";
    for (const auto& [phase, sec] : r.timing) t << phase << ',' << format_real(sec) << '\n';
    if (!t) throw Error(ErrorKind::io, "cannot write timing.csv in " + cfg.output);
  }
  if (r.checkpoints_csv) {
    std::ofstream out(dir / "checkpoints.csv", std::ios::binary);
    out << *r.checkpoints_csv;
    if (!out) throw Error(ErrorKind::io, "cannot write checkpoints.csv in " + cfg.output);
  }
  for (const Metric& m : r.rows)
    log << (m.pass ? "PASS " : "FAIL ") << m.name << " = " << format_real(m.value) << '\n';
  log << (r.pass() ? "all checks passed" : "some checks failed") << " (" << r.rows.size()
      << " metrics, report in " << (dir / "report.csv").string() << ")\n";
  return r.pass() ? 0 : 1;
}

}  // namespace cmvlq::cli
