#include "cmvlq/decomposition.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cmvlq/error.hpp"
#include "cmvlq/instances.hpp"

namespace cmvlq {

namespace {

void require_control(const TreeProcess& u, const JointTree& tree, int d, const char* what) {
  if (!u.compatible(tree) || u.dim() != d || u.layers() != tree.steps())
    throw Error(ErrorKind::dimension,
                std::string(what) + " must be a d-dimensional control process on the tree");
}

void require_state(const TreeProcess& x, const JointTree& tree, int n, const char* what) {
  if (!x.compatible(tree) || x.dim() != n || x.layers() != tree.steps() + 1)
    throw Error(ErrorKind::dimension,
                std::string(what) + " must be an n-dimensional state process on the tree");
}

double rel_defect(double lhs, double rhs) {
  return std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs));
}

}  // namespace

TreeProcess simulate_mft_state(const CoefficientSet& c, const InitialCondition& xi,
                               const TreeProcess& u, const JointTree& tree) {
  check_dimensions(c);
  xi.validate(c.n);
  if (xi.count() != tree.atoms())
    throw Error(ErrorKind::dimension, "tree has a different number of initial atoms");
  require_control(u, tree, c.d, "control");
  const TimeGrid& grid = tree.grid();
  const double dt = grid.dt();
  NodeCoefficients coef(c, grid);

  TreeProcess x(tree, c.n, grid.steps + 1, Adaptedness::full);
  for (int a = 0; a < tree.atoms(); ++a) x.layer(0).col(a) = xi.mean + xi.atoms.col(a);
  for (int k = 0; k < grid.steps; ++k) {
    Mat xbar = common_means(x, tree, k);
    const Mat& xk = x.layer(k);
    const Mat& uk = u.layer(k);
    Mat& next = x.layer(k + 1);
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      int g = tree.w0_id(k, i);
      const StepCoefficients& s = coef.at(k, g);
      auto col = static_cast<Eigen::Index>(i);
      Vec drift = xk.col(col) +
                  dt * (s.A * xk.col(col) + s.B * uk.col(col) + s.F * xbar.col(g) + s.b);
      for (int br = 0; br < 4; ++br)
        next.col(4 * col + br) = drift + tree.dw(br) * s.D + tree.dw0(br) * s.D0;
    }
  }
  return x;
}

CoefficientSet bar_as_mft(const BarCoefficients& cb) {
  CoefficientSet c = CoefficientSet::zeros(cb.n, cb.d, cb.horizon);
  c.A = cb.Abar;
  c.B = cb.B;
  c.S = cb.Sbar;
  c.Q = cb.Qbar;
  c.R = cb.R;
  c.b = cb.b;
  c.D0 = cb.D0;
  c.zeta = cb.zetabar;
  c.varpi = cb.varpi;
  c.QT = cb.QbarT;
  return c;
}

CoefficientSet breve_as_mft(const CoefficientSet& c) {
  CoefficientSet out = CoefficientSet::zeros(c.n, c.d, c.horizon);
  out.A = c.A;
  out.B = c.B;
  out.S = c.S;
  out.Q = c.Q;
  out.R = c.R;
  out.D = c.D;
  out.QT = c.QT;
  return out;
}

TreeProcess simulate_bar_state(const BarCoefficients& cb, const Vec& xi_bar,
                               const TreeProcess& v, const JointTree& tree) {
  InitialCondition ic;
  ic.mean = xi_bar;
  ic.atoms = Mat::Zero(cb.n, tree.atoms());
  for (int a = 0; a < tree.atoms(); ++a) ic.probs.push_back(tree.atom_prob(a));
  TreeProcess y = simulate_mft_state(bar_as_mft(cb), ic, v, tree);
  y.set_tag(Adaptedness::common);
  return y;
}

TreeProcess simulate_breve_state(const CoefficientSet& c, const InitialCondition& xi,
                                 const TreeProcess& alpha, const JointTree& tree) {
  InitialCondition ic = xi;
  ic.mean = Vec::Zero(c.n);
  return simulate_mft_state(breve_as_mft(c), ic, alpha, tree);
}

SplitPair split_pair(const TreeProcess& x, const TreeProcess& u, const JointTree& tree) {
  SplitPair s;
  s.xbar = conditional_expectation_f0(x, tree);
  s.ubar = conditional_expectation_f0(u, tree);
  s.xbreve = x - s.xbar;
  s.xbreve.set_tag(Adaptedness::full);
  s.ubreve = u - s.ubar;
  s.ubreve.set_tag(Adaptedness::full);
  return s;
}

double eval_cost_mft(const CoefficientSet& c, const TreeProcess& x, const TreeProcess& u,
                     const JointTree& tree) {
  check_dimensions(c);
  require_state(x, tree, c.n, "state");
  require_control(u, tree, c.d, "control");
  const TimeGrid& grid = tree.grid();
  const double dt = grid.dt();
  NodeCoefficients coef(c, grid);
  const bool has_h = c.H.cwiseAbs().maxCoeff() != 0.0;

  double running = 0.0;
  for (int k = 0; k < grid.steps; ++k) {
    Mat xbar = has_h ? common_means(x, tree, k) : Mat();
    double layer = 0.0;
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      auto col = static_cast<Eigen::Index>(i);
      int g = tree.w0_id(k, i);
      const StepCoefficients& s = coef.at(k, g);
      Vec e = x.layer(k).col(col);
      if (has_h) e -= c.H * xbar.col(g);
      Vec uk = u.layer(k).col(col);
      double val = e.dot(s.Q * e) + 2.0 * e.dot(s.S * uk) + uk.dot(s.R * uk) +
                   2.0 * s.zeta.dot(e) + 2.0 * s.varpi.dot(uk);
      layer += tree.prob(k, i) * val;
    }
    running += dt * layer;
  }
  const int N = grid.steps;
  Mat xbar = has_h ? common_means(x, tree, N) : Mat();
  double terminal = 0.0;
  for (std::size_t i = 0; i < tree.node_count(N); ++i) {
    Vec e = x.layer(N).col(static_cast<Eigen::Index>(i));
    if (has_h) e -= c.H * xbar.col(tree.w0_id(N, i));
    terminal += tree.prob(N, i) * e.dot(c.QT * e);
  }
  return 0.5 * (running + terminal);
}

double eval_cost_bar(const BarCoefficients& cb, const TreeProcess& y, const TreeProcess& v,
                     const JointTree& tree) {
  for (const TreeProcess* p : {&y, &v}) {
    double scale = std::max(1.0, sup_norm(*p));
    double defect = f0_adaptedness_defect(*p, tree);
    if (defect > kTolSymmetry * scale)
      throw Error(ErrorKind::adaptedness,
                  std::string(p == &y ? "bar state" : "bar control") +
                      " is not F0-adapted (defect " + std::to_string(defect) + ")");
  }
  return eval_cost_mft(bar_as_mft(cb), y, v, tree);
}

double eval_cost_breve(const CoefficientSet& c, const TreeProcess& z, const TreeProcess& alpha,
                       const JointTree& tree) {
  for (const TreeProcess* p : {&alpha, &z}) {
    double worst = 0.0;
    for (int k = 0; k < p->layers(); ++k)
      worst = std::max(worst, common_means(*p, tree, k).cwiseAbs().maxCoeff());
    if (worst > 1e-12 * std::max(1.0, sup_norm(*p)))
      throw Error(ErrorKind::constraint,
                  std::string("admissibility of the breve problem violated: E[") +
                      (p == &alpha ? "alpha" : "z") + " | F0] reaches " +
                      std::to_string(worst));
  }
  return eval_cost_mft(breve_as_mft(c), z, alpha, tree);
}

DecompositionCheck check_decomposition(const CoefficientSet& c, const TreeProcess& x,
                                       const TreeProcess& u, const JointTree& tree) {
  SplitPair sp = split_pair(x, u, tree);
  DecompositionCheck out;
  out.J = eval_cost_mft(c, x, u, tree);
  out.J_bar = eval_cost_bar(bar_transform(c), sp.xbar, sp.ubar, tree);
  out.J_breve = eval_cost_breve(c, sp.xbreve, sp.ubreve, tree);
  out.residual = std::abs(out.J - out.J_bar - out.J_breve);
  return out;
}

double LemmaReport::max() const {
  return std::max({zeta_term, varpi_term, r_term, s_term, q_term});
}

LemmaReport lemma_identities(const CoefficientSet& c, const TreeProcess& x,
                             const TreeProcess& u, const JointTree& tree) {
  check_dimensions(c);
  require_state(x, tree, c.n, "state");
  require_control(u, tree, c.d, "control");
  const TimeGrid& grid = tree.grid();
  const double dt = grid.dt();
  NodeCoefficients coef(c, grid);
  SplitPair sp = split_pair(x, u, tree);
  const Mat IH = Mat::Identity(c.n, c.n) - c.H;

  // Sums: [lhs, rhs] per identity.
  double z[2] = {0, 0}, w[2] = {0, 0}, r[2] = {0, 0}, s[2] = {0, 0}, q[2] = {0, 0};
  double qt[2] = {0, 0};
  for (int k = 0; k <= grid.steps; ++k) {
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      auto col = static_cast<Eigen::Index>(i);
      double p = tree.prob(k, i);
      Vec xb = sp.xbar.layer(k).col(col);
      Vec xr = sp.xbreve.layer(k).col(col);
      Vec e = x.layer(k).col(col) - c.H * xb;
      if (k == grid.steps) {
        qt[0] += p * e.dot(c.QT * e);
        qt[1] += p * (xr.dot(c.QT * xr) + xb.dot(IH.transpose() * c.QT * IH * xb));
        continue;
      }
      const StepCoefficients& cs = coef.at(k, tree.w0_id(k, i));
      const double pw = p * dt;
      Vec uk = u.layer(k).col(col);
      Vec ub = sp.ubar.layer(k).col(col);
      Vec ur = sp.ubreve.layer(k).col(col);
      Mat Sbar = IH.transpose() * cs.S;
      Mat Qbar = IH.transpose() * cs.Q * IH;
      Vec zetabar = IH.transpose() * cs.zeta;
      z[0] += pw * cs.zeta.dot(e);
      z[1] += pw * zetabar.dot(xb);
      w[0] += pw * cs.varpi.dot(uk);
      w[1] += pw * cs.varpi.dot(ub);
      r[0] += pw * uk.dot(cs.R * uk);
      r[1] += pw * (ur.dot(cs.R * ur) + ub.dot(cs.R * ub));
      s[0] += pw * e.dot(cs.S * uk);
      s[1] += pw * (xr.dot(cs.S * ur) + xb.dot(Sbar * ub));
      q[0] += pw * e.dot(cs.Q * e);
      q[1] += pw * (xr.dot(cs.Q * xr) + xb.dot(Qbar * xb));
    }
  }
  LemmaReport rep;
  rep.zeta_term = rel_defect(z[0], z[1]);
  rep.varpi_term = rel_defect(w[0], w[1]);
  rep.r_term = rel_defect(r[0], r[1]);
  rep.s_term = rel_defect(s[0], s[1]);
  rep.q_term = std::max(rel_defect(q[0], q[1]), rel_defect(qt[0], qt[1]));
  return rep;
}

double admissibility_defect(const CoefficientSet& c, const InitialCondition& xi,
                            const TreeProcess& v, const TreeProcess& alpha,
                            const JointTree& tree) {
  TreeProcess u = v + alpha;
  TreeProcess x = simulate_mft_state(c, xi, u, tree);
  TreeProcess y = simulate_bar_state(bar_transform(c), xi.mean, v, tree);
  TreeProcess z = simulate_breve_state(c, xi, alpha, tree);
  return sup_norm(x - (y + z));
}

TreeProcess random_control(const JointTree& tree, int d, std::uint64_t seed, Adaptedness tag) {
  TreeProcess u(tree, d, tree.steps(), tag);
  for (int k = 0; k < tree.steps(); ++k) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    std::normal_distribution<double> normal;
    if (tag == Adaptedness::full) {
      Mat& layer = u.layer(k);
      for (Eigen::Index i = 0; i < layer.cols(); ++i)
        for (int r = 0; r < d; ++r) layer(r, i) = normal(rng);
    } else {
      Mat groups(d, tree.w0_count(k));
      for (Eigen::Index g = 0; g < groups.cols(); ++g)
        for (int r = 0; r < d; ++r) groups(r, g) = normal(rng);
      for (std::size_t i = 0; i < tree.node_count(k); ++i)
        u.layer(k).col(static_cast<Eigen::Index>(i)) = groups.col(tree.w0_id(k, i));
    }
  }
  return u;
}

double homogeneous_cost(const CoefficientSet& c, const TreeProcess& u, const JointTree& tree) {
  CoefficientSet h = c;
  h.b = VectorProcess::constant(Vec::Zero(c.n));
  h.D = VectorProcess::constant(Vec::Zero(c.n));
  h.D0 = VectorProcess::constant(Vec::Zero(c.n));
  h.zeta = VectorProcess::constant(Vec::Zero(c.n));
  h.varpi = VectorProcess::constant(Vec::Zero(c.d));
  InitialCondition zero;
  zero.mean = Vec::Zero(c.n);
  zero.atoms = Mat::Zero(c.n, tree.atoms());
  for (int a = 0; a < tree.atoms(); ++a) zero.probs.push_back(tree.atom_prob(a));
  TreeProcess x = simulate_mft_state(h, zero, u, tree);
  return 2.0 * eval_cost_mft(h, x, u, tree);
}

ConvexityReport estimate_convexity_margin(const CoefficientSet& c, const JointTree& tree,
                                          int n_samples, std::uint64_t seed) {
  if (n_samples < 1)
    throw Error(ErrorKind::invalid_argument, "convexity margin needs at least one sample");
  const TimeGrid& grid = tree.grid();
  CoefficientSet bar = bar_as_mft(bar_transform(c));
  CoefficientSet breve = breve_as_mft(c);

  ConvexityReport rep;
  rep.samples = n_samples;
  rep.margin_mft = rep.margin_bar = rep.margin_breve = std::numeric_limits<double>::infinity();
  std::mt19937_64 angle_rng(mix_seed(seed, 0xa4c1e));
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  for (int s = 0; s < n_samples; ++s) {
    TreeProcess v = random_control(tree, c.d, mix_seed(seed, 2 * s), Adaptedness::common);
    v *= 1.0 / std::sqrt(inner_product(v, v, tree, grid));
    TreeProcess a = project_breve(random_control(tree, c.d, mix_seed(seed, 2 * s + 1)), tree);
    double a_norm = inner_product(a, a, tree, grid);
    if (a_norm > 0.0) a *= 1.0 / std::sqrt(a_norm);

    double theta = angle(angle_rng);
    double qb = homogeneous_cost(bar, v, tree);
    rep.margin_bar = std::min(rep.margin_bar, qb);
    TreeProcess u = std::cos(theta) * v;
    if (a_norm > 0.0) {
      double qr = homogeneous_cost(breve, a, tree);
      rep.margin_breve = std::min(rep.margin_breve, qr);
      u += std::sin(theta) * a;
    }
    double qm = homogeneous_cost(c, u, tree) / inner_product(u, u, tree, grid);
    rep.margin_mft = std::min(rep.margin_mft, qm);
  }
  return rep;
}

}  // namespace cmvlq
