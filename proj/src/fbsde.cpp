#include "cmvlq/fbsde.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmvlq/decomposition.hpp"
#include "cmvlq/error.hpp"

namespace cmvlq {

namespace {

struct Gain {
  Mat K;
  Vec kappa;
};

std::string node_name(int k, int j) {
  return "step " + std::to_string(k) + " node " + std::to_string(j);
}

Gain breve_gain(const CoefficientSet& c, const RiccatiSolution& Pi, int k, int j) {
  const TimeGrid& grid = Pi.Pi.grid();
  const int N = grid.steps;
  double w0 = Pi.backend() == Backend::tree ? common_noise_value(grid, k, j) : 0.0;
  Mat A = c.A.at(k, N, w0), B = c.B.at(k, N, w0), S = c.S.at(k, N, w0), R = c.R.at(k, N, w0);
  if (Pi.backend() == Backend::ode) {
    Mat rhs = (Pi.Pi.at(k) * B + S).transpose();
    return Gain{R.llt().solve(rhs), Vec::Zero(c.d)};
  }
  DiscreteStep st = discrete_step(A, B, S, R, Pi.Pi.next_mean(k, j), grid.dt(),
                                  "breve gain " + node_name(k, j));
  return Gain{st.G_llt.solve(st.M.transpose()), Vec::Zero(c.d)};
}

Gain bar_gain(const BarCoefficients& cb, const BarRiccatiSolution& L, const OffsetSolution& ell,
              int k, int j) {
  const TimeGrid& grid = L.L.grid();
  const int N = grid.steps;
  const double dt = grid.dt();
  double w0 = L.backend() == Backend::tree ? common_noise_value(grid, k, j) : 0.0;
  BarStep s = cb.at(k, N, w0);
  if (L.backend() == Backend::ode) {
    Eigen::LLT<Mat> R(s.R);
    Mat rhs = (L.L.at(k) * s.B + s.Sbar).transpose();
    return Gain{R.solve(rhs), R.solve(s.B.transpose() * ell.ell.at(k) + s.varpi)};
  }
  Mat L_hat = L.L.next_mean(k, j);
  DiscreteStep st = discrete_step(s.Abar, s.B, s.Sbar, s.R, L_hat, dt,
                                  "bar gain " + node_name(k, j));
  Vec g = ell.ell.next_mean(k, j) + dt * L.L.martingale(k, j) * s.D0;
  Vec h_v = dt * s.varpi + st.Bbar.transpose() * (dt * L_hat * s.b + g);
  return Gain{st.G_llt.solve(st.M.transpose()), st.G_llt.solve(h_v)};
}

void require_tree(const NodeField<Mat>& f, const JointTree& tree, const char* what) {
  if (f.backend() != Backend::tree || !(f.grid() == tree.grid()))
    throw Error(ErrorKind::invalid_argument,
                std::string(what) + " must come from the tree backend on the same grid");
}

// Broadcast a dim × 2^k matrix of W⁰-group values to the joint-tree nodes.
void broadcast(const Mat& groups, TreeProcess& p, const JointTree& tree, int k) {
  for (std::size_t i = 0; i < tree.node_count(k); ++i)
    p.layer(k).col(static_cast<Eigen::Index>(i)) = groups.col(tree.w0_id(k, i));
}

double scaled(double residual, double scale) { return residual / std::max(1.0, scale); }

}  // namespace

OptimalPolicy OptimalPolicy::with_breve_sign(double sign) const {
  OptimalPolicy out = *this;
  for (int k = 0; k < grid().steps; ++k)
    for (int j = 0; j < out.K_breve.nodes(k); ++j) out.K_breve.at(k, j) *= sign;
  return out;
}

OptimalPolicy make_policy(const CoefficientSet& c, const RiccatiSolution& Pi,
                          const BarRiccatiSolution& L, const OffsetSolution& ell,
                          const TimeGrid& grid) {
  const Backend be = Pi.backend();
  if (L.backend() != be || ell.backend() != be || !(Pi.Pi.grid() == grid) ||
      !(L.L.grid() == grid) || !(ell.ell.grid() == grid))
    throw Error(ErrorKind::invalid_argument, "policy inputs come from different grids/backends");
  BarCoefficients cb = bar_transform(c);
  OptimalPolicy pol{NodeField<Mat>(be, grid, Mat::Zero(c.d, c.n)),
                    NodeField<Mat>(be, grid, Mat::Zero(c.d, c.n)),
                    NodeField<Vec>(be, grid, Vec::Zero(c.d))};
  for (int k = 0; k < grid.steps; ++k)
    for (int j = 0; j < pol.K_breve.nodes(k); ++j) {
      pol.K_breve.at(k, j) = breve_gain(c, Pi, k, j).K;
      Gain g = bar_gain(cb, L, ell, k, j);
      pol.K_bar.at(k, j) = g.K;
      pol.kappa.at(k, j) = g.kappa;
    }
  return pol;
}

BarFbsdeSolution solve_bar_fbsde(const BarCoefficients& cb, const BarRiccatiSolution& L,
                                 const OffsetSolution& ell, const Vec& xi_bar,
                                 const JointTree& tree) {
  require_tree(L.L, tree, "L");
  if (ell.backend() != Backend::tree)
    throw Error(ErrorKind::invalid_argument, "offset must come from the tree backend");
  if (xi_bar.size() != cb.n) throw Error(ErrorKind::dimension, "initial mean has wrong size");
  const TimeGrid& grid = tree.grid();
  const int N = grid.steps;
  const double dt = grid.dt();
  const double sq = tree.sqrt_dt();
  const int n = cb.n, d = cb.d;

  // W⁰-level recursion, then broadcast.
  std::vector<Mat> y(N + 1), v(N), p(N + 1), p_hat(N), q(N);
  y[0] = xi_bar;
  for (int k = 0; k < N; ++k) {
    const int G = tree.w0_count(k);
    v[k].resize(d, G);
    y[k + 1].resize(n, 2 * G);
    for (int j = 0; j < G; ++j) {
      BarStep s = cb.at(k, N, common_noise_value(grid, k, j));
      Gain g = bar_gain(cb, L, ell, k, j);
      v[k].col(j) = -g.K * y[k].col(j) - g.kappa;
      Vec m = y[k].col(j) + dt * (s.Abar * y[k].col(j) + s.B * v[k].col(j) + s.b);
      y[k + 1].col(2 * j) = m + sq * s.D0;
      y[k + 1].col(2 * j + 1) = m - sq * s.D0;
    }
  }
  for (int k = 0; k <= N; ++k) {
    p[k].resize(n, tree.w0_count(k));
    for (int j = 0; j < tree.w0_count(k); ++j)
      p[k].col(j) = L.L.at(k, j) * y[k].col(j) + ell.ell.at(k, j);
  }

  BarFbsdeSolution sol;
  double worst = 0.0;
  std::string where;
  for (int k = 0; k < N; ++k) {
    const int G = tree.w0_count(k);
    p_hat[k].resize(n, G);
    q[k].resize(n, G);
    for (int j = 0; j < G; ++j) {
      p_hat[k].col(j) = 0.5 * (p[k + 1].col(2 * j) + p[k + 1].col(2 * j + 1));
      q[k].col(j) = (0.5 / sq) * (p[k + 1].col(2 * j) - p[k + 1].col(2 * j + 1));
      BarStep s = cb.at(k, N, common_noise_value(grid, k, j));
      Mat Ab = Mat::Identity(n, n) + dt * s.Abar;
      Vec rhs = Ab.transpose() * p_hat[k].col(j) +
                dt * (s.Qbar * y[k].col(j) + s.Sbar * v[k].col(j) + s.zetabar);
      double r = scaled((p[k].col(j) - rhs).cwiseAbs().maxCoeff(),
                        p[k].col(j).cwiseAbs().maxCoeff());
      if (r > worst) {
        worst = r;
        where = node_name(k, j);
      }
    }
  }
  for (int j = 0; j < tree.w0_count(N); ++j) {
    Vec term = cb.QbarT * y[N].col(j);
    double r = scaled((p[N].col(j) - term).cwiseAbs().maxCoeff(), term.cwiseAbs().maxCoeff());
    if (r > worst) {
      worst = r;
      where = "terminal node " + std::to_string(j);
    }
  }
  sol.backward_residual = worst;
  if (worst > kTolBackwardResidual)
    throw ResidualError("bar adjoint equation residual " + std::to_string(worst) + " at " + where,
                        worst, where);

  sol.xbar = TreeProcess(tree, n, N + 1, Adaptedness::common);
  sol.p = TreeProcess(tree, n, N + 1, Adaptedness::common);
  sol.p_hat = TreeProcess(tree, n, N, Adaptedness::common);
  sol.q = TreeProcess(tree, n, N, Adaptedness::common);
  sol.ubar = TreeProcess(tree, d, N, Adaptedness::common);
  for (int k = 0; k <= N; ++k) {
    broadcast(y[k], sol.xbar, tree, k);
    broadcast(p[k], sol.p, tree, k);
    if (k == N) break;
    broadcast(p_hat[k], sol.p_hat, tree, k);
    broadcast(q[k], sol.q, tree, k);
    broadcast(v[k], sol.ubar, tree, k);
  }
  return sol;
}

BreveFbsdeSolution solve_breve_fbsde(const CoefficientSet& c, const RiccatiSolution& Pi,
                                     const InitialCondition& xi, const JointTree& tree) {
  require_tree(Pi.Pi, tree, "Pi");
  xi.validate(c.n);
  if (xi.count() != tree.atoms())
    throw Error(ErrorKind::dimension, "tree has a different number of initial atoms");
  const TimeGrid& grid = tree.grid();
  const int N = grid.steps;
  const double dt = grid.dt();
  const int n = c.n, d = c.d;
  NodeCoefficients coef(c, grid);

  BreveFbsdeSolution sol;
  sol.xbreve = TreeProcess(tree, n, N + 1, Adaptedness::full);
  sol.lambda = TreeProcess(tree, n, N + 1, Adaptedness::full);
  sol.lambda_hat = TreeProcess(tree, n, N, Adaptedness::full);
  sol.beta = TreeProcess(tree, n, N, Adaptedness::full);
  sol.beta0 = TreeProcess(tree, n, N, Adaptedness::full);
  sol.ubreve = TreeProcess(tree, d, N, Adaptedness::full);
  for (int a = 0; a < tree.atoms(); ++a) sol.xbreve.layer(0).col(a) = xi.atoms.col(a);

  for (int k = 0; k < N; ++k) {
    std::vector<Mat> gains(tree.w0_count(k));
    for (int j = 0; j < tree.w0_count(k); ++j) gains[j] = breve_gain(c, Pi, k, j).K;
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      auto col = static_cast<Eigen::Index>(i);
      int g = tree.w0_id(k, i);
      const StepCoefficients& s = coef.at(k, g);
      Vec z = sol.xbreve.layer(k).col(col);
      Vec a = -gains[g] * z;
      sol.ubreve.layer(k).col(col) = a;
      Vec m = z + dt * (s.A * z + s.B * a);
      for (int br = 0; br < 4; ++br)
        sol.xbreve.layer(k + 1).col(4 * col + br) = m + tree.dw(br) * s.D;
    }
  }
  for (int k = 0; k <= N; ++k)
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      auto col = static_cast<Eigen::Index>(i);
      sol.lambda.layer(k).col(col) = Pi.Pi.at(k, tree.w0_id(k, i)) * sol.xbreve.layer(k).col(col);
    }

  double worst = 0.0;
  std::string where;
  for (int k = 0; k < N; ++k) {
    const Mat& next = sol.lambda.layer(k + 1);
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      auto col = static_cast<Eigen::Index>(i);
      Vec mean = Vec::Zero(n), bw = Vec::Zero(n), bw0 = Vec::Zero(n);
      for (int br = 0; br < 4; ++br) {
        const auto child = next.col(4 * col + br);
        mean += 0.25 * child;
        bw += (0.25 * tree.dw(br) / dt) * child;
        bw0 += (0.25 * tree.dw0(br) / dt) * child;
      }
      sol.lambda_hat.layer(k).col(col) = mean;
      sol.beta.layer(k).col(col) = bw;
      sol.beta0.layer(k).col(col) = bw0;
      const StepCoefficients& s = coef.at(k, tree.w0_id(k, i));
      Mat Ab = Mat::Identity(n, n) + dt * s.A;
      Vec rhs = Ab.transpose() * mean +
                dt * (s.Q * sol.xbreve.layer(k).col(col) + s.S * sol.ubreve.layer(k).col(col));
      Vec lam = sol.lambda.layer(k).col(col);
      double r = scaled((lam - rhs).cwiseAbs().maxCoeff(), lam.cwiseAbs().maxCoeff());
      if (r > worst) {
        worst = r;
        where = node_name(k, static_cast<int>(i));
      }
    }
  }
  sol.backward_residual = worst;
  if (worst > kTolBackwardResidual)
    throw ResidualError("breve adjoint equation residual " + std::to_string(worst) + " at " +
                            where,
                        worst, where);
  return sol;
}

AssembledControl assemble_optimal_control(const BarFbsdeSolution& bar,
                                          const BreveFbsdeSolution& breve,
                                          const CoefficientSet& c, const RiccatiSolution& Pi,
                                          const BarRiccatiSolution& L,
                                          const OffsetSolution& ell, const JointTree& tree) {
  if (!bar.xbar.compatible(tree) || !breve.xbreve.compatible(tree))
    throw Error(ErrorKind::invalid_argument, "FBSDE solutions live on different trees");
  const TimeGrid& grid = tree.grid();
  const int N = grid.steps;
  NodeCoefficients coef(c, grid);
  const Mat IH = Mat::Identity(c.n, c.n) - c.H;

  AssembledControl out;
  out.policy = make_policy(c, Pi, L, ell, grid);
  out.u = TreeProcess(tree, c.d, N, Adaptedness::full);
  double gap = 0.0;
  for (int k = 0; k < N; ++k)
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      auto col = static_cast<Eigen::Index>(i);
      int g = tree.w0_id(k, i);
      const StepCoefficients& s = coef.at(k, g);
      Vec xb = bar.xbar.layer(k).col(col), xr = breve.xbreve.layer(k).col(col);
      Vec rhs = s.S.transpose() * (IH * xb) + s.S.transpose() * xr +
                s.B.transpose() * (breve.lambda_hat.layer(k).col(col) + bar.p_hat.layer(k).col(col)) +
                s.varpi;
      Vec u = -s.R.llt().solve(rhs);
      Vec fb = -out.policy.K_breve.at(k, g) * xr - out.policy.K_bar.at(k, g) * xb -
               out.policy.kappa.at(k, g);
      gap = std::max(gap, (u - fb).cwiseAbs().maxCoeff());
      out.u.layer(k).col(col) = u;
    }
  out.representation_gap = gap;
  if (gap > kTolRepresentation)
    throw ResidualError("adjoint and feedback forms of the optimal control differ by " +
                            std::to_string(gap),
                        gap, "control");
  return out;
}

StationarityResiduals verify_stationarity(const CoefficientSet& c, const BarFbsdeSolution& bar,
                                          const BreveFbsdeSolution& breve, const TreeProcess& u,
                                          const JointTree& tree) {
  const TimeGrid& grid = tree.grid();
  NodeCoefficients coef(c, grid);
  const Mat IH = Mat::Identity(c.n, c.n) - c.H;
  TreeProcess ubar = conditional_expectation_f0(u, tree);
  StationarityResiduals res;
  for (int k = 0; k < grid.steps; ++k)
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      auto col = static_cast<Eigen::Index>(i);
      const StepCoefficients& s = coef.at(k, tree.w0_id(k, i));
      Vec ub = ubar.layer(k).col(col);
      Vec ur = u.layer(k).col(col) - ub;
      Vec rb = s.R * ub + s.S.transpose() * (IH * bar.xbar.layer(k).col(col)) +
               s.B.transpose() * bar.p_hat.layer(k).col(col) + s.varpi;
      Vec rr = s.R * ur + s.S.transpose() * breve.xbreve.layer(k).col(col) +
               s.B.transpose() * breve.lambda_hat.layer(k).col(col);
      res.bar = std::max(res.bar, rb.cwiseAbs().maxCoeff());
      res.breve = std::max(res.breve, rr.cwiseAbs().maxCoeff());
    }
  return res;
}

FeedFormDefects feedform_identities(const CoefficientSet& c, const RiccatiSolution& Pi,
                                    const BarRiccatiSolution& L, const OffsetSolution& ell,
                                    const BarFbsdeSolution& bar, const BreveFbsdeSolution& breve,
                                    const JointTree& tree) {
  const TimeGrid& grid = tree.grid();
  const double dt = grid.dt();
  NodeCoefficients coef(c, grid);
  BarCoefficients cb = bar_transform(c);
  FeedFormDefects out;
  for (int k = 0; k < grid.steps; ++k)
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      auto col = static_cast<Eigen::Index>(i);
      int g = tree.w0_id(k, i);
      const StepCoefficients& s = coef.at(k, g);
      BarStep bs = cb.at(k, grid.steps, common_noise_value(grid, k, g));
      Vec xb = bar.xbar.layer(k).col(col);
      Vec mbar = xb + dt * (bs.Abar * xb + bs.B * bar.ubar.layer(k).col(col) + bs.b);
      Vec q = L.L.martingale(k, g) * mbar + L.L.next_mean(k, g) * bs.D0 +
              ell.ell.martingale(k, g);
      out.q = std::max(out.q, (q - bar.q.layer(k).col(col)).cwiseAbs().maxCoeff());
      Vec beta = Pi.Pi.next_mean(k, g) * s.D;
      out.beta = std::max(out.beta, (beta - breve.beta.layer(k).col(col)).cwiseAbs().maxCoeff());
      Vec xr = breve.xbreve.layer(k).col(col);
      Vec mr = xr + dt * (s.A * xr + s.B * breve.ubreve.layer(k).col(col));
      Vec beta0 = Pi.Pi.martingale(k, g) * mr;
      out.beta0 =
          std::max(out.beta0, (beta0 - breve.beta0.layer(k).col(col)).cwiseAbs().maxCoeff());
    }
  return out;
}

CoupledSolution solve_coupled_mv_fbsde(const CoefficientSet& c, const InitialCondition& xi,
                                       const JointTree& tree, const PicardOptions& opts) {
  check_dimensions(c);
  xi.validate(c.n);
  if (xi.count() != tree.atoms())
    throw Error(ErrorKind::dimension, "tree has a different number of initial atoms");
  if (!(opts.damping > 0.0 && opts.damping <= 1.0) || opts.max_iter < 1)
    throw Error(ErrorKind::invalid_argument, "Picard damping must lie in (0, 1]");
  const TimeGrid& grid = tree.grid();
  const int N = grid.steps;
  const double dt = grid.dt();
  const int n = c.n, d = c.d;
  NodeCoefficients coef(c, grid);
  const Mat& H = c.H;

  CoupledSolution sol;
  sol.x = TreeProcess(tree, n, N + 1, Adaptedness::full);
  sol.u = TreeProcess(tree, d, N, Adaptedness::full);
  sol.y = TreeProcess(tree, n, N + 1, Adaptedness::full);
  for (int a = 0; a < tree.atoms(); ++a) sol.x.layer(0).col(a) = xi.mean + xi.atoms.col(a);

  TreeProcess y_new(tree, n, N + 1, Adaptedness::full);
  for (int it = 1; it <= opts.max_iter; ++it) {
    double change = 0.0;
    for (int k = 0; k < N; ++k) {
      Mat xbar = common_means(sol.x, tree, k);
      Mat y_hat = child_mean(sol.y.layer(k + 1), tree, k);
      for (std::size_t i = 0; i < tree.node_count(k); ++i) {
        auto col = static_cast<Eigen::Index>(i);
        int g = tree.w0_id(k, i);
        const StepCoefficients& s = coef.at(k, g);
        Vec x = sol.x.layer(k).col(col);
        Vec rhs = s.S.transpose() * (x - H * xbar.col(g)) + s.B.transpose() * y_hat.col(col) +
                  s.varpi;
        Vec u = -s.R.llt().solve(rhs);
        change = std::max(change, (u - sol.u.layer(k).col(col)).cwiseAbs().maxCoeff());
        sol.u.layer(k).col(col) = u;
        Vec m = x + dt * (s.A * x + s.B * u + s.F * xbar.col(g) + s.b);
        for (int br = 0; br < 4; ++br)
          sol.x.layer(k + 1).col(4 * col + br) = m + tree.dw(br) * s.D + tree.dw0(br) * s.D0;
      }
    }

    // Backward sweep: the F⁰-conditional terms are group means of node terms.
    {
      Mat xbar = common_means(sol.x, tree, N);
      TreeProcess tmp(tree, n, N + 1, Adaptedness::full);
      for (std::size_t i = 0; i < tree.node_count(N); ++i) {
        auto col = static_cast<Eigen::Index>(i);
        Vec e = sol.x.layer(N).col(col) - H * xbar.col(tree.w0_id(N, i));
        y_new.layer(N).col(col) = c.QT * e;
        tmp.layer(N).col(col) = H.transpose() * (c.QT * e);
      }
      Mat corr = common_means(tmp, tree, N);
      for (std::size_t i = 0; i < tree.node_count(N); ++i)
        y_new.layer(N).col(static_cast<Eigen::Index>(i)) -= corr.col(tree.w0_id(N, i));
    }
    for (int k = N - 1; k >= 0; --k) {
      Mat xbar = common_means(sol.x, tree, k);
      Mat y_hat = child_mean(y_new.layer(k + 1), tree, k);
      TreeProcess tmp(tree, n, k + 1, Adaptedness::full);
      for (std::size_t i = 0; i < tree.node_count(k); ++i) {
        auto col = static_cast<Eigen::Index>(i);
        int g = tree.w0_id(k, i);
        const StepCoefficients& s = coef.at(k, g);
        Vec e = sol.x.layer(k).col(col) - H * xbar.col(g);
        Vec run = s.Q * e + s.S * sol.u.layer(k).col(col) + s.zeta;
        Vec yh = y_hat.col(col);
        y_new.layer(k).col(col) = yh + dt * (s.A.transpose() * yh) + dt * run;
        tmp.layer(k).col(col) = dt * (s.F.transpose() * yh - H.transpose() * run);
      }
      Mat corr = common_means(tmp, tree, k);
      for (std::size_t i = 0; i < tree.node_count(k); ++i)
        y_new.layer(k).col(static_cast<Eigen::Index>(i)) += corr.col(tree.w0_id(k, i));
    }
    for (int k = 0; k <= N; ++k)
      sol.y.layer(k) = opts.damping * y_new.layer(k) + (1.0 - opts.damping) * sol.y.layer(k);

    sol.residual_history.push_back(change);
    sol.iterations = it;
    if (!std::isfinite(change))
      throw ConvergenceError("Picard iteration diverged", sol.residual_history);
    if (change <= opts.tol) return sol;
  }
  throw ConvergenceError("Picard iteration did not converge in " +
                             std::to_string(opts.max_iter) +
                             " iterations; reduce the horizon or increase damping",
                         sol.residual_history);
}

DecompositionSolution solve_decomposition(const CoefficientSet& c, const InitialCondition& xi,
                                          const JointTree& tree) {
  const TimeGrid& grid = tree.grid();
  DecompositionSolution s;
  BarCoefficients cb = bar_transform(c);
  s.Pi = solve_pi(c, grid, Backend::tree);
  s.L = solve_l(cb, grid, Backend::tree);
  s.ell = solve_offset(cb, s.L, grid, Backend::tree);
  s.bar = solve_bar_fbsde(cb, s.L, s.ell, xi.mean, tree);
  s.breve = solve_breve_fbsde(c, s.Pi, xi, tree);
  s.control = assemble_optimal_control(s.bar, s.breve, c, s.Pi, s.L, s.ell, tree);
  s.x = simulate_mft_state(c, xi, s.control.u, tree);
  s.J = eval_cost_mft(c, s.x, s.control.u, tree);
  s.J_bar = eval_cost_bar(cb, s.bar.xbar, s.bar.ubar, tree);
  s.J_breve = eval_cost_breve(c, s.breve.xbreve, s.breve.ubreve, tree);
  s.stationarity = verify_stationarity(c, s.bar, s.breve, s.control.u, tree);
  return s;
}

}  // namespace cmvlq
