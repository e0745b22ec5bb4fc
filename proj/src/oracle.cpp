#include "cmvlq/oracle.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "cmvlq/error.hpp"

namespace cmvlq {

std::string_view to_string(QpMethod m) {
  switch (m) {
    case QpMethod::automatic: return "automatic";
    case QpMethod::direct: return "direct";
    case QpMethod::cg: return "cg";
  }
  return "unknown";
}

MftQuadratic::MftQuadratic(const CoefficientSet& c, const InitialCondition& xi,
                           const JointTree& tree)
    : c_(c), xi_(xi), tree_(tree), coef_(c, tree.grid()) {
  check_dimensions(c);
  xi.validate(c.n);
  if (xi.count() != tree.atoms())
    throw Error(ErrorKind::dimension, "oracle: tree and initial condition disagree on atoms");
}

TreeProcess MftQuadratic::forward(const TreeProcess& u) const {
  const int N = tree_.steps();
  const double dt = tree_.dt();
  TreeProcess x(tree_, c_.n, N + 1, Adaptedness::full);
  for (int a = 0; a < tree_.atoms(); ++a) x.layer(0).col(a) = xi_.mean + xi_.atoms.col(a);
  for (int k = 0; k < N; ++k) {
    Mat xbar = common_means(x, tree_, k);
    for (std::size_t i = 0; i < tree_.node_count(k); ++i) {
      auto col = static_cast<Eigen::Index>(i);
      int g = tree_.w0_id(k, i);
      const StepCoefficients& s = coef_.at(k, g);
      const auto xi = x.layer(k).col(col);
      Vec m = xi + dt * (s.A * xi + s.B * u.layer(k).col(col) + s.F * xbar.col(g) + s.b);
      for (int br = 0; br < 4; ++br)
        x.layer(k + 1).col(4 * col + br) = m + tree_.dw(br) * s.D + tree_.dw0(br) * s.D0;
    }
  }
  return x;
}

double MftQuadratic::cost(const TreeProcess& u) const {
  TreeProcess x = forward(u);
  const int N = tree_.steps();
  const double dt = tree_.dt();
  double total = 0.0;
  for (int k = 0; k <= N; ++k) {
    Mat xbar = common_means(x, tree_, k);
    for (std::size_t i = 0; i < tree_.node_count(k); ++i) {
      auto col = static_cast<Eigen::Index>(i);
      int g = tree_.w0_id(k, i);
      Vec e = x.layer(k).col(col) - c_.H * xbar.col(g);
      if (k == N) {
        total += tree_.prob(k, i) * 0.5 * e.dot(c_.QT * e);
        continue;
      }
      const StepCoefficients& s = coef_.at(k, g);
      Vec v = u.layer(k).col(col);
      double l = 0.5 * e.dot(s.Q * e) + e.dot(s.S * v) + 0.5 * v.dot(s.R * v) + s.zeta.dot(e) +
                 s.varpi.dot(v);
      total += tree_.prob(k, i) * dt * l;
    }
  }
  return total;
}

TreeProcess MftQuadratic::gradient(const TreeProcess& u) const {
  TreeProcess x = forward(u);
  const int N = tree_.steps();
  const double dt = tree_.dt();
  const Mat& H = c_.H;
  // Adjoint λ normalised by node probability.
  Mat lambda_next;
  TreeProcess grad(tree_, c_.d, N, Adaptedness::full);
  {
    Mat xbar = common_means(x, tree_, N);
    lambda_next.resize(c_.n, static_cast<Eigen::Index>(tree_.node_count(N)));
    Mat corr = Mat::Zero(c_.n, tree_.w0_count(N));
    Vec w = Vec::Zero(tree_.w0_count(N));
    for (std::size_t i = 0; i < tree_.node_count(N); ++i) {
      auto col = static_cast<Eigen::Index>(i);
      int g = tree_.w0_id(N, i);
      Vec e = x.layer(N).col(col) - H * xbar.col(g);
      Vec term = c_.QT * e;
      lambda_next.col(col) = term;
      corr.col(g) += tree_.prob(N, i) * (H.transpose() * term);
      w[g] += tree_.prob(N, i);
    }
    for (std::size_t i = 0; i < tree_.node_count(N); ++i) {
      int g = tree_.w0_id(N, i);
      lambda_next.col(static_cast<Eigen::Index>(i)) -= corr.col(g) / w[g];
    }
  }
  for (int k = N - 1; k >= 0; --k) {
    Mat xbar = common_means(x, tree_, k);
    const auto nodes = static_cast<Eigen::Index>(tree_.node_count(k));
    Mat lambda(c_.n, nodes);
    Mat corr = Mat::Zero(c_.n, tree_.w0_count(k));
    Vec w = Vec::Zero(tree_.w0_count(k));
    for (Eigen::Index i = 0; i < nodes; ++i) {
      int g = tree_.w0_id(k, i);
      const StepCoefficients& s = coef_.at(k, g);
      double p = tree_.prob(k, i);
      Vec lam_hat = 0.25 * (lambda_next.col(4 * i) + lambda_next.col(4 * i + 1) +
                            lambda_next.col(4 * i + 2) + lambda_next.col(4 * i + 3));
      Vec e = x.layer(k).col(i) - H * xbar.col(g);
      Vec v = u.layer(k).col(i);
      Vec run = s.Q * e + s.S * v + s.zeta;
      grad.layer(k).col(i) =
          p * dt * (s.S.transpose() * e + s.R * v + s.varpi + s.B.transpose() * lam_hat);
      lambda.col(i) = lam_hat + dt * (s.A.transpose() * lam_hat + run);
      corr.col(g) += p * dt * (s.F.transpose() * lam_hat - H.transpose() * run);
      w[g] += p;
    }
    for (Eigen::Index i = 0; i < nodes; ++i) lambda.col(i) += corr.col(tree_.w0_id(k, i)) / w[tree_.w0_id(k, i)];
    lambda_next = std::move(lambda);
  }
  return grad;
}

namespace {

// Linear parametrisation u = P z of the admissible node controls.
struct Reduction {
  int dim = 0;
  std::function<TreeProcess(const Vec&)> expand;
  std::function<Vec(const TreeProcess&)> reduce;  // Pᵀ g
  Vec diag_hint;                                  // approximate diag(Pᵀ ∇²J P)
};

double sup(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

OracleSolution solve_reduced(const MftQuadratic& f, const Reduction& r, QpMethod method) {
  OracleSolution out;
  out.dimension = r.dim;
  if (method == QpMethod::automatic)
    method = r.dim <= kMaxDirectDimension ? QpMethod::direct : QpMethod::cg;
  out.method = method;
  auto grad = [&](const Vec& z) { return r.reduce(f.gradient(r.expand(z))); };

  const Vec zero = Vec::Zero(r.dim);
  const Vec g0 = grad(zero);
  out.linear_norm = sup(g0);
  Vec z = zero;
  if (r.dim > 0 && method == QpMethod::direct) {
    Mat Hm(r.dim, r.dim);
    Vec e = zero;
    for (int i = 0; i < r.dim; ++i) {
      e[i] = 1.0;
      Hm.col(i) = grad(e) - g0;
      e[i] = 0.0;
    }
    Hm = symmetrize(Hm);
    Eigen::LLT<Mat> llt(Hm);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorKind::numerical, "oracle Hessian is not positive definite");
    z = llt.solve(-g0);
  } else if (r.dim > 0) {
    // Preconditioned CG on H z = −g0 with Hv = ∇(v) − ∇(0).
    Vec rvec = -g0;
    const double target = 1e-12 * std::max(rvec.norm(), 1e-300);
    Vec Minv = r.diag_hint.cwiseInverse();
    Vec s = Minv.cwiseProduct(rvec);
    Vec p = s;
    double rs = rvec.dot(s);
    const int max_it = 10 * r.dim;
    int it = 0;
    std::vector<double> history;
    while (rvec.norm() > target) {
      if (it >= max_it)
        throw ConvergenceError("oracle CG did not converge in " + std::to_string(max_it) +
                                   " iterations (near-singular instance)",
                               history);
      Vec Hp = grad(p) - g0;
      double alpha = rs / p.dot(Hp);
      z += alpha * p;
      rvec -= alpha * Hp;
      s = Minv.cwiseProduct(rvec);
      double rs_new = rvec.dot(s);
      p = s + (rs_new / rs) * p;
      rs = rs_new;
      history.push_back(rvec.norm());
      ++it;
    }
    out.cg_iterations = it;
  }
  out.u = r.expand(z);
  out.J = f.cost(out.u);
  out.kkt_residual = sup(grad(z));
  return out;
}

void check_oracle_size(const JointTree& tree) {
  if (tree.steps() > kMaxOracleSteps)
    throw Error(ErrorKind::capacity, "oracle QP supports at most " +
                                         std::to_string(kMaxOracleSteps) + " steps");
}

Reduction full_reduction(const JointTree& tree, const NodeCoefficients& coef, int d) {
  const int N = tree.steps();
  Reduction r;
  std::vector<int> offset(N + 1, 0);
  for (int k = 0; k < N; ++k)
    offset[k + 1] = offset[k] + d * static_cast<int>(tree.node_count(k));
  r.dim = offset[N];
  r.expand = [&tree, offset, d, N](const Vec& z) {
    TreeProcess u(tree, d, N, Adaptedness::full);
    for (int k = 0; k < N; ++k)
      u.layer(k) = Eigen::Map<const Mat>(z.data() + offset[k], d,
                                         static_cast<Eigen::Index>(tree.node_count(k)));
    return u;
  };
  r.reduce = [offset, d, N, &tree](const TreeProcess& g) {
    Vec z(offset[N]);
    for (int k = 0; k < N; ++k)
      Eigen::Map<Mat>(z.data() + offset[k], d, static_cast<Eigen::Index>(tree.node_count(k))) =
          g.layer(k);
    return z;
  };
  r.diag_hint.resize(r.dim);
  for (int k = 0; k < N; ++k)
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      const Mat& R = coef.at(k, tree.w0_id(k, i)).R;
      for (int j = 0; j < d; ++j)
        r.diag_hint[offset[k] + d * static_cast<int>(i) + j] = tree.prob(k, i) * tree.dt() * R(j, j);
    }
  return r;
}

// Resample two processes to a common piece count.
MatrixProcess sum_processes(const MatrixProcess& a, const MatrixProcess& b) {
  int K = std::lcm(a.pieces(), b.pieces());
  MatrixProcess ra = a.resample(K), rb = b.resample(K), out;
  for (int p = 0; p < K; ++p) {
    out.base.push_back(ra.base[p] + rb.base[p]);
    if (ra.has_slope() || rb.has_slope()) {
      Mat s = Mat::Zero(ra.base[p].rows(), ra.base[p].cols());
      if (ra.has_slope()) s += ra.slope[p];
      if (rb.has_slope()) s += rb.slope[p];
      out.slope.push_back(s);
    }
  }
  return out;
}

template <class V, class Fn>
AffineProcess<V> map_process(const AffineProcess<V>& p, Fn fn) {
  AffineProcess<V> out;
  for (const auto& b : p.base) out.base.push_back(fn(b));
  for (const auto& s : p.slope) out.slope.push_back(fn(s));
  return out;
}

InitialCondition with_parts(const InitialCondition& xi, bool keep_mean, bool keep_atoms) {
  InitialCondition out = xi;
  if (!keep_mean) out.mean.setZero();
  if (!keep_atoms) out.atoms.setZero();
  return out;
}

}  // namespace

OracleSolution solve_qp_exact(const CoefficientSet& c, const InitialCondition& xi,
                              const JointTree& tree, QpMethod method) {
  check_oracle_size(tree);
  MftQuadratic f(c, xi, tree);
  NodeCoefficients coef(c, tree.grid());
  return solve_reduced(f, full_reduction(tree, coef, c.d), method);
}

OracleSolution solve_bar_qp(const CoefficientSet& c, const InitialCondition& xi,
                            const JointTree& tree, QpMethod method) {
  check_oracle_size(tree);
  const int n = c.n, d = c.d, N = tree.steps();
  const Mat IH = Mat::Identity(n, n) - c.H;
  CoefficientSet cb = CoefficientSet::zeros(n, d, c.horizon);
  cb.A = sum_processes(c.A, c.F);
  cb.B = c.B;
  cb.R = c.R;
  cb.b = c.b;
  cb.D0 = c.D0;
  cb.varpi = c.varpi;
  cb.Q = map_process(c.Q, [&](const Mat& q) -> Mat { return IH.transpose() * q * IH; });
  cb.S = map_process(c.S, [&](const Mat& s) -> Mat { return IH.transpose() * s; });
  cb.zeta = map_process(c.zeta, [&](const Vec& z) -> Vec { return IH.transpose() * z; });
  cb.QT = IH.transpose() * c.QT * IH;
  MftQuadratic f(cb, with_parts(xi, true, false), tree);

  Reduction r;
  std::vector<int> offset(N + 1, 0);
  for (int k = 0; k < N; ++k) offset[k + 1] = offset[k] + d * tree.w0_count(k);
  r.dim = offset[N];
  r.expand = [&tree, offset, d, N](const Vec& z) {
    TreeProcess u(tree, d, N, Adaptedness::common);
    for (int k = 0; k < N; ++k)
      for (std::size_t i = 0; i < tree.node_count(k); ++i)
        u.layer(k).col(static_cast<Eigen::Index>(i)) = z.segment(offset[k] + d * tree.w0_id(k, i), d);
    return u;
  };
  r.reduce = [&tree, offset, d, N](const TreeProcess& g) {
    Vec z = Vec::Zero(offset[N]);
    for (int k = 0; k < N; ++k)
      for (std::size_t i = 0; i < tree.node_count(k); ++i)
        z.segment(offset[k] + d * tree.w0_id(k, i), d) += g.layer(k).col(static_cast<Eigen::Index>(i));
    return z;
  };
  NodeCoefficients coef(c, tree.grid());
  r.diag_hint.resize(r.dim);
  for (int k = 0; k < N; ++k)
    for (int g = 0; g < tree.w0_count(k); ++g)
      for (int j = 0; j < d; ++j)
        r.diag_hint[offset[k] + d * g + j] = tree.w0_prob(k) * tree.dt() * coef.at(k, g).R(j, j);
  return solve_reduced(f, r, method);
}

OracleSolution solve_breve_qp(const CoefficientSet& c, const InitialCondition& xi,
                              const JointTree& tree, QpMethod method) {
  check_oracle_size(tree);
  const int n = c.n, d = c.d, N = tree.steps();
  CoefficientSet cr = CoefficientSet::zeros(n, d, c.horizon);
  cr.A = c.A;
  cr.B = c.B;
  cr.S = c.S;
  cr.Q = c.Q;
  cr.R = c.R;
  cr.D = c.D;
  cr.QT = c.QT;
  MftQuadratic f(cr, with_parts(xi, false, true), tree);

  // Per layer and W⁰ group: member nodes in ascending order; the last one is
  // eliminated. var_index[k][i] is the first coordinate of node i or −1.
  std::vector<std::vector<std::vector<std::size_t>>> members(N);
  std::vector<std::vector<int>> var_index(N);
  int dim = 0;
  for (int k = 0; k < N; ++k) {
    members[k].resize(tree.w0_count(k));
    for (std::size_t i = 0; i < tree.node_count(k); ++i) members[k][tree.w0_id(k, i)].push_back(i);
    var_index[k].assign(tree.node_count(k), -1);
    for (const auto& grp : members[k])
      for (std::size_t m = 0; m + 1 < grp.size(); ++m) {
        var_index[k][grp[m]] = dim;
        dim += d;
      }
  }
  Reduction r;
  r.dim = dim;
  r.expand = [&tree, members, var_index, d, N](const Vec& z) {
    TreeProcess u(tree, d, N, Adaptedness::full);
    for (int k = 0; k < N; ++k)
      for (const auto& grp : members[k]) {
        std::size_t last = grp.back();
        Vec acc = Vec::Zero(d);
        for (std::size_t m = 0; m + 1 < grp.size(); ++m) {
          Vec zi = z.segment(var_index[k][grp[m]], d);
          u.layer(k).col(static_cast<Eigen::Index>(grp[m])) = zi;
          acc += (tree.prob(k, grp[m]) / tree.prob(k, last)) * zi;
        }
        u.layer(k).col(static_cast<Eigen::Index>(last)) = -acc;
      }
    return u;
  };
  r.reduce = [&tree, members, var_index, d, N, dim](const TreeProcess& g) {
    Vec z(dim);
    for (int k = 0; k < N; ++k)
      for (const auto& grp : members[k]) {
        std::size_t last = grp.back();
        Vec gl = g.layer(k).col(static_cast<Eigen::Index>(last));
        for (std::size_t m = 0; m + 1 < grp.size(); ++m)
          z.segment(var_index[k][grp[m]], d) =
              g.layer(k).col(static_cast<Eigen::Index>(grp[m])) -
              (tree.prob(k, grp[m]) / tree.prob(k, last)) * gl;
      }
    return z;
  };
  NodeCoefficients coef(c, tree.grid());
  r.diag_hint.resize(dim);
  for (int k = 0; k < N; ++k)
    for (const auto& grp : members[k]) {
      double pl = tree.prob(k, grp.back());
      for (std::size_t m = 0; m + 1 < grp.size(); ++m) {
        double p = tree.prob(k, grp[m]);
        const Mat& R = coef.at(k, tree.w0_id(k, grp[m])).R;
        for (int j = 0; j < d; ++j)
          r.diag_hint[var_index[k][grp[m]] + j] = p * (1.0 + p / pl) * tree.dt() * R(j, j);
      }
    }
  return solve_reduced(f, r, method);
}

GapReport compare_solutions(const TreeProcess& u_a, double J_a, const TreeProcess& u_b,
                            double J_b, const JointTree& tree) {
  if (!u_a.same_layout(u_b) || !u_a.compatible(tree))
    throw Error(ErrorKind::invalid_argument, "compared controls live on different trees");
  TreeProcess diff = u_a - u_b;
  GapReport g;
  g.sup_gap = sup_norm(diff);
  g.l2_gap = std::sqrt(std::max(0.0, inner_product(diff, diff, tree, tree.grid())));
  g.cost_gap = std::abs(J_a - J_b) / std::max(1.0, std::abs(J_b));
  return g;
}

}  // namespace cmvlq
