#include "cmvlq/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Eigenvalues>

#include "cmvlq/error.hpp"
#include "cmvlq/instances.hpp"
#include "cmvlq/parallel.hpp"

namespace cmvlq {

namespace {

enum Noise : std::uint64_t { kIdiosyncratic = 1, kCommon = 2, kInitial = 3 };

// Counter-based normals: each (seed, stream, noise) key yields an
// independent sequence indexed by the step, so any increment can be
// regenerated without replaying the stream.
struct NormalStream {
  std::uint64_t key;

  NormalStream(std::uint64_t seed, std::uint64_t stream, Noise noise)
      : key(mix_seed(mix_seed(seed, stream), noise)) {}

  double operator()(std::uint64_t counter) const {
    std::uint64_t a = mix_seed(key, 2 * counter);
    std::uint64_t b = mix_seed(key, 2 * counter + 1);
    double u1 = (static_cast<double>(a >> 11) + 0.5) * 0x1.0p-53;
    double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
};

Mat covariance_root(const InitialCondition& xi) {
  Mat cov = xi.covariance();
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

std::vector<int> checkpoint_steps(int N, int count) {
  count = std::clamp(count, 1, N);
  std::vector<int> out;
  for (int c = 0; c <= count; ++c) {
    int k = static_cast<int>(std::lround(static_cast<double>(c) * N / count));
    if (out.empty() || out.back() != k) out.push_back(k);
  }
  return out;
}

void check_finite(const Mat& m, int k, std::size_t first_path) {
  if (!m.allFinite())
    throw Error(ErrorKind::numerical, "non-finite state in Monte Carlo at step " +
                                          std::to_string(k) + " (paths from " +
                                          std::to_string(first_path) + ")");
}

// Column-wise bilinear forms x_rᵀ M y_r.
Vec column_forms(const Mat& X, const Mat& M, const Mat& Y) {
  return (X.array() * (M * Y).array()).colwise().sum().transpose().matrix();
}

void check_options(const SimOptions& o) {
  if (o.n_paths < 2) throw Error(ErrorKind::invalid_argument, "need at least two paths");
  if (o.n_common_noise < 1)
    throw Error(ErrorKind::invalid_argument, "need at least one common-noise path");
}

}  // namespace

ValueEstimate summarize(const Vec& s) {
  ValueEstimate e;
  e.n = s.size();
  if (e.n == 0) return e;
  double mean = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) mean += s[i];
  mean /= static_cast<double>(e.n);
  double ss = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) ss += (s[i] - mean) * (s[i] - mean);
  e.mean = mean;
  e.se = e.n > 1 ? std::sqrt(ss / static_cast<double>(e.n - 1) / static_cast<double>(e.n)) : 0.0;
  return e;
}

PathEnsemble simulate_forward(const OptimalPolicy& policy, const CoefficientSet& c,
                              const InitialCondition& xi, const SimOptions& opts) {
  check_options(opts);
  check_dimensions(c);
  xi.validate(c.n);
  const TimeGrid& grid = policy.grid();
  const bool tree = policy.backend() == Backend::tree;
  if (!tree && !c.deterministic())
    throw Error(ErrorKind::invalid_argument,
                "ODE-backend policies need deterministic coefficients");
  const int N = grid.steps, n = c.n, d = c.d;
  const double dt = grid.dt(), sq = std::sqrt(dt);
  const int J = opts.n_common_noise;
  NodeCoefficients coef(c, grid);

  PathEnsemble ens;
  ens.n_paths = opts.n_paths;
  ens.n_common_noise = J;
  ens.seed = opts.seed;
  ens.grid = grid;
  ens.checkpoint_steps = checkpoint_steps(N, opts.checkpoints);
  const int C = static_cast<int>(ens.checkpoint_steps.size());
  std::vector<int> checkpoint_of(N + 1, -1);
  for (int i = 0; i < C; ++i) checkpoint_of[ens.checkpoint_steps[i]] = i;
  for (int i = 0; i < C; ++i) {
    ens.x.push_back(Mat::Zero(n, opts.n_paths));
    ens.xbar.push_back(Mat::Zero(n, opts.n_paths));
    ens.u.push_back(Mat::Zero(d, opts.n_paths));
    ens.running_cost.push_back(Vec::Zero(opts.n_paths));
  }
  ens.total_cost = Vec::Zero(opts.n_paths);

  // Common-noise paths: increments, W⁰ node ids and the companion x̄.
  std::vector<Mat> xbar(J, Mat::Zero(n, N + 1));
  std::vector<std::vector<double>> dw0(J, std::vector<double>(N));
  std::vector<std::vector<int>> node(J, std::vector<int>(N + 1, 0));
  double sum_w0 = 0.0;
  for (int j = 0; j < J; ++j) {
    NormalStream z(opts.seed, static_cast<std::uint64_t>(j), kCommon);
    xbar[j].col(0) = xi.mean;
    for (int k = 0; k < N; ++k) {
      dw0[j][k] = sq * z(static_cast<std::uint64_t>(k));
      sum_w0 += dw0[j][k] / sq;
      int g = tree ? node[j][k] : 0;
      const StepCoefficients& s = coef.at(k, g);
      Vec xb = xbar[j].col(k);
      Vec ub = -policy.K_bar.at(k, g) * xb - policy.kappa.at(k, g);
      xbar[j].col(k + 1) = xb + dt * ((s.A + s.F) * xb + s.B * ub + s.b) + dw0[j][k] * s.D0;
      node[j][k + 1] = 2 * node[j][k] + (dw0[j][k] < 0.0 ? 1 : 0);
    }
    check_finite(xbar[j], N, 0);
  }
  ens.increment_mean_w0 = sum_w0 / (static_cast<double>(J) * N);

  // Work items: blocks of paths sharing one common path, so gains and x̄ are
  // uniform within a block.
  struct Block {
    int j;
    std::size_t first;  // first member index within the group
    std::size_t count;
  };
  const std::size_t kBlock = 512;
  std::vector<Block> blocks;
  for (int j = 0; j < J; ++j) {
    std::size_t members = opts.n_paths > j ? (opts.n_paths - j + J - 1) / J : 0;
    for (std::size_t f = 0; f < members; f += kBlock)
      blocks.push_back(Block{j, f, std::min(kBlock, members - f)});
  }
  const Mat root = covariance_root(xi);
  std::vector<double> block_sum_w(blocks.size(), 0.0);

  parallel_for(blocks.size(), [&](std::size_t b0, std::size_t b1) {
    for (std::size_t bi = b0; bi < b1; ++bi) {
      const Block& blk = blocks[bi];
      const auto m = static_cast<Eigen::Index>(blk.count);
      std::vector<std::size_t> path(blk.count);
      std::vector<NormalStream> w, init;
      for (std::size_t r = 0; r < blk.count; ++r) {
        path[r] = blk.j + (blk.first + r) * J;
        w.emplace_back(opts.seed, path[r], kIdiosyncratic);
        init.emplace_back(opts.seed, path[r], kInitial);
      }
      Mat X(n, m);
      for (Eigen::Index r = 0; r < m; ++r) {
        Vec g(n);
        for (int q = 0; q < n; ++q) g[q] = init[r](static_cast<std::uint64_t>(q));
        X.col(r) = xi.mean + root * g;
      }
      Vec running = Vec::Zero(m);
      Vec dW(m);
      double sum_w = 0.0;
      for (int k = 0; k <= N; ++k) {
        const Vec xb = xbar[blk.j].col(k);
        Mat E = X.colwise() - c.H * xb;
        Mat U;
        if (k < N) {
          int g = tree ? node[blk.j][k] : 0;
          Vec ub = -policy.K_bar.at(k, g) * xb - policy.kappa.at(k, g);
          U = (-policy.K_breve.at(k, g) * (X.colwise() - xb)).colwise() + ub;
        }
        int cp = checkpoint_of[k];
        if (cp >= 0)
          for (Eigen::Index r = 0; r < m; ++r) {
            auto p = static_cast<Eigen::Index>(path[r]);
            ens.x[cp].col(p) = X.col(r);
            ens.xbar[cp].col(p) = xb;
            if (k < N) ens.u[cp].col(p) = U.col(r);
            ens.running_cost[cp][p] = running[r];
          }
        if (k == N) {
          Vec term = 0.5 * column_forms(E, c.QT, E);
          for (Eigen::Index r = 0; r < m; ++r)
            ens.total_cost[static_cast<Eigen::Index>(path[r])] = running[r] + term[r];
          break;
        }
        const StepCoefficients& s = coef.at(k, tree ? node[blk.j][k] : 0);
        Vec l = column_forms(E, s.Q, E) + 2.0 * column_forms(E, s.S, U) +
                column_forms(U, s.R, U) + 2.0 * (s.zeta.transpose() * E).transpose() +
                2.0 * (s.varpi.transpose() * U).transpose();
        running += 0.5 * dt * l;
        for (Eigen::Index r = 0; r < m; ++r) {
          dW[r] = sq * w[r](static_cast<std::uint64_t>(k));
          sum_w += dW[r] / sq;
        }
        Mat drift = s.A * X + s.B * U;
        drift.colwise() += s.F * xb + s.b;
        X += dt * drift + s.D * dW.transpose();
        X.colwise() += dw0[blk.j][k] * s.D0;
        check_finite(X, k + 1, path[0]);
      }
      block_sum_w[bi] = sum_w;
    }
  });
  double sum_w = 0.0;
  for (double v : block_sum_w) sum_w += v;
  ens.increment_mean_w = sum_w / (static_cast<double>(opts.n_paths) * N);
  return ens;
}

ValueEstimate estimate_cost(const PathEnsemble& ens) { return summarize(ens.total_cost); }

double conditional_zero_zscore(const PathEnsemble& ens) {
  double worst = 0.0;
  const int J = ens.n_common_noise;
  for (std::size_t cp = 1; cp < ens.x.size(); ++cp) {
    Mat diff = ens.x[cp] - ens.xbar[cp];
    for (Eigen::Index q = 0; q < diff.rows(); ++q) {
      for (int j = 0; j < J; ++j) {
        std::vector<double> vals;
        for (Eigen::Index p = j; p < diff.cols(); p += J) vals.push_back(diff(q, p));
        Vec v = Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
        ValueEstimate e = summarize(v);
        if (e.se > 0.0) worst = std::max(worst, std::abs(e.mean) / e.se);
        else if (e.mean != 0.0) worst = std::numeric_limits<double>::infinity();
      }
    }
  }
  return worst;
}

double diffusion_value(const CoefficientSet& c, const RiccatiSolution& Pi, int h_index) {
  const TimeGrid& grid = Pi.Pi.grid();
  const int N = grid.steps;
  double total = 0.0;
  for (int k = h_index; k < N; ++k) {
    Vec D = c.D.at(k, N, 0.0);
    total += 0.5 * grid.dt() * (D.dot(Pi.Pi.at(k) * D) + D.dot(Pi.Pi.at(k + 1) * D));
  }
  return 0.5 * total;
}

namespace {

struct BrevePaths {
  Vec running_to_h;  // ½∫_0^{t_h} running cost
  Vec value_at_h;    // ½ z_hᵀ Π_h z_h
  Vec total;         // full J̆ per path
};

BrevePaths simulate_breve(const CoefficientSet& c, const RiccatiSolution& Pi,
                          const InitialCondition& xi, const SimOptions& opts, double sign,
                          int h_index) {
  check_options(opts);
  check_dimensions(c);
  xi.validate(c.n);
  if (Pi.backend() != Backend::ode || !c.deterministic())
    throw Error(ErrorKind::invalid_argument,
                "value-function checks need deterministic coefficients and the ODE backend");
  const TimeGrid& grid = Pi.Pi.grid();
  const int N = grid.steps, n = c.n;
  if (h_index < 0 || h_index > N)
    throw Error(ErrorKind::invalid_argument, "Bellman split index outside the grid");
  const double dt = grid.dt(), sq = std::sqrt(dt);

  // Closed-loop transition and running-cost matrices per step.
  std::vector<Mat> Acl(N), Cost(N);
  std::vector<Vec> D(N);
  for (int k = 0; k < N; ++k) {
    StepCoefficients s = c.at(k, N, 0.0);
    Mat K = sign * s.R.llt().solve((Pi.Pi.at(k) * s.B + s.S).transpose());
    Acl[k] = Mat::Identity(n, n) + dt * (s.A - s.B * K);
    Cost[k] = symmetrize(s.Q - s.S * K - K.transpose() * s.S.transpose() +
                         K.transpose() * s.R * K);
    D[k] = s.D;
  }
  const Mat root = covariance_root(xi);
  BrevePaths out{Vec::Zero(opts.n_paths), Vec::Zero(opts.n_paths), Vec::Zero(opts.n_paths)};
  const std::size_t kBlock = 512;
  const std::size_t blocks = (static_cast<std::size_t>(opts.n_paths) + kBlock - 1) / kBlock;
  parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      std::size_t first = b * kBlock;
      auto m = static_cast<Eigen::Index>(
          std::min(kBlock, static_cast<std::size_t>(opts.n_paths) - first));
      std::vector<NormalStream> w, init;
      for (Eigen::Index r = 0; r < m; ++r) {
        w.emplace_back(opts.seed, first + r, kIdiosyncratic);
        init.emplace_back(opts.seed, first + r, kInitial);
      }
      Mat Z(n, m);
      for (Eigen::Index r = 0; r < m; ++r) {
        Vec g(n);
        for (int q = 0; q < n; ++q) g[q] = init[r](static_cast<std::uint64_t>(q));
        Z.col(r) = root * g;
      }
      Vec running = Vec::Zero(m), dW(m);
      for (int k = 0; k <= N; ++k) {
        if (k == h_index) {
          Vec v = 0.5 * column_forms(Z, Pi.Pi.at(k), Z);
          out.running_to_h.segment(first, m) = running;
          out.value_at_h.segment(first, m) = v;
        }
        if (k == N) {
          Vec term = 0.5 * column_forms(Z, c.QT, Z);
          out.total.segment(first, m) = running + term;
          break;
        }
        running += 0.5 * dt * column_forms(Z, Cost[k], Z);
        for (Eigen::Index r = 0; r < m; ++r) dW[r] = sq * w[r](static_cast<std::uint64_t>(k));
        Z = Acl[k] * Z + D[k] * dW.transpose();
        check_finite(Z, k + 1, first);
      }
    }
  });
  return out;
}

double value_reference(const CoefficientSet& c, const RiccatiSolution& Pi,
                       const InitialCondition& xi) {
  return 0.5 * (Pi.Pi.at(0) * xi.covariance()).trace() + diffusion_value(c, Pi, 0);
}

ValueCheck make_check(const Vec& samples, double reference) {
  ValueCheck v;
  v.estimate = summarize(samples);
  v.reference = reference;
  double diff = v.estimate.mean - reference;
  v.zscore = v.estimate.se > 0.0 ? diff / v.estimate.se
                                 : (diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff));
  v.pass = std::abs(v.zscore) <= 3.0;
  return v;
}

SignComparison compare_signs(const BrevePaths& minus, const BrevePaths& plus) {
  SignComparison out;
  out.minus_sign = summarize(minus.total);
  out.plus_sign = summarize(plus.total);
  double se = std::hypot(out.minus_sign.se, out.plus_sign.se);
  out.gap_sigma = se > 0.0 ? (out.plus_sign.mean - out.minus_sign.mean) / se : 0.0;
  return out;
}

Vec bellman_samples(const CoefficientSet& c, const RiccatiSolution& Pi, const BrevePaths& p,
                    int h_index) {
  Vec lhs = p.running_to_h + p.value_at_h;
  lhs.array() += diffusion_value(c, Pi, h_index);
  return lhs;
}

}  // namespace

ValueCheck check_value_function(const CoefficientSet& c, const RiccatiSolution& Pi,
                                const InitialCondition& xi, const SimOptions& opts,
                                double sign) {
  BrevePaths p = simulate_breve(c, Pi, xi, opts, sign, Pi.Pi.grid().steps);
  return make_check(p.total, value_reference(c, Pi, xi));
}

ValueCheck check_bellman(const CoefficientSet& c, const RiccatiSolution& Pi,
                         const InitialCondition& xi, int h_index, const SimOptions& opts) {
  BrevePaths p = simulate_breve(c, Pi, xi, opts, 1.0, h_index);
  return make_check(bellman_samples(c, Pi, p, h_index), value_reference(c, Pi, xi));
}

SignComparison compare_breve_signs(const CoefficientSet& c, const RiccatiSolution& Pi,
                                   const InitialCondition& xi, const SimOptions& opts) {
  const int N = Pi.Pi.grid().steps;
  return compare_signs(simulate_breve(c, Pi, xi, opts, 1.0, N),
                       simulate_breve(c, Pi, xi, opts, -1.0, N));
}

BreveValueStudy study_breve_value(const CoefficientSet& c, const RiccatiSolution& Pi,
                                  const InitialCondition& xi, int h_index,
                                  const SimOptions& opts) {
  BrevePaths minus = simulate_breve(c, Pi, xi, opts, 1.0, h_index);
  BrevePaths plus = simulate_breve(c, Pi, xi, opts, -1.0, h_index);
  double ref = value_reference(c, Pi, xi);
  BreveValueStudy out;
  out.value = make_check(minus.total, ref);
  out.bellman = make_check(bellman_samples(c, Pi, minus, h_index), ref);
  out.signs = compare_signs(minus, plus);
  return out;
}

}  // namespace cmvlq
