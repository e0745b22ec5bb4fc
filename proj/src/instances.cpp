#include "cmvlq/instances.hpp"

#include <cmath>
#include <random>

namespace cmvlq {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

struct Draw {
  std::mt19937_64 rng;
  std::uniform_real_distribution<double> unit{-1.0, 1.0};

  double operator()() { return unit(rng); }
  Mat mat(int r, int c) {
    Mat m(r, c);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) m(i, j) = (*this)();
    return m;
  }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  double range(double lo, double hi) { return lo + (hi - lo) * 0.5 * ((*this)() + 1.0); }
};

template <class V>
AffineProcess<V> random_process(Draw& draw, int pieces, int rows, int cols, bool slope) {
  AffineProcess<V> p;
  for (int k = 0; k < pieces; ++k) {
    p.base.push_back(draw.mat(rows, cols));
    if (slope) p.slope.push_back(draw.mat(rows, cols));
  }
  return p;
}

}  // namespace

Instance random_instance(std::uint64_t seed, const InstanceOptions& opts) {
  Draw draw{std::mt19937_64(mix_seed(seed, 0x1a57))};
  const int n = draw.integer(1, opts.max_n);
  const int d = draw.integer(1, opts.max_d);
  const int N = draw.integer(opts.min_steps, opts.max_steps);
  const double T = opts.max_horizon > opts.min_horizon
                       ? draw.range(opts.min_horizon, opts.max_horizon)
                       : opts.min_horizon;
  const bool slope = opts.random_coefficients;

  Instance inst;
  inst.seed = seed;
  inst.grid = TimeGrid::make(N, T);
  CoefficientSet& c = inst.coeffs;
  c = CoefficientSet::zeros(n, d, T);
  c.A = random_process<Mat>(draw, N, n, n, slope);
  c.F = random_process<Mat>(draw, N, n, n, slope);
  c.B = random_process<Mat>(draw, N, n, d, slope);
  c.b = random_process<Vec>(draw, N, n, 1, slope);
  c.D = random_process<Vec>(draw, N, n, 1, slope);
  c.D0 = random_process<Vec>(draw, N, n, 1, slope);
  c.zeta = random_process<Vec>(draw, N, n, 1, slope);
  c.varpi = random_process<Vec>(draw, N, d, 1, slope);

  // Largest |W⁰| reachable on the tree.
  const double w0_max = std::sqrt(T * N);
  c.S.base.clear();
  c.R.base.clear();
  c.Q.base.clear();
  for (int k = 0; k < N; ++k) {
    Mat M = draw.mat(d, d);
    Mat R = symmetrize(M.transpose() * M + Mat::Identity(d, d));
    Mat S = draw.mat(n, d);
    Mat K = draw.mat(n, n);
    Mat Q = K.transpose() * K + S * R.llt().solve(S.transpose()) +
            0.5 * Mat::Identity(n, n);
    c.R.base.push_back(R);
    c.S.base.push_back(S);
    c.Q.base.push_back(symmetrize(Q));
    if (slope) {
      Mat G = draw.mat(n, n);
      Mat Qs = symmetrize(G);
      double norm = Qs.cwiseAbs().rowwise().sum().maxCoeff();  // ≥ spectral norm
      if (norm > 0.0) Qs *= 0.45 / (norm * w0_max);
      c.Q.slope.push_back(Qs);
    }
  }
  c.H = draw.mat(n, n);
  Mat Lt = draw.mat(n, n);
  c.QT = symmetrize(Lt.transpose() * Lt);

  const int M = std::max(1, opts.atoms);
  inst.xi.mean = draw.mat(n, 1);
  inst.xi.atoms = Mat::Zero(n, M);
  inst.xi.probs.assign(M, 1.0 / M);
  if (M > 1) {
    double total = 0.0;
    for (int a = 0; a < M; ++a) total += (inst.xi.probs[a] = draw.range(0.5, 1.5));
    for (auto& p : inst.xi.probs) p /= total;
    Vec centre = Vec::Zero(n);
    for (int a = 0; a < M; ++a) {
      inst.xi.atoms.col(a) = draw.mat(n, 1);
      centre += inst.xi.probs[a] * inst.xi.atoms.col(a);
    }
    for (int a = 0; a < M; ++a) inst.xi.atoms.col(a) -= centre;
  }
  return inst;
}

Instance tanh_instance(int steps, double horizon) {
  Instance inst;
  inst.grid = TimeGrid::make(steps, horizon);
  CoefficientSet& c = inst.coeffs;
  c = CoefficientSet::zeros(1, 1, horizon);
  c.B = MatrixProcess::constant(Mat::Ones(1, 1));
  c.Q = MatrixProcess::constant(Mat::Ones(1, 1));
  inst.xi.mean = Vec::Zero(1);
  inst.xi.atoms = Mat(1, 2);
  inst.xi.atoms << 1.0, -1.0;
  inst.xi.probs = {0.5, 0.5};
  return inst;
}

}  // namespace cmvlq
