#include "cmvlq/coeffs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>

#include "cmvlq/error.hpp"

namespace cmvlq {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::symmetry: return "symmetry";
    case ErrorKind::capacity: return "capacity";
    case ErrorKind::adaptedness: return "adaptedness";
    case ErrorKind::constraint: return "constraint";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::config: return "config";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

static std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    if (!out.empty()) out += "; ";
    out += l;
  }
  return out;
}

ConfigError::ConfigError(std::vector<std::string> messages)
    : Error(ErrorKind::config, join_lines(messages)), messages_(std::move(messages)) {}

CoefficientSet CoefficientSet::zeros(int n, int d, double horizon) {
  CoefficientSet c;
  c.n = n;
  c.d = d;
  c.horizon = horizon;
  c.A = MatrixProcess::constant(Mat::Zero(n, n));
  c.F = MatrixProcess::constant(Mat::Zero(n, n));
  c.B = MatrixProcess::constant(Mat::Zero(n, d));
  c.S = MatrixProcess::constant(Mat::Zero(n, d));
  c.Q = MatrixProcess::constant(Mat::Zero(n, n));
  c.R = MatrixProcess::constant(Mat::Identity(d, d));
  c.b = VectorProcess::constant(Vec::Zero(n));
  c.D = VectorProcess::constant(Vec::Zero(n));
  c.D0 = VectorProcess::constant(Vec::Zero(n));
  c.zeta = VectorProcess::constant(Vec::Zero(n));
  c.varpi = VectorProcess::constant(Vec::Zero(d));
  c.H = Mat::Zero(n, n);
  c.QT = Mat::Zero(n, n);
  return c;
}

bool CoefficientSet::deterministic() const {
  return A.deterministic() && F.deterministic() && B.deterministic() &&
         S.deterministic() && Q.deterministic() && R.deterministic() &&
         b.deterministic() && D.deterministic() && D0.deterministic() &&
         zeta.deterministic() && varpi.deterministic();
}

StepCoefficients CoefficientSet::at(int k, int steps, double w0) const {
  return StepCoefficients{A.at(k, steps, w0),     F.at(k, steps, w0),
                          B.at(k, steps, w0),     S.at(k, steps, w0),
                          Q.at(k, steps, w0),     R.at(k, steps, w0),
                          b.at(k, steps, w0),     D.at(k, steps, w0),
                          D0.at(k, steps, w0),    zeta.at(k, steps, w0),
                          varpi.at(k, steps, w0)};
}

NodeCoefficients::NodeCoefficients(const CoefficientSet& c, const TimeGrid& grid)
    : random_(!c.deterministic()), values_(grid.steps) {
  if (random_ && grid.steps > kMaxTreeSteps)
    throw Error(ErrorKind::capacity, "W0-dependent coefficients need at most " +
                                         std::to_string(kMaxTreeSteps) + " steps");
  for (int k = 0; k < grid.steps; ++k) {
    int count = random_ ? common_node_count(k) : 1;
    values_[k].reserve(count);
    for (int j = 0; j < count; ++j)
      values_[k].push_back(c.at(k, grid.steps, random_ ? common_noise_value(grid, k, j) : 0.0));
  }
}

InitialCondition InitialCondition::deterministic(Vec mean) {
  InitialCondition ic;
  ic.atoms = Mat::Zero(mean.size(), 1);
  ic.mean = std::move(mean);
  ic.probs = {1.0};
  return ic;
}

Mat InitialCondition::covariance() const {
  Mat cov = Mat::Zero(atoms.rows(), atoms.rows());
  for (int a = 0; a < count(); ++a)
    cov += probs[a] * atoms.col(a) * atoms.col(a).transpose();
  return cov;
}

void InitialCondition::validate(int n) const {
  if (mean.size() != n || atoms.rows() != n ||
      atoms.cols() != static_cast<Eigen::Index>(probs.size()) || probs.empty())
    throw Error(ErrorKind::dimension, "initial condition does not match state dimension " +
                                          std::to_string(n));
  double total = 0.0;
  Vec centre = Vec::Zero(n);
  for (int a = 0; a < count(); ++a) {
    if (!(probs[a] > 0.0))
      throw Error(ErrorKind::invalid_argument, "initial atom probabilities must be positive");
    total += probs[a];
    centre += probs[a] * atoms.col(a);
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw Error(ErrorKind::invalid_argument, "initial atom probabilities must sum to one");
  double scale = std::max(1.0, atoms.cwiseAbs().maxCoeff());
  if (centre.cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw Error(ErrorKind::invalid_argument,
                "initial atoms must have zero weighted mean (they model the centred part)");
}

namespace {

template <class V>
void check_process(const AffineProcess<V>& p, const char* name, int rows, int cols) {
  if (p.base.empty())
    throw Error(ErrorKind::dimension, std::string(name) + " has no time pieces");
  if (p.has_slope() && p.slope.size() != p.base.size())
    throw Error(ErrorKind::dimension, std::string(name) +
                                          ".slope must have as many time pieces as the base");
  auto check_one = [&](const V& v, int piece, const char* part) {
    if (v.rows() != rows || v.cols() != cols)
      throw Error(ErrorKind::dimension,
                  std::string(name) + part + " piece " + std::to_string(piece) + " is " +
                      std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                      ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
    if (!v.allFinite())
      throw Error(ErrorKind::invalid_argument,
                  std::string(name) + part + " piece " + std::to_string(piece) +
                      " has non-finite entries");
  };
  for (int i = 0; i < p.pieces(); ++i) check_one(p.base[i], i, "");
  for (int i = 0; i < static_cast<int>(p.slope.size()); ++i) check_one(p.slope[i], i, ".slope");
}

void check_symmetric(const Mat& m, const std::string& what) {
  double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > kTolSymmetry)
    throw Error(ErrorKind::symmetry, what + " is not symmetric (max |M - M^T| = " +
                                         std::to_string(asym) + ")");
}

}  // namespace

void check_dimensions(const CoefficientSet& c) {
  if (c.n < 1 || c.d < 1)
    throw Error(ErrorKind::dimension, "state and control dimensions must be positive");
  if (!(c.horizon > 0.0))
    throw Error(ErrorKind::invalid_argument, "horizon must be positive");
  check_process(c.A, "A", c.n, c.n);
  check_process(c.F, "F", c.n, c.n);
  check_process(c.B, "B", c.n, c.d);
  check_process(c.S, "S", c.n, c.d);
  check_process(c.Q, "Q", c.n, c.n);
  check_process(c.R, "R", c.d, c.d);
  check_process(c.b, "b", c.n, 1);
  check_process(c.D, "D", c.n, 1);
  check_process(c.D0, "D0", c.n, 1);
  check_process(c.zeta, "zeta", c.n, 1);
  check_process(c.varpi, "varpi", c.d, 1);
  if (c.H.rows() != c.n || c.H.cols() != c.n)
    throw Error(ErrorKind::dimension, "H must be n x n");
  if (c.QT.rows() != c.n || c.QT.cols() != c.n)
    throw Error(ErrorKind::dimension, "QT must be n x n");
}

double min_eigenvalue(const Mat& m) {
  if (m.rows() == 1) return m(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

ValidationReport validate_coefficients(const CoefficientSet& c, const TimeGrid& grid) {
  check_dimensions(c);
  if (std::abs(grid.horizon - c.horizon) > 1e-14 * c.horizon)
    throw Error(ErrorKind::dimension, "grid horizon differs from coefficient horizon");
  const bool random = !c.deterministic();
  if (random && grid.steps > kMaxTreeSteps)
    throw Error(ErrorKind::capacity,
                "W0-dependent coefficients need tree mode, which supports at most " +
                    std::to_string(kMaxTreeSteps) + " steps");

  check_symmetric(c.QT, "QT");
  ValidationReport rep;
  rep.delta_hat = std::numeric_limits<double>::infinity();
  rep.schur_min = std::numeric_limits<double>::infinity();

  // Distinct cumulative W⁰ values at step k are √dt·(k − 2j), j = 0..k.
  const double sq = std::sqrt(grid.dt());
  for (int k = 0; k < grid.steps; ++k) {
    // Deterministic pieces repeat across steps; evaluate each piece once.
    if (!random && k > 0 &&
        c.Q.piece_index(k, grid.steps) == c.Q.piece_index(k - 1, grid.steps) &&
        c.R.piece_index(k, grid.steps) == c.R.piece_index(k - 1, grid.steps) &&
        c.S.piece_index(k, grid.steps) == c.S.piece_index(k - 1, grid.steps))
      continue;
    int values = random ? k + 1 : 1;
    for (int j = 0; j < values; ++j) {
      double w0 = random ? sq * (k - 2 * j) : 0.0;
      Mat Q = c.Q.at(k, grid.steps, w0);
      Mat R = c.R.at(k, grid.steps, w0);
      Mat S = c.S.at(k, grid.steps, w0);
      std::string where = " at step " + std::to_string(k) +
                          (random ? ", W0 = " + std::to_string(w0) : std::string());
      check_symmetric(Q, "Q" + where);
      check_symmetric(R, "R" + where);
      double dmin = min_eigenvalue(R);
      rep.delta_hat = std::min(rep.delta_hat, dmin);
      if (dmin > 0.0) {
        Mat schur = Q - S * R.ldlt().solve(S.transpose());
        rep.schur_min = std::min(rep.schur_min, min_eigenvalue(symmetrize(schur)));
      } else {
        rep.schur_min = -std::numeric_limits<double>::infinity();
      }
    }
  }
  rep.qt_min = min_eigenvalue(c.QT);
  rep.pass = rep.delta_hat > 0.0 && rep.schur_min >= -kTolPsd && rep.qt_min >= -kTolPsd;
  return rep;
}

namespace {

template <class V>
int lcm_pieces(int acc, const AffineProcess<V>& p) {
  return std::lcm(acc, p.pieces());
}

}  // namespace

BarCoefficients bar_transform(const CoefficientSet& c) {
  check_dimensions(c);
  const Mat IH = Mat::Identity(c.n, c.n) - c.H;
  const Mat IHt = IH.transpose();

  BarCoefficients out;
  out.n = c.n;
  out.d = c.d;
  out.horizon = c.horizon;
  out.B = c.B;
  out.R = c.R;
  out.b = c.b;
  out.D0 = c.D0;
  out.varpi = c.varpi;

  int K = lcm_pieces(c.A.pieces(), c.F);
  MatrixProcess A = c.A.resample(K), F = c.F.resample(K);
  bool slope = A.has_slope() || F.has_slope();
  for (int p = 0; p < K; ++p) {
    out.Abar.base.push_back(A.base[p] + F.base[p]);
    if (slope) {
      Mat s = Mat::Zero(c.n, c.n);
      if (A.has_slope()) s += A.slope[p];
      if (F.has_slope()) s += F.slope[p];
      out.Abar.slope.push_back(s);
    }
  }
  for (int p = 0; p < c.S.pieces(); ++p) {
    out.Sbar.base.push_back(IHt * c.S.base[p]);
    if (c.S.has_slope()) out.Sbar.slope.push_back(IHt * c.S.slope[p]);
  }
  for (int p = 0; p < c.zeta.pieces(); ++p) {
    out.zetabar.base.push_back(IHt * c.zeta.base[p]);
    if (c.zeta.has_slope()) out.zetabar.slope.push_back(IHt * c.zeta.slope[p]);
  }
  for (int p = 0; p < c.Q.pieces(); ++p) {
    out.Qbar.base.push_back(symmetrize(IHt * c.Q.base[p] * IH));
    if (c.Q.has_slope()) out.Qbar.slope.push_back(symmetrize(IHt * c.Q.slope[p] * IH));
  }
  out.QbarT = symmetrize(IHt * c.QT * IH);
  return out;
}

bool BarCoefficients::deterministic() const {
  return Abar.deterministic() && B.deterministic() && Sbar.deterministic() &&
         Qbar.deterministic() && R.deterministic() && b.deterministic() &&
         D0.deterministic() && zetabar.deterministic() && varpi.deterministic();
}

BarStep BarCoefficients::at(int k, int steps, double w0) const {
  return BarStep{Abar.at(k, steps, w0),  B.at(k, steps, w0),
                 Sbar.at(k, steps, w0),  Qbar.at(k, steps, w0),
                 R.at(k, steps, w0),     b.at(k, steps, w0),
                 D0.at(k, steps, w0),    zetabar.at(k, steps, w0),
                 varpi.at(k, steps, w0)};
}

}  // namespace cmvlq
