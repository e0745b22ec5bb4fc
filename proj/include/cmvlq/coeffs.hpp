#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmvlq/lattice.hpp"
#include "cmvlq/types.hpp"

namespace cmvlq {

inline constexpr double kTolPsd = 1e-10;
inline constexpr double kTolSymmetry = 1e-12;

/// Piecewise-constant-in-time process, affine in the cumulative common noise:
/// value(k, w⁰) = base[p] + slope[p]·w⁰ with p = ⌊k·pieces/N⌋. An empty slope
/// makes the process deterministic.
template <class Value>
struct AffineProcess {
  std::vector<Value> base;
  std::vector<Value> slope;

  static AffineProcess constant(Value v) { return {{std::move(v)}, {}}; }

  int pieces() const { return static_cast<int>(base.size()); }
  bool has_slope() const { return !slope.empty(); }
  bool deterministic() const {
    for (const auto& s : slope)
      if (s.size() > 0 && s.cwiseAbs().maxCoeff() != 0.0) return false;
    return true;
  }
  int piece_index(int k, int steps) const {
    int p = static_cast<int>(static_cast<std::int64_t>(k) * pieces() / steps);
    return p < pieces() ? p : pieces() - 1;
  }
  Value at(int k, int steps, double w0) const {
    int p = piece_index(k, steps);
    if (!has_slope()) return base[p];
    return base[p] + slope[p] * w0;
  }
  /// Same process on a finer piece partition; `pieces_out` must be a
  /// multiple of pieces().
  AffineProcess resample(int pieces_out) const {
    AffineProcess out;
    int m = pieces_out / pieces();
    for (int q = 0; q < pieces_out; ++q) {
      out.base.push_back(base[q / m]);
      if (has_slope()) out.slope.push_back(slope[q / m]);
    }
    return out;
  }
};

using MatrixProcess = AffineProcess<Mat>;
using VectorProcess = AffineProcess<Vec>;

/// Coefficients frozen at one (step, W⁰ node).
struct StepCoefficients {
  Mat A, F, B, S, Q, R;
  Vec b, D, D0, zeta, varpi;
};

struct CoefficientSet {
  int n = 1;
  int d = 1;
  double horizon = 1.0;
  MatrixProcess A, F, B, S, Q, R;
  VectorProcess b, D, D0, zeta, varpi;
  Mat H;
  Mat QT;

  /// n×n / n×d / d×d zero processes, R = I, H = Q_T = 0.
  static CoefficientSet zeros(int n, int d, double horizon);

  bool deterministic() const;
  StepCoefficients at(int k, int steps, double w0) const;
};

/// Initial condition ξ = mean + atom offset, the offsets forming the
/// idiosyncratic part ξ̆ = ξ − E[ξ]. Stored as n × M with weights summing to
/// one and zero weighted mean. M = 1 with a zero column is a deterministic ξ.
struct InitialCondition {
  Vec mean;
  Mat atoms;
  std::vector<double> probs;

  static InitialCondition deterministic(Vec mean);
  int count() const { return static_cast<int>(probs.size()); }
  /// E[ξ̆ ξ̆ᵀ].
  Mat covariance() const;
  void validate(int n) const;
};

/// StepCoefficients evaluated once per (step, W⁰ node) of a tree grid, or
/// once per step when the coefficients are deterministic.
class NodeCoefficients {
 public:
  NodeCoefficients(const CoefficientSet& c, const TimeGrid& grid);
  const StepCoefficients& at(int k, int w0_id) const {
    return values_[k][random_ ? w0_id : 0];
  }

 private:
  bool random_;
  std::vector<std::vector<StepCoefficients>> values_;
};

struct BarStep {
  Mat Abar, B, Sbar, Qbar, R;
  Vec b, D0, zetabar, varpi;
};

/// Coefficients of the F⁰-adapted (bar) problem.
struct BarCoefficients {
  int n = 1;
  int d = 1;
  double horizon = 1.0;
  MatrixProcess Abar, B, Sbar, Qbar, R;
  VectorProcess b, D0, zetabar, varpi;
  Mat QbarT;

  bool deterministic() const;
  BarStep at(int k, int steps, double w0) const;
};

struct ValidationReport {
  double delta_hat = 0.0;
  double schur_min = 0.0;
  double qt_min = 0.0;
  bool pass = false;
};

ValidationReport validate_coefficients(const CoefficientSet& c,
                                       const TimeGrid& grid);

/// Throws on dimension errors only. Called by every solver entry point.
void check_dimensions(const CoefficientSet& c);

BarCoefficients bar_transform(const CoefficientSet& c);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Mat& m);

}  // namespace cmvlq
