#pragma once

#include <cstdint>
#include <vector>

#include "cmvlq/coeffs.hpp"
#include "cmvlq/fbsde.hpp"
#include "cmvlq/riccati.hpp"

namespace cmvlq {

struct SimOptions {
  int n_paths = 100000;
  std::uint64_t seed = 42;
  int n_common_noise = 16;  // W⁰ paths shared across the ensemble
  int checkpoints = 10;
};

/// Closed-loop Monte Carlo ensemble. Path i uses common-noise path
/// i mod n_common_noise. Storage is per checkpoint (steps k = round(c·N/C)).
struct PathEnsemble {
  int n_paths = 0;
  int n_common_noise = 0;
  std::uint64_t seed = 0;
  TimeGrid grid;
  std::vector<int> checkpoint_steps;
  std::vector<Mat> x;             // n × n_paths per checkpoint
  std::vector<Mat> xbar;          // n × n_paths (companion F⁰ state)
  std::vector<Mat> u;             // d × n_paths, control at the checkpoint step (k < N)
  std::vector<Vec> running_cost;  // ½∫_0^{t_c} ℓ dt per path
  Vec total_cost;                 // running + terminal per path
  double increment_mean_w = 0.0;  // sample mean of all ΔW / √dt
  double increment_mean_w0 = 0.0;
};

struct ValueEstimate {
  double mean = 0.0;
  double se = 0.0;
  long n = 0;
};

ValueEstimate summarize(const Vec& samples);

/// Euler–Maruyama of the closed-loop system. The companion x̄ follows
///   dx̄ = [(A+F)x̄ + B ū + b]dt + D⁰dW⁰,  ū = −K̄x̄ − κ,
/// and x the full system with u = −K̆(x − x̄) + ū. ξ̆ is drawn Gaussian with
/// the covariance of the initial atoms. Tree-backend policies are lifted
/// piecewise constant: the W⁰ node at step k is the sign pattern of the
/// common increments so far, which requires grid == policy grid.
PathEnsemble simulate_forward(const OptimalPolicy& policy, const CoefficientSet& c,
                              const InitialCondition& xi, const SimOptions& opts);

/// Per-path cost mean and standard error.
ValueEstimate estimate_cost(const PathEnsemble& ens);

/// Per checkpoint: mean of x − x̄ over all paths and over each common-noise
/// group, in units of its standard error. Returns the largest |z|.
double conditional_zero_zscore(const PathEnsemble& ens);

struct ValueCheck {
  ValueEstimate estimate;  // Monte Carlo J̆ (or Bellman left-hand side)
  double reference = 0.0;  // ½E[ξ̆ᵀΠ₀ξ̆] + ½∫DᵀΠD dt
  double zscore = 0.0;     // (estimate − reference) / se
  bool pass = false;       // |zscore| ≤ 3
};

/// Breve closed loop dz = (A − B K̆) z dt + D dW with K̆ = sign·R⁻¹(ΠB+S)ᵀ
/// (sign = +1 for the minimising feedback α = −K̆z), from Gaussian ξ̆.
/// Deterministic coefficients, ODE-backend Π on `grid`.
ValueCheck check_value_function(const CoefficientSet& c, const RiccatiSolution& Pi,
                                const InitialCondition& xi, const SimOptions& opts,
                                double sign = 1.0);

/// E[∫_0^{t_h} running cost + ½ z_hᵀΠ_h z_h] + ½∫_{t_h}^T DᵀΠD against the
/// same reference, under the minimising breve feedback.
ValueCheck check_bellman(const CoefficientSet& c, const RiccatiSolution& Pi,
                         const InitialCondition& xi, int h_index, const SimOptions& opts);

/// Paired per-path costs of the breve policy with sign +1 and −1 (the
/// destabilising plus-sign feedback), same noise. `gap_sigma` is the mean difference over
/// the combined standard error sqrt(se₊² + se₋²).
struct SignComparison {
  ValueEstimate minus_sign;  // α = −R⁻¹(ΠB+S)ᵀz
  ValueEstimate plus_sign;   // α = +R⁻¹(ΠB+S)ᵀz
  double gap_sigma = 0.0;
};

SignComparison compare_breve_signs(const CoefficientSet& c, const RiccatiSolution& Pi,
                                   const InitialCondition& xi, const SimOptions& opts);

/// Value, Bellman and sign checks from two ensembles (minimising and plus
/// sign) instead of four; results equal the individual calls bit for bit.
struct BreveValueStudy {
  ValueCheck value;
  ValueCheck bellman;
  SignComparison signs;
};

BreveValueStudy study_breve_value(const CoefficientSet& c, const RiccatiSolution& Pi,
                                  const InitialCondition& xi, int h_index,
                                  const SimOptions& opts);

/// ½∫_{t_h}^T DᵀΠD dt by the trapezoidal rule on the Π grid.
double diffusion_value(const CoefficientSet& c, const RiccatiSolution& Pi, int h_index);

}  // namespace cmvlq
