#pragma once

#include <vector>

#include "cmvlq/coeffs.hpp"
#include "cmvlq/lattice.hpp"
#include "cmvlq/riccati.hpp"

namespace cmvlq {

inline constexpr double kTolBackwardResidual = 1e-9;
inline constexpr double kTolRepresentation = 1e-10;

/// Feedback law u = −K̆ (x − x̄) − K̄ x̄ − κ per (step, W⁰ node).
///
/// Tree backend: the exact discrete gains
///   K̆ = (R + dt BᵀΠ̂B)⁻¹ (S + (I + A dt)ᵀ Π̂ B)ᵀ, likewise K̄ with L̂, A+F, S̄,
///   κ = (R + dt BᵀL̂B)⁻¹ (ϖ + Bᵀ(L̂ b dt + g̃)).
/// ODE backend: K̆ = R⁻¹(ΠB+S)ᵀ, K̄ = R⁻¹(LB+S̄)ᵀ, κ = R⁻¹(Bᵀℓ+ϖ) at t_k.
struct OptimalPolicy {
  NodeField<Mat> K_breve;
  NodeField<Mat> K_bar;
  NodeField<Vec> kappa;

  Backend backend() const { return K_breve.backend(); }
  const TimeGrid& grid() const { return K_breve.grid(); }
  /// Flips the sign of the breve feedback only (used by the sign study).
  OptimalPolicy with_breve_sign(double sign) const;
};

OptimalPolicy make_policy(const CoefficientSet& c, const RiccatiSolution& Pi,
                          const BarRiccatiSolution& L, const OffsetSolution& ell,
                          const TimeGrid& grid);

struct BarFbsdeSolution {
  TreeProcess xbar;   // x̄*
  TreeProcess p;      // p* = L x̄* + ℓ
  TreeProcess p_hat;  // E[p*_{k+1} | F_k], control layers only
  TreeProcess q;      // E[p*_{k+1} ΔW⁰ | F_k] / dt
  TreeProcess ubar;   // −K̄ x̄* − κ
  double backward_residual = 0.0;
};

struct BreveFbsdeSolution {
  TreeProcess xbreve;      // x̆*
  TreeProcess lambda;      // λ* = Π x̆*
  TreeProcess lambda_hat;  // E[λ*_{k+1} | F_k]
  TreeProcess beta;        // E[λ*_{k+1} ΔW | F_k] / dt
  TreeProcess beta0;       // E[λ*_{k+1} ΔW⁰ | F_k] / dt
  TreeProcess ubreve;      // −K̆ x̆*
  double backward_residual = 0.0;
};

/// Closed-loop bar state and the ansatz adjoint. Throws ResidualError when
/// p_k − [(I+(A+F)dt)ᵀ p̂_k + dt(Q̄x̄ + S̄ū + ζ̄)] exceeds 1e−9·max(1, |p|).
BarFbsdeSolution solve_bar_fbsde(const BarCoefficients& cb, const BarRiccatiSolution& L,
                                 const OffsetSolution& ell, const Vec& xi_bar,
                                 const JointTree& tree);

/// Closed-loop breve state from ξ̆ and λ* = Π x̆*, with the matching
/// backward residual check.
BreveFbsdeSolution solve_breve_fbsde(const CoefficientSet& c, const RiccatiSolution& Pi,
                                     const InitialCondition& xi, const JointTree& tree);

struct AssembledControl {
  TreeProcess u;  // −R⁻¹[S̄ᵀx̄* + Sᵀx̆* + Bᵀ(λ̂* + p̂*) + ϖ]
  OptimalPolicy policy;
  double representation_gap = 0.0;  // sup |u − feedback form|
};

/// Throws ResidualError if the adjoint and feedback representations differ
/// by more than 1e−10 at some node.
AssembledControl assemble_optimal_control(const BarFbsdeSolution& bar,
                                          const BreveFbsdeSolution& breve,
                                          const CoefficientSet& c, const RiccatiSolution& Pi,
                                          const BarRiccatiSolution& L,
                                          const OffsetSolution& ell, const JointTree& tree);

struct StationarityResiduals {
  double bar = 0.0;    // max |Rū + S̄ᵀx̄* + Bᵀp̂* + ϖ|
  double breve = 0.0;  // max |Rŭ + Sᵀx̆* + Bᵀλ̂*|
};

/// Residuals of the two optimality conditions for a control u, split into
/// ū = E[u|F⁰] and ŭ = u − ū, against the adjoints of the FBSDE solutions.
StationarityResiduals verify_stationarity(const CoefficientSet& c, const BarFbsdeSolution& bar,
                                          const BreveFbsdeSolution& breve, const TreeProcess& u,
                                          const JointTree& tree);

/// Discrete counterparts of the martingale-term identities:
///   q_k = Ψ̄⁰ m̄ + L̂ D⁰ + ψ⁰, β_k = Π̂ D, β⁰_k = Ψ⁰ m̆, returned as max defects.
struct FeedFormDefects {
  double q = 0.0;
  double beta = 0.0;
  double beta0 = 0.0;
};

FeedFormDefects feedform_identities(const CoefficientSet& c, const RiccatiSolution& Pi,
                                    const BarRiccatiSolution& L, const OffsetSolution& ell,
                                    const BarFbsdeSolution& bar, const BreveFbsdeSolution& breve,
                                    const JointTree& tree);

struct PicardOptions {
  double damping = 0.5;
  int max_iter = 200;
  double tol = 1e-10;
};

struct CoupledSolution {
  TreeProcess x;  // x°
  TreeProcess u;  // u°
  TreeProcess y;  // adjoint y°
  std::vector<double> residual_history;  // sup-norm control change per iteration
  int iterations = 0;
};

/// Damped Picard iteration on the coupled McKean-Vlasov FBSDE. Forward:
/// u° = −R⁻¹[Sᵀ(x° − Hx̄°) + Bᵀ E[y°_{k+1}|F_k] + ϖ]. Backward, with
/// e = x° − Hx̄° and ŷ = E[y°_{k+1}|F_k]:
///   y_k = (I + A dt)ᵀŷ + dt(Qe + Su° + ζ)
///         + E[dt Fᵀŷ − dt Hᵀ(Qe + Su° + ζ) | F⁰],
///   y_N = Q_T e_N − E[HᵀQ_T e_N | F⁰].
/// The adjoint is relaxed y ← damping·y_new + (1 − damping)·y. Throws
/// ConvergenceError (with the history) if max_iter is reached.
CoupledSolution solve_coupled_mv_fbsde(const CoefficientSet& c, const InitialCondition& xi,
                                       const JointTree& tree, const PicardOptions& opts = {});

/// Everything the decomposition route produces on one tree instance.
struct DecompositionSolution {
  RiccatiSolution Pi;
  BarRiccatiSolution L;
  OffsetSolution ell;
  BarFbsdeSolution bar;
  BreveFbsdeSolution breve;
  AssembledControl control;
  TreeProcess x;  // MFT state under u*
  double J = 0.0;
  double J_bar = 0.0;
  double J_breve = 0.0;
  StationarityResiduals stationarity;
};

DecompositionSolution solve_decomposition(const CoefficientSet& c, const InitialCondition& xi,
                                          const JointTree& tree);

}  // namespace cmvlq
