#pragma once

#include <cstdint>

#include "cmvlq/coeffs.hpp"
#include "cmvlq/lattice.hpp"

namespace cmvlq {

/// Forward recursion of the McKean-Vlasov state on the tree:
///   x_{k+1} = x_k + dt(A x_k + B u_k + F x̄_k + b) + D ΔW + D⁰ ΔW⁰,
/// x̄_k = E[x_k | F⁰] exact, coefficients read at the node's W⁰ prefix.
/// Root node of atom a starts at ξ.mean + ξ.atoms(:, a).
TreeProcess simulate_mft_state(const CoefficientSet& c, const InitialCondition& xi,
                               const TreeProcess& u, const JointTree& tree);

/// y_{k+1} = y + dt((A+F) y + B v + b) + D⁰ ΔW⁰ from y_0 = ξ̄. F⁰-adapted.
TreeProcess simulate_bar_state(const BarCoefficients& cb, const Vec& xi_bar,
                               const TreeProcess& v, const JointTree& tree);

/// z_{k+1} = z + dt(A z + B α) + D ΔW from the centred atoms of ξ.
TreeProcess simulate_breve_state(const CoefficientSet& c, const InitialCondition& xi,
                                 const TreeProcess& alpha, const JointTree& tree);

/// The bar problem written in the McKean-Vlasov form: drift A+F, F = H = 0,
/// D = 0, weights Q̄, S̄, ζ̄, Q̄_T. Its MFT cost is the bar cost.
CoefficientSet bar_as_mft(const BarCoefficients& cb);

/// The breve problem in McKean-Vlasov form: F = H = 0 and b = D⁰ = ζ = ϖ = 0.
CoefficientSet breve_as_mft(const CoefficientSet& c);

struct SplitPair {
  TreeProcess xbar, ubar;
  TreeProcess xbreve, ubreve;
};

SplitPair split_pair(const TreeProcess& x, const TreeProcess& u, const JointTree& tree);

/// J(u), exact tree sum with left-point Riemann weights.
double eval_cost_mft(const CoefficientSet& c, const TreeProcess& x, const TreeProcess& u,
                     const JointTree& tree);

/// J̄(v). Throws an adaptedness error when y or v varies across W branches.
double eval_cost_bar(const BarCoefficients& cb, const TreeProcess& y, const TreeProcess& v,
                     const JointTree& tree);

/// J̆(α). Throws a constraint error when E[α|F⁰] or E[z|F⁰] exceeds 1e−12.
double eval_cost_breve(const CoefficientSet& c, const TreeProcess& z, const TreeProcess& alpha,
                       const JointTree& tree);

struct DecompositionCheck {
  double J = 0.0;
  double J_bar = 0.0;
  double J_breve = 0.0;
  double residual = 0.0;  // |J − J̄ − J̆|
};

DecompositionCheck check_decomposition(const CoefficientSet& c, const TreeProcess& x,
                                       const TreeProcess& u, const JointTree& tree);

/// Relative defects |lhs − rhs| / max(1, |lhs|) of the five expectation
/// identities behind the cost decomposition.
struct LemmaReport {
  double zeta_term = 0.0;   // E[ζᵀ(x−Hx̄)] = E[ζ̄ᵀx̄]
  double varpi_term = 0.0;  // E[ϖᵀu] = E[ϖᵀū]
  double r_term = 0.0;      // E[uᵀRu] = E[ŭᵀRŭ] + E[ūᵀRū]
  double s_term = 0.0;      // E[(x−Hx̄)ᵀSu] = E[x̆ᵀSŭ] + E[x̄ᵀS̄ū]
  double q_term = 0.0;      // E[(x−Hx̄)ᵀQ(x−Hx̄)] = E[x̆ᵀQx̆] + E[x̄ᵀQ̄x̄]
  double max() const;
};

/// Identities are taken as time integrals E∫·dt over control steps, with the
/// Q identity also applied to the terminal layer.
LemmaReport lemma_identities(const CoefficientSet& c, const TreeProcess& x,
                             const TreeProcess& u, const JointTree& tree);

/// Node-wise sup |x(v+α) − (y(v) + z(α))| with y, z driven from ξ̄ and ξ̆.
double admissibility_defect(const CoefficientSet& c, const InitialCondition& xi,
                            const TreeProcess& v, const TreeProcess& alpha,
                            const JointTree& tree);

/// Standard normal node controls; `tag = common` makes them constant on W⁰
/// groups. Deterministic in (seed, node).
TreeProcess random_control(const JointTree& tree, int d, std::uint64_t seed,
                           Adaptedness tag = Adaptedness::full);

struct ConvexityReport {
  double margin_mft = 0.0;
  double margin_bar = 0.0;
  double margin_breve = 0.0;
  int samples = 0;
};

/// Minimum Rayleigh quotients (quadratic cost without the ½) / E∫|u|²dt on
/// the homogeneous zero-initial systems. The MFT samples are
/// u = cos θ·v + sin θ·α built from the bar and breve samples.
ConvexityReport estimate_convexity_margin(const CoefficientSet& c, const JointTree& tree,
                                          int n_samples, std::uint64_t seed);

/// 2·J(u) for the system with b = D = D⁰ = ζ = ϖ = 0 and zero initial state.
double homogeneous_cost(const CoefficientSet& c, const TreeProcess& u, const JointTree& tree);

}  // namespace cmvlq
