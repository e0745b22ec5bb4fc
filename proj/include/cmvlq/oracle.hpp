#pragma once

#include <string_view>

#include "cmvlq/coeffs.hpp"
#include "cmvlq/lattice.hpp"

namespace cmvlq {

/// The oracle accepts trees up to this many steps (decision dimension
/// d · atoms · Σ_k 4^k).
inline constexpr int kMaxOracleSteps = 8;
inline constexpr int kMaxDirectDimension = 2000;

enum class QpMethod { automatic, direct, cg };

std::string_view to_string(QpMethod m);

/// Exact discrete McKean-Vlasov cost J as a function of all node controls,
/// with its gradient by forward simulation and adjoint accumulation. This is
/// coded independently of the decomposition module.
class MftQuadratic {
 public:
  MftQuadratic(const CoefficientSet& c, const InitialCondition& xi, const JointTree& tree);

  double cost(const TreeProcess& u) const;
  /// ∂J/∂u at every node (probability-weighted, not normalised).
  TreeProcess gradient(const TreeProcess& u) const;

  const JointTree& tree() const { return tree_; }
  int control_dim() const { return c_.d; }

 private:
  TreeProcess forward(const TreeProcess& u) const;

  CoefficientSet c_;
  InitialCondition xi_;
  const JointTree& tree_;
  NodeCoefficients coef_;
};

struct OracleSolution {
  TreeProcess u;
  double J = 0.0;
  double kkt_residual = 0.0;  // sup |∇J(u)| in the free variables
  double linear_norm = 0.0;  // sup |∇J(0)|
  int dimension = 0;
  QpMethod method = QpMethod::direct;
  int cg_iterations = 0;
};

/// Minimises J over unconstrained node controls. `automatic` picks the
/// direct method (Hessian assembled column by column, Cholesky) up to
/// dimension 2000 and Jacobi-preconditioned conjugate gradients beyond.
OracleSolution solve_qp_exact(const CoefficientSet& c, const InitialCondition& xi,
                              const JointTree& tree, QpMethod method = QpMethod::automatic);

/// Bar cost minimised over F⁰-adapted controls, one variable per W⁰ node.
OracleSolution solve_bar_qp(const CoefficientSet& c, const InitialCondition& xi,
                            const JointTree& tree, QpMethod method = QpMethod::automatic);

/// Breve cost minimised over conditionally centred controls; in each W⁰
/// group the last node's control is eliminated by the centring constraint.
OracleSolution solve_breve_qp(const CoefficientSet& c, const InitialCondition& xi,
                              const JointTree& tree, QpMethod method = QpMethod::automatic);

struct GapReport {
  double sup_gap = 0.0;
  double l2_gap = 0.0;
  double cost_gap = 0.0;  // |J_a − J_b| / max(1, |J_b|)
};

GapReport compare_solutions(const TreeProcess& u_a, double J_a, const TreeProcess& u_b,
                            double J_b, const JointTree& tree);

}  // namespace cmvlq
