#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "cmvlq/coeffs.hpp"
#include "cmvlq/lattice.hpp"

namespace cmvlq {

enum class Backend { ode, tree };

std::string_view to_string(Backend b);
Backend parse_backend(std::string_view s);

/// Value per (step, W⁰ node). The ODE backend stores one value per step
/// (deterministic coefficients), the tree backend 2^k values at step k.
template <class Value>
class NodeField {
 public:
  NodeField() = default;
  NodeField(Backend backend, const TimeGrid& grid, const Value& fill)
      : backend_(backend), grid_(grid), values_(grid.steps + 1) {
    for (int k = 0; k <= grid.steps; ++k)
      values_[k].assign(backend == Backend::tree ? common_node_count(k) : 1, fill);
  }

  Backend backend() const { return backend_; }
  const TimeGrid& grid() const { return grid_; }
  int nodes(int k) const { return static_cast<int>(values_[k].size()); }

  const Value& at(int k, int w0 = 0) const {
    return values_[k][backend_ == Backend::tree ? w0 : 0];
  }
  Value& at(int k, int w0 = 0) { return values_[k][backend_ == Backend::tree ? w0 : 0]; }

  /// E[value_{k+1} | W⁰ node (k, w0)].
  Value next_mean(int k, int w0 = 0) const {
    if (backend_ == Backend::ode) return values_[k + 1][0];
    return 0.5 * (values_[k + 1][2 * w0] + values_[k + 1][2 * w0 + 1]);
  }
  /// E[value_{k+1} ΔW⁰ | W⁰ node (k, w0)] / dt: the discrete martingale
  /// integrand. Identically zero in ODE mode.
  Value martingale(int k, int w0 = 0) const {
    if (backend_ == Backend::ode) return 0.0 * values_[k + 1][0];
    double s = 0.5 / std::sqrt(grid_.dt());
    return s * (values_[k + 1][2 * w0] - values_[k + 1][2 * w0 + 1]);
  }

 private:
  Backend backend_ = Backend::ode;
  TimeGrid grid_;
  std::vector<std::vector<Value>> values_;
};

/// Π. In tree mode the martingale part Ψ⁰ is `Pi.martingale(k, w0)`.
struct RiccatiSolution {
  NodeField<Mat> Pi;
  Backend backend() const { return Pi.backend(); }
};

/// L, the bar-problem Riccati solution. Kept a distinct type from
/// RiccatiSolution so the two cannot be swapped at call sites.
struct BarRiccatiSolution {
  NodeField<Mat> L;
  Backend backend() const { return L.backend(); }
};

/// ℓ, with ℓ_N = 0 exactly; ψ⁰ is `ell.martingale(k, w0)` in tree mode.
struct OffsetSolution {
  NodeField<Vec> ell;
  Backend backend() const { return ell.backend(); }
};

/// Stochastic Riccati equation for Π.
///
/// ODE: fixed-step RK4 backward on
///   dΠ/dt = −[ΠÂ + ÂᵀΠ − ΠBR⁻¹BᵀΠ + Q − SR⁻¹Sᵀ],  Â = A − BR⁻¹Sᵀ,
/// symmetrised after every step; the coefficients on [t_k, t_{k+1}] are
/// those of step k. Tree: the exact discrete recursion with Ā = I + A·dt,
/// B̄ = B·dt, Π̂ = E[Π_{k+1} | W⁰ node]:
///   Π_k = ĀᵀΠ̂Ā + Q·dt − M G⁻¹ Mᵀ,  M = ĀᵀΠ̂B̄ + S·dt,  G = R·dt + B̄ᵀΠ̂B̄.
RiccatiSolution solve_pi(const CoefficientSet& c, const TimeGrid& grid, Backend backend);

/// The same recursion for L with A+F, S̄, Q̄, Q̄_T substituted, entering with
/// +Q̄ − S̄R⁻¹S̄ᵀ as in the Π equation.
BarRiccatiSolution solve_l(const BarCoefficients& cb, const TimeGrid& grid, Backend backend);

/// Offset ℓ with ℓ_N = 0.
///
/// ODE: RK4 backward on
///   dℓ/dt = −[(A+F − BR⁻¹(LB+S̄)ᵀ)ᵀℓ − (LB+S̄)R⁻¹ϖ + ζ̄ + Lb],
/// with L between grid points from cubic Hermite interpolation.
/// Tree: with g̃ = ℓ̂ + E[L_{k+1}ΔW⁰]D⁰ (the Ψ̄⁰D⁰ term realised exactly),
///   ℓ_k = ζ̄dt + Āᵀ(L̂b·dt + g̃) − M G⁻¹ (ϖdt + B̄ᵀ(L̂b·dt + g̃)).
OffsetSolution solve_offset(const BarCoefficients& cb, const BarRiccatiSolution& L,
                            const TimeGrid& grid, Backend backend);

/// Pieces shared by the tree recursions and the feedback gains at one node.
struct DiscreteStep {
  Mat Abar;     // I + A dt
  Mat Bbar;     // B dt
  Mat G;        // R dt + B̄ᵀ P̂ B̄
  Mat M;        // Āᵀ P̂ B̄ + S dt
  Eigen::LLT<Mat> G_llt;
};

/// Factorises G; throws a numerical error when G is not safely positive
/// definite. `where` names the node for the message.
DiscreteStep discrete_step(const Mat& A, const Mat& B, const Mat& S, const Mat& R,
                           const Mat& P_hat, double dt, const std::string& where);

}  // namespace cmvlq
