#pragma once

#include <cstdint>

#include "cmvlq/coeffs.hpp"

namespace cmvlq {

struct InstanceOptions {
  int max_n = 3;
  int max_d = 2;
  int min_steps = 1;
  int max_steps = 6;
  double min_horizon = 0.5;
  double max_horizon = 1.0;
  int atoms = 2;
  bool random_coefficients = true;
};

struct Instance {
  CoefficientSet coeffs;
  InitialCondition xi;
  TimeGrid grid;
  std::uint64_t seed = 0;
};

/// Seeded random instance satisfying the convexity condition at every tree node by
/// construction: R = MᵀM + I, Q = KᵀK + SR⁻¹Sᵀ + ½I plus a W⁰-slope bounded
/// so the ½I cushion is never used up on the tree, Q_T = LᵀL. S and R are
/// deterministic; everything else gets uniform [−1, 1] bases and slopes, one
/// time piece per step.
Instance random_instance(std::uint64_t seed, const InstanceOptions& opts = {});

/// Scalar A = S = 0, B = R = Q = 1, Q_T = 0 on [0, T], where
/// Π(t) = tanh(T − t). ξ̆ = ±1 with equal weight and zero mean; D = 0.
Instance tanh_instance(int steps, double horizon = 1.0);

/// splitmix64 finaliser, used to derive independent substream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace cmvlq
