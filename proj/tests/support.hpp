#pragma once

#include <cmath>
#include <functional>

#include "cmvlq/coeffs.hpp"
#include "cmvlq/lattice.hpp"

namespace cmvlq::test {

inline Mat scalar(double v) { return Mat::Constant(1, 1, v); }
inline Vec scalar_vec(double v) { return Vec::Constant(1, v); }

/// Scalar problem with every coefficient zero except R = 1.
inline CoefficientSet scalar_zero(double horizon = 1.0) {
  return CoefficientSet::zeros(1, 1, horizon);
}

inline void set(MatrixProcess& p, double v) { p = MatrixProcess::constant(scalar(v)); }
inline void set(VectorProcess& p, double v) { p = VectorProcess::constant(scalar_vec(v)); }

/// The ±1 equiprobable centred initial condition around `mean`.
inline InitialCondition two_point(double mean = 0.0, double offset = 1.0) {
  InitialCondition xi;
  xi.mean = scalar_vec(mean);
  xi.atoms = Mat(1, 2);
  xi.atoms << offset, -offset;
  xi.probs = {0.5, 0.5};
  return xi;
}

/// Process with value f(k, node) on every node of layers 0..layers-1.
inline TreeProcess fill(const JointTree& tree, int dim, int layers, Adaptedness tag,
                        const std::function<Vec(int, std::size_t)>& f) {
  TreeProcess p(tree, dim, layers, tag);
  for (int k = 0; k < layers; ++k)
    for (std::size_t i = 0; i < tree.node_count(k); ++i) p.at(k, i) = f(k, i);
  return p;
}

inline double max_abs(const Mat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace cmvlq::test
