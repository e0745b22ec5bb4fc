#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cmvlq/types.hpp"

namespace cmvlq {

/// Uniform time grid t_k = k·dt, k = 0..steps, dt = horizon/steps.
struct TimeGrid {
  int steps = 1;
  double horizon = 1.0;

  static TimeGrid make(int steps, double horizon);

  double dt() const { return horizon / steps; }
  double time(int k) const { return horizon * k / steps; }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

/// Tree mode is exact but exponential: 4^10 ≈ 1.05e6 terminal nodes.
inline constexpr int kMaxTreeSteps = 10;

/// Value of the cumulative common noise W⁰ at W⁰-node `w0_id` of step k.
/// Bit j of the id (from the most significant of k bits) is the sign of the
/// j-th increment: 0 for +√dt, 1 for −√dt.
double common_noise_value(const TimeGrid& grid, int k, int w0_id);

inline int common_node_count(int k) { return 1 << k; }

/// Non-recombining binomial path tree for the pair (W⁰, W).
///
/// Each step splits every node into four equiprobable children, one per sign
/// pair of (ΔW⁰, ΔW) ∈ {+√dt, −√dt}². The root layer holds `atoms()` nodes,
/// one per atom of the idiosyncratic part of the initial condition (one atom
/// when the initial state is deterministic). A node's index at step k is
/// atom·4^k + code, where the branch code grows as code' = 4·code + 2·b⁰ + b
/// with b⁰, b the sign bits of ΔW⁰ and ΔW. Children of node i are therefore
/// 4i..4i+3, and ordering is lexicographic in (atom, increment history).
///
/// F⁰_k corresponds to the W⁰ prefix of a node, identified by `w0_id(k, i)`.
class JointTree {
 public:
  struct Node {
    int w0_path_id;
    std::int64_t w_path_id;  // atom and W history, packed
    double probability;
    double cum_w0;
    double cum_w;
  };

  /// Throws a capacity error for grid.steps > kMaxTreeSteps. Atom
  /// probabilities must be positive and sum to one; empty means one atom.
  static JointTree build(const TimeGrid& grid,
                         std::span<const double> atom_probs = {});

  const TimeGrid& grid() const { return grid_; }
  int steps() const { return grid_.steps; }
  int atoms() const { return static_cast<int>(atom_probs_.size()); }
  double atom_prob(int a) const { return atom_probs_[a]; }
  double dt() const { return grid_.dt(); }
  double sqrt_dt() const { return sqrt_dt_; }

  std::size_t node_count(int k) const { return node_count_[k]; }
  int w0_count(int k) const { return common_node_count(k); }

  int w0_id(int k, std::size_t node) const { return w0_id_[k][node]; }
  int atom_of(int k, std::size_t node) const {
    return static_cast<int>(node >> (2 * k));
  }
  double prob(int k, std::size_t node) const {
    return atom_probs_[atom_of(k, node)] * layer_scale_[k];
  }
  /// Probability of a W⁰ prefix at step k: 2^-k.
  double w0_prob(int k) const { return 1.0 / common_node_count(k); }
  double cum_w0(int k, std::size_t node) const { return cum_w0_[k][node]; }
  double cum_w(int k, std::size_t node) const { return cum_w_[k][node]; }
  Node node(int k, std::size_t i) const;

  /// Increments along the edge to child branch `br` ∈ [0, 4).
  double dw0(int br) const { return (br & 2) ? -sqrt_dt_ : sqrt_dt_; }
  double dw(int br) const { return (br & 1) ? -sqrt_dt_ : sqrt_dt_; }

  bool same_shape(const JointTree& other) const {
    return grid_ == other.grid_ && atom_probs_ == other.atom_probs_;
  }

 private:
  TimeGrid grid_;
  double sqrt_dt_ = 1.0;
  std::vector<double> atom_probs_;
  std::vector<double> layer_scale_;  // 4^-k
  std::vector<std::size_t> node_count_;
  std::vector<std::vector<int>> w0_id_;
  std::vector<std::vector<double>> cum_w0_;
  std::vector<std::vector<double>> cum_w_;
};

enum class Adaptedness {
  full,    // adapted to F = σ(W⁰, W, initial atoms)
  common,  // adapted to F⁰ = σ(W⁰)
};

/// Vector-valued process on the joint tree: layer k stores a dim × nodes(k)
/// matrix, one column per node. States use steps+1 layers, controls steps.
class TreeProcess {
 public:
  TreeProcess() = default;
  TreeProcess(const JointTree& tree, int dim, int layers, Adaptedness tag);

  int dim() const { return dim_; }
  int layers() const { return static_cast<int>(values_.size()); }
  Adaptedness tag() const { return tag_; }
  void set_tag(Adaptedness tag) { tag_ = tag; }
  int tree_steps() const { return tree_steps_; }
  int tree_atoms() const { return tree_atoms_; }

  Mat& layer(int k) { return values_[k]; }
  const Mat& layer(int k) const { return values_[k]; }
  auto at(int k, std::size_t node) { return values_[k].col(node); }
  auto at(int k, std::size_t node) const { return values_[k].col(node); }

  bool compatible(const JointTree& tree) const;
  bool same_layout(const TreeProcess& other) const;

  TreeProcess& operator+=(const TreeProcess& other);
  TreeProcess& operator-=(const TreeProcess& other);
  TreeProcess& operator*=(double s);

 private:
  int dim_ = 0;
  int tree_steps_ = 0;
  int tree_atoms_ = 0;
  Adaptedness tag_ = Adaptedness::full;
  std::vector<Mat> values_;
};

TreeProcess operator+(TreeProcess a, const TreeProcess& b);
TreeProcess operator-(TreeProcess a, const TreeProcess& b);
TreeProcess operator*(double s, TreeProcess a);

JointTree build_joint_tree(const TimeGrid& grid,
                           std::span<const double> atom_probs = {});

/// E[p | F⁰] node-wise: the probability-weighted average of p over all nodes
/// sharing a W⁰ prefix, broadcast back to those nodes. Exact. A process tagged
/// `common` must already be constant on W⁰ groups; otherwise this throws an
/// adaptedness error.
TreeProcess conditional_expectation_f0(const TreeProcess& p,
                                       const JointTree& tree);

/// p − E[p | F⁰].
TreeProcess project_breve(const TreeProcess& p, const JointTree& tree);

/// E ∫ uᵀv dt as Σ_k Σ_node prob·uᵀv·dt over control layers k < steps.
double inner_product(const TreeProcess& u, const TreeProcess& v,
                     const JointTree& tree, const TimeGrid& grid);

/// Largest deviation of p from its W⁰-group means.
double f0_adaptedness_defect(const TreeProcess& p, const JointTree& tree);

/// W⁰-group means of layer k of p as a dim × 2^k matrix.
Mat common_means(const TreeProcess& p, const JointTree& tree, int k);

/// E[next | F_k] for every node at step k: average over the four children.
Mat child_mean(const Mat& next_layer, const JointTree& tree, int k);

/// Sup-norm over all entries of all layers.
double sup_norm(const TreeProcess& p);

}  // namespace cmvlq
