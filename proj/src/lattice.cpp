#include "cmvlq/lattice.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "cmvlq/error.hpp"

namespace cmvlq {

TimeGrid TimeGrid::make(int steps, double horizon) {
  if (steps < 1)
    throw Error(ErrorKind::invalid_argument,
                "time grid needs at least one step, got " + std::to_string(steps));
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw Error(ErrorKind::invalid_argument, "time horizon must be positive");
  return TimeGrid{steps, horizon};
}

double common_noise_value(const TimeGrid& grid, int k, int w0_id) {
  int down = std::popcount(static_cast<unsigned>(w0_id));
  return std::sqrt(grid.dt()) * (k - 2 * down);
}

JointTree JointTree::build(const TimeGrid& grid,
                           std::span<const double> atom_probs) {
  if (grid.steps > kMaxTreeSteps)
    throw Error(ErrorKind::capacity,
                "tree mode supports at most " + std::to_string(kMaxTreeSteps) +
                    " steps (got " + std::to_string(grid.steps) +
                    "); use the ODE backend with Monte Carlo instead");
  TimeGrid checked = TimeGrid::make(grid.steps, grid.horizon);

  JointTree t;
  t.grid_ = checked;
  t.sqrt_dt_ = std::sqrt(checked.dt());
  if (atom_probs.empty()) {
    t.atom_probs_ = {1.0};
  } else {
    double total = 0.0;
    for (double p : atom_probs) {
      if (!(p > 0.0))
        throw Error(ErrorKind::invalid_argument,
                    "initial atom probabilities must be positive");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw Error(ErrorKind::invalid_argument,
                  "initial atom probabilities must sum to one");
    t.atom_probs_.assign(atom_probs.begin(), atom_probs.end());
  }

  const int steps = checked.steps;
  const std::size_t atoms = t.atom_probs_.size();
  t.layer_scale_.resize(steps + 1);
  t.node_count_.resize(steps + 1);
  t.w0_id_.resize(steps + 1);
  t.cum_w0_.resize(steps + 1);
  t.cum_w_.resize(steps + 1);

  t.layer_scale_[0] = 1.0;
  t.node_count_[0] = atoms;
  t.w0_id_[0].assign(atoms, 0);
  t.cum_w0_[0].assign(atoms, 0.0);
  t.cum_w_[0].assign(atoms, 0.0);
  for (int k = 0; k < steps; ++k) {
    std::size_t nodes = t.node_count_[k] * 4;
    t.layer_scale_[k + 1] = t.layer_scale_[k] * 0.25;
    t.node_count_[k + 1] = nodes;
    auto& id = t.w0_id_[k + 1];
    auto& w0 = t.cum_w0_[k + 1];
    auto& w = t.cum_w_[k + 1];
    id.resize(nodes);
    w0.resize(nodes);
    w.resize(nodes);
    for (std::size_t i = 0; i < t.node_count_[k]; ++i) {
      for (int br = 0; br < 4; ++br) {
        std::size_t c = 4 * i + br;
        id[c] = 2 * t.w0_id_[k][i] + (br >> 1);
        w0[c] = t.cum_w0_[k][i] + t.dw0(br);
        w[c] = t.cum_w_[k][i] + t.dw(br);
      }
    }
  }
  return t;
}

JointTree build_joint_tree(const TimeGrid& grid,
                           std::span<const double> atom_probs) {
  return JointTree::build(grid, atom_probs);
}

JointTree::Node JointTree::node(int k, std::size_t i) const {
  // W history: odd bits of the branch code, with the atom above them.
  std::int64_t code = static_cast<std::int64_t>(i & ((std::size_t{1} << (2 * k)) - 1));
  std::int64_t w_hist = 0;
  for (int j = k - 1; j >= 0; --j) w_hist = 2 * w_hist + ((code >> (2 * j)) & 1);
  std::int64_t packed = (static_cast<std::int64_t>(atom_of(k, i)) << k) | w_hist;
  return Node{w0_id(k, i), packed, prob(k, i), cum_w0(k, i), cum_w(k, i)};
}

TreeProcess::TreeProcess(const JointTree& tree, int dim, int layers,
                         Adaptedness tag)
    : dim_(dim), tree_steps_(tree.steps()), tree_atoms_(tree.atoms()), tag_(tag) {
  if (dim < 1 || layers < 1 || layers > tree.steps() + 1)
    throw Error(ErrorKind::dimension, "invalid tree process shape");
  values_.reserve(layers);
  for (int k = 0; k < layers; ++k)
    values_.push_back(Mat::Zero(dim, static_cast<Eigen::Index>(tree.node_count(k))));
}

bool TreeProcess::compatible(const JointTree& tree) const {
  return tree_steps_ == tree.steps() && tree_atoms_ == tree.atoms();
}

bool TreeProcess::same_layout(const TreeProcess& o) const {
  return dim_ == o.dim_ && tree_steps_ == o.tree_steps_ &&
         tree_atoms_ == o.tree_atoms_ && layers() == o.layers();
}

static void require_same(const TreeProcess& a, const TreeProcess& b) {
  if (!a.same_layout(b))
    throw Error(ErrorKind::dimension, "tree processes have different layouts");
}

static Adaptedness join(Adaptedness a, Adaptedness b) {
  return (a == Adaptedness::common && b == Adaptedness::common)
             ? Adaptedness::common
             : Adaptedness::full;
}

TreeProcess& TreeProcess::operator+=(const TreeProcess& o) {
  require_same(*this, o);
  for (int k = 0; k < layers(); ++k) values_[k] += o.values_[k];
  tag_ = join(tag_, o.tag_);
  return *this;
}

TreeProcess& TreeProcess::operator-=(const TreeProcess& o) {
  require_same(*this, o);
  for (int k = 0; k < layers(); ++k) values_[k] -= o.values_[k];
  tag_ = join(tag_, o.tag_);
  return *this;
}

TreeProcess& TreeProcess::operator*=(double s) {
  for (auto& v : values_) v *= s;
  return *this;
}

TreeProcess operator+(TreeProcess a, const TreeProcess& b) { return a += b; }
TreeProcess operator-(TreeProcess a, const TreeProcess& b) { return a -= b; }
TreeProcess operator*(double s, TreeProcess a) { return a *= s; }

Mat common_means(const TreeProcess& p, const JointTree& tree, int k) {
  const Mat& v = p.layer(k);
  Mat sums = Mat::Zero(p.dim(), tree.w0_count(k));
  Eigen::VectorXd weight = Eigen::VectorXd::Zero(tree.w0_count(k));
  for (std::size_t i = 0; i < tree.node_count(k); ++i) {
    int g = tree.w0_id(k, i);
    double w = tree.prob(k, i);
    sums.col(g) += w * v.col(static_cast<Eigen::Index>(i));
    weight[g] += w;
  }
  for (int g = 0; g < tree.w0_count(k); ++g) sums.col(g) /= weight[g];
  return sums;
}

static void check_on_tree(const TreeProcess& p, const JointTree& tree) {
  if (!p.compatible(tree))
    throw Error(ErrorKind::dimension, "process was not built on this tree");
}

TreeProcess conditional_expectation_f0(const TreeProcess& p,
                                       const JointTree& tree) {
  check_on_tree(p, tree);
  if (p.tag() == Adaptedness::common) {
    double defect = f0_adaptedness_defect(p, tree);
    double scale = std::max(1.0, sup_norm(p));
    if (defect > 1e-12 * scale)
      throw Error(ErrorKind::adaptedness,
                  "process tagged F0-adapted varies across W branches (defect " +
                      std::to_string(defect) + ")");
  }
  TreeProcess out(tree, p.dim(), p.layers(), Adaptedness::common);
  for (int k = 0; k < p.layers(); ++k) {
    Mat means = common_means(p, tree, k);
    for (std::size_t i = 0; i < tree.node_count(k); ++i)
      out.layer(k).col(static_cast<Eigen::Index>(i)) = means.col(tree.w0_id(k, i));
  }
  return out;
}

TreeProcess project_breve(const TreeProcess& p, const JointTree& tree) {
  if (p.tag() == Adaptedness::common) {
    TreeProcess zero(tree, p.dim(), p.layers(), Adaptedness::full);
    conditional_expectation_f0(p, tree);  // validates the tag
    return zero;
  }
  TreeProcess out = p;
  out -= conditional_expectation_f0(p, tree);
  out.set_tag(Adaptedness::full);
  return out;
}

double inner_product(const TreeProcess& u, const TreeProcess& v,
                     const JointTree& tree, const TimeGrid& grid) {
  check_on_tree(u, tree);
  if (!u.same_layout(v))
    throw Error(ErrorKind::dimension, "inner product of mismatched processes");
  double total = 0.0;
  int layers = std::min(u.layers(), grid.steps);
  for (int k = 0; k < layers; ++k) {
    const Mat& a = u.layer(k);
    const Mat& b = v.layer(k);
    double layer_sum = 0.0;
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      auto c = static_cast<Eigen::Index>(i);
      layer_sum += tree.prob(k, i) * a.col(c).dot(b.col(c));
    }
    total += layer_sum * grid.dt();
  }
  return total;
}

double f0_adaptedness_defect(const TreeProcess& p, const JointTree& tree) {
  double worst = 0.0;
  for (int k = 0; k < p.layers(); ++k) {
    Mat means = common_means(p, tree, k);
    for (std::size_t i = 0; i < tree.node_count(k); ++i) {
      double dev = (p.layer(k).col(static_cast<Eigen::Index>(i)) -
                    means.col(tree.w0_id(k, i)))
                       .cwiseAbs()
                       .maxCoeff();
      worst = std::max(worst, dev);
    }
  }
  return worst;
}

Mat child_mean(const Mat& next_layer, const JointTree& tree, int k) {
  Mat out(next_layer.rows(), static_cast<Eigen::Index>(tree.node_count(k)));
  for (Eigen::Index i = 0; i < out.cols(); ++i)
    out.col(i) = 0.25 * (next_layer.col(4 * i) + next_layer.col(4 * i + 1) +
                         next_layer.col(4 * i + 2) + next_layer.col(4 * i + 3));
  return out;
}

double sup_norm(const TreeProcess& p) {
  double worst = 0.0;
  for (int k = 0; k < p.layers(); ++k)
    if (p.layer(k).size() > 0)
      worst = std::max(worst, p.layer(k).cwiseAbs().maxCoeff());
  return worst;
}

}  // namespace cmvlq
