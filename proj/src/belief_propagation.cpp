#include "pydt/belief_propagation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pydt {

LeafPotentials LeafPotentials::observed(const Eigen::MatrixXd& data) {
  LeafPotentials lp;
  lp.mean = data;
  lp.var = Eigen::MatrixXd::Zero(data.rows(), data.cols());
  lp.log_z = Eigen::MatrixXd::Zero(data.rows(), data.cols());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index d = 0; d < data.cols(); ++d) {
      if (std::isnan(data(i, d))) {
        lp.mean(i, d) = 0.0;
        lp.var(i, d) = std::numeric_limits<double>::infinity();
      }
    }
  }
  return lp;
}

LeafPotentials LeafPotentials::flat(int n, int dim) {
  LeafPotentials lp;
  lp.mean = Eigen::MatrixXd::Zero(n, dim);
  lp.var = Eigen::MatrixXd::Constant(n, dim, std::numeric_limits<double>::infinity());
  lp.log_z = Eigen::MatrixXd::Zero(n, dim);
  return lp;
}

BeliefPropagation::BeliefPropagation(const Tree& tree, double sigma2, const LeafPotentials& leaves)
    : tree_(&tree), revision_(tree.revision()), sigma2_(sigma2), dim_(tree.dim()) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("belief propagation: sigma2 must be > 0");
  if (leaves.dim() != dim_) throw std::invalid_argument("belief propagation: leaf potential dimension mismatch");
  if (leaves.rows() < tree.num_leaves()) throw std::invalid_argument("belief propagation: missing leaf potentials");
  const auto slots = static_cast<std::size_t>(tree.capacity()) * static_cast<std::size_t>(dim_);
  up_.assign(slots, GaussMsg::flat());
  pre_edge_.assign(slots, GaussMsg::flat());
  log_ml_ = Eigen::ArrayXd::Zero(dim_);

  auto edge_var = [&](NodeId child) {
    const double dt = tree.at(child).time - tree.at(tree.at(child).parent).time;
    if (!(dt > 0.0)) throw std::invalid_argument("belief propagation: degenerate edge (dt <= 0)");
    return sigma2_ * dt;
  };

  const std::vector<NodeId> post = tree.postorder();
  for (NodeId v : post) {
    const Node& node = tree.at(v);
    for (int d = 0; d < dim_; ++d) {
      GaussMsg m = node.is_leaf() ? leaves.at(node.leaf_index, d) : GaussMsg::flat();
      for (NodeId ch : node.children) m = multiply(m, through_edge(up_[index(ch, d)], edge_var(ch)));
      up_[index(v, d)] = m;
    }
  }

  const NodeId root = tree.root();
  for (int d = 0; d < dim_; ++d) {
    log_ml_[d] = multiply(GaussMsg::point(0.0), up_[index(root, d)]).log_z;
  }

  // Downward sweep: potential on x_parent from everything except one child's branch,
  // via prefix/suffix products over the siblings.
  for (NodeId v : tree.preorder()) {
    const Node& node = tree.at(v);
    const std::size_t k = node.children.size();
    if (k == 0) continue;
    for (int d = 0; d < dim_; ++d) {
      GaussMsg above = node.is_root() ? GaussMsg::point(0.0) : through_edge(pre_edge_[index(v, d)], edge_var(v));
      std::vector<GaussMsg> incoming(k);
      for (std::size_t i = 0; i < k; ++i) incoming[i] = through_edge(up_[index(node.children[i], d)], edge_var(node.children[i]));
      std::vector<GaussMsg> prefix(k + 1, GaussMsg::flat());
      std::vector<GaussMsg> suffix(k + 1, GaussMsg::flat());
      for (std::size_t i = 0; i < k; ++i) prefix[i + 1] = multiply(prefix[i], incoming[i]);
      for (std::size_t i = k; i-- > 0;) suffix[i] = multiply(suffix[i + 1], incoming[i]);
      // Leaves have no children, so the node's own potential is only the one from above.
      for (std::size_t i = 0; i < k; ++i) {
        pre_edge_[index(node.children[i], d)] = multiply(above, multiply(prefix[i], suffix[i + 1]));
      }
    }
  }
}

void BeliefPropagation::check_fresh() const {
  if (tree_->revision() != revision_) throw std::logic_error("belief propagation: stale message cache");
}

GaussMsg BeliefPropagation::outside(NodeId v, int d) const {
  check_fresh();
  const Node& node = tree_->at(v);
  if (node.is_root()) return GaussMsg::point(0.0);
  const double dt = node.time - tree_->at(node.parent).time;
  return through_edge(pre_edge_[index(v, d)], sigma2_ * dt);
}

GaussMsg BeliefPropagation::marginal(NodeId v, int d) const {
  check_fresh();
  if (tree_->at(v).is_root()) return GaussMsg::point(0.0);
  return multiply(outside(v, d), up_[index(v, d)]).normalized();
}

NodeBeliefs BeliefPropagation::posterior_marginals() const {
  check_fresh();
  NodeBeliefs b;
  b.mean = Eigen::MatrixXd::Zero(tree_->capacity(), dim_);
  b.var = Eigen::MatrixXd::Zero(tree_->capacity(), dim_);
  for (NodeId v : tree_->preorder()) {
    for (int d = 0; d < dim_; ++d) {
      const GaussMsg m = marginal(v, d);
      b.mean(v.value, d) = m.mean;
      b.var(v.value, d) = m.var;
    }
  }
  return b;
}

GaussMsg BeliefPropagation::marginal_on_edge(NodeId below, double t, int d) const {
  check_fresh();
  const Node& node = tree_->at(below);
  const double t_parent = tree_->at(node.parent).time;
  if (!(t > t_parent && t < node.time)) throw std::invalid_argument("marginal_on_edge: time outside edge");
  const GaussMsg from_above = through_edge(pre_edge_[index(below, d)], sigma2_ * (t - t_parent));
  const GaussMsg from_below = through_edge(up_[index(below, d)], sigma2_ * (node.time - t));
  return multiply(from_above, from_below).normalized();
}

double BeliefPropagation::edge_expected_sq(NodeId child, int d) const {
  check_fresh();
  const Node& node = tree_->at(child);
  if (node.is_root()) throw std::invalid_argument("edge_expected_sq: root has no edge");
  const double w = sigma2_ * (node.time - tree_->at(node.parent).time);
  const GaussMsg parent_side = pre_edge_[index(child, d)];
  const GaussMsg child_side = up_[index(child, d)];
  if (child_side.is_flat()) return w;
  // delta = x_c - x_p ~ N(0, w) a priori; child_side acts as a noisy
  // observation of x_p + delta, parent_side as the prior on x_p.
  const double total = parent_side.var + w + child_side.var;
  const double mean = w * (child_side.mean - parent_side.mean) / total;
  const double var = w - w * w / total;
  return var + mean * mean;
}

Eigen::MatrixXd BeliefPropagation::sample_locations(Rng& rng) const {
  check_fresh();
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(tree_->capacity(), dim_);
  for (NodeId v : tree_->preorder()) {
    const Node& node = tree_->at(v);
    if (node.is_root()) continue;
    const double w = sigma2_ * (node.time - tree_->at(node.parent).time);
    for (int d = 0; d < dim_; ++d) {
      const GaussMsg cond = multiply(GaussMsg::gaussian(x(node.parent.value, d), w), up_[index(v, d)]);
      x(v.value, d) = cond.is_point() ? cond.mean : cond.mean + std::sqrt(cond.var) * normal(rng);
    }
  }
  return x;
}

double BeliefPropagation::attach_score(const Attachment& where, double subtree_time,
                                       std::span<const GaussMsg> subtree_up) const {
  check_fresh();
  if (static_cast<int>(subtree_up.size()) != dim_) throw std::invalid_argument("attach_score: dimension mismatch");
  const double t = where.kind == Attachment::Kind::Node ? tree_->at(where.node).time : where.time;
  if (!(subtree_time > t)) throw std::invalid_argument("attach_score: subtree root must come after the attachment");
  double score = 0.0;
  for (int d = 0; d < dim_; ++d) {
    GaussMsg here;
    if (where.kind == Attachment::Kind::Node) {
      here = multiply(outside(where.node, d), up_[index(where.node, d)]);
    } else {
      const Node& node = tree_->at(where.node);
      const double t_parent = tree_->at(node.parent).time;
      here = multiply(through_edge(pre_edge_[index(where.node, d)], sigma2_ * (t - t_parent)),
                      through_edge(up_[index(where.node, d)], sigma2_ * (node.time - t)));
    }
    const GaussMsg joined = multiply(here, through_edge(subtree_up[static_cast<std::size_t>(d)], sigma2_ * (subtree_time - t)));
    score += joined.log_z - log_ml_[d];
  }
  return score;
}

double marginal_likelihood(const Tree& tree, double sigma2, const Eigen::MatrixXd& data) {
  return BeliefPropagation(tree, sigma2, LeafPotentials::observed(data)).log_marginal_likelihood();
}

}  // namespace pydt
