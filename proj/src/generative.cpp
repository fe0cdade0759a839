#include "pydt/generative.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pydt/density.hpp"

namespace pydt {

Attachment sample_attachment(const Tree& tree, const Hyperparams& hyper, Rng& rng) {
  const Node& root = tree.at(tree.root());
  if (root.children.empty()) return Attachment::at_node(tree.root(), 0.0);

  NodeId below = root.children.front();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (true) {
    const Node& b = tree.at(below);
    const double t_start = tree.at(b.parent).time;
    double t_d = sample_divergence_time(t_start, b.count, hyper.c, hyper.alpha, hyper.beta, rng);
    // Clamping near t = 1 can collapse a draw onto the start of the edge.
    if (!(t_d > t_start)) t_d = 0.5 * (t_start + std::min(b.time, 1.0));
    if (t_d < b.time) return Attachment::on_edge(below, t_d);

    // Reached the branch point at `below` without diverging.
    const std::vector<double> probs = branch_probs(child_counts(tree, below), hyper.alpha, hyper.beta);
    double u = unif(rng);
    std::size_t k = 0;
    while (k + 1 < probs.size() && u >= probs[k]) {
      u -= probs[k];
      ++k;
    }
    // Guard against rounding pushing u past a zero-probability new branch.
    if (k + 1 == probs.size() && probs[k] == 0.0) k = probs.size() - 2;
    if (k + 1 == probs.size()) return Attachment::at_node(below, b.time);
    below = b.children[k];
  }
}

double attachment_log_prob(const Tree& tree, const Hyperparams& hyper, const Attachment& where) {
  if (tree.at(tree.root()).children.empty()) {
    if (where.kind == Attachment::Kind::Node && where.node == tree.root()) return 0.0;
    throw std::invalid_argument("attachment_log_prob: only the root is available on an empty tree");
  }
  std::vector<NodeId> path;
  for (NodeId id = where.node; !tree.at(id).is_root(); id = tree.at(id).parent) path.push_back(id);
  if (path.empty()) throw std::invalid_argument("attachment_log_prob: cannot attach at a non-empty root");

  const double alpha = hyper.alpha;
  const double beta = hyper.beta;
  double logp = 0.0;
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    const NodeId v = *it;
    const Node& node = tree.at(v);
    const double t_parent = tree.at(node.parent).time;
    const int m = node.count;
    const bool last = (v == where.node);
    if (last && where.kind == Attachment::Kind::Edge) {
      if (!(where.time > t_parent && where.time < node.time)) {
        throw std::invalid_argument("attachment_log_prob: time outside edge");
      }
      logp += log_survival(t_parent, where.time, m, hyper.c, alpha, beta);
      logp += std::log(a_rate(where.time, hyper.c)) - log_divergence_scale(m, alpha, beta);
      return logp;
    }
    logp += log_survival(t_parent, node.time, m, hyper.c, alpha, beta);
    const double denom = m + alpha;
    if (last) return logp + std::log((alpha + beta * node.degree()) / denom);
    const NodeId next = *(it + 1);
    logp += std::log((tree.at(next).count - beta) / denom);
  }
  throw std::logic_error("attachment_log_prob: unreachable");
}

NodeId add_point(Tree& tree, const Hyperparams& hyper, Rng& rng) {
  const Attachment where = sample_attachment(tree, hyper, rng);
  return tree.add_leaf(tree.num_leaves(), where);
}

void sample_locations_forward(Tree& tree, double sigma2, Rng& rng) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sample_locations_forward: sigma2 must be > 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (NodeId id : tree.preorder()) {
    Node& n = tree.at(id);
    if (n.is_root()) {
      n.location = Eigen::VectorXd::Zero(tree.dim());
      continue;
    }
    const Node& p = tree.at(n.parent);
    const double dt = n.time - p.time;
    if (!(dt > 0.0)) throw std::invalid_argument("sample_locations_forward: non-positive edge duration");
    Eigen::VectorXd x(tree.dim());
    const double sd = std::sqrt(sigma2 * dt);
    for (int d = 0; d < tree.dim(); ++d) x[d] = (*p.location)[d] + sd * normal(rng);
    n.location = std::move(x);
  }
}

Tree sample_tree(int n, int dim, const Hyperparams& hyper, Rng& rng, bool with_locations) {
  if (n < 1) throw std::invalid_argument("sample_tree: N must be >= 1");
  if (dim < 1) throw std::invalid_argument("sample_tree: D must be >= 1");
  hyper.validate();
  Tree tree(dim);
  for (int i = 0; i < n; ++i) add_point(tree, hyper, rng);
  if (with_locations) sample_locations_forward(tree, hyper.sigma2, rng);
  return tree;
}

Eigen::MatrixXd leaf_data(const Tree& tree) {
  Eigen::MatrixXd data(tree.num_leaves(), tree.dim());
  for (int i = 0; i < tree.num_leaves(); ++i) {
    const Node& leaf = tree.at(tree.leaf(i));
    if (!leaf.location) throw std::invalid_argument("leaf_data: leaf has no location");
    data.row(i) = leaf.location->transpose();
  }
  return data;
}

}  // namespace pydt
