#include "pydt/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "pydt/divergence.hpp"

namespace pydt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_normal_iso(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, double var) {
  const auto d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - mean).squaredNorm() / var;
}

Eigen::VectorXd location_or_origin(const Tree& tree, NodeId id) {
  const Node& n = tree.at(id);
  if (n.location) return *n.location;
  if (n.is_root()) return Eigen::VectorXd::Zero(tree.dim());
  throw std::invalid_argument("missing location at node " + std::to_string(id.value));
}

}  // namespace

std::vector<int> child_counts(const Tree& tree, NodeId node) {
  std::vector<int> counts;
  counts.reserve(tree.at(node).children.size());
  for (NodeId ch : tree.at(node).children) counts.push_back(tree.at(ch).count);
  return counts;
}

double structure_factor_node(std::span<const int> counts, double alpha, double beta) {
  const auto k = static_cast<int>(counts.size());
  if (k < 2) throw std::invalid_argument("structure_factor_node: malformed node (K < 2)");
  double logp = 0.0;
  // Summed directly: the Gamma-ratio form loses accuracy when alpha / beta is large.
  for (int j = 3; j <= k; ++j) {
    const double w = alpha + (j - 1) * beta;
    if (w == 0.0) return kNegInf;
    logp += std::log(w);
  }
  int m = 0;
  for (int n : counts) {
    if (n < 1) throw std::invalid_argument("structure_factor_node: counts must be >= 1");
    logp += std::lgamma(n - beta);
    m += n;
  }
  // Every branch after the first is opened by a point whose Gamma(1 - beta)
  // factor is already part of its divergence density.
  return logp - (k - 1) * std::lgamma(1.0 - beta) - std::lgamma(m + alpha);
}

double structure_factor_node(const Tree& tree, NodeId node, double alpha, double beta) {
  if (!tree.at(node).is_internal()) throw std::invalid_argument("structure_factor_node: not an internal node");
  return structure_factor_node(child_counts(tree, node), alpha, beta);
}

double structure_factor(const Tree& tree, double alpha, double beta) {
  double total = 0.0;
  for (NodeId id : tree.internal_nodes()) total += structure_factor_node(tree, id, alpha, beta);
  return total;
}

double times_factor(const Tree& tree, const Hyperparams& hyper) {
  HarmonicTable h(hyper.alpha, hyper.beta);
  double total = 0.0;
  for (NodeId id : tree.internal_nodes()) {
    const Node& b = tree.at(id);
    if (!(b.time < 1.0)) throw std::invalid_argument("times_factor: internal node at t = 1");
    const double t_a = tree.at(b.parent).time;
    total += (A_cum(t_a, hyper.c) - A_cum(b.time, hyper.c)) * h(b.count - 1);
    total += std::log(a_rate(b.time, hyper.c));
  }
  return total;
}

double locations_factor(const Tree& tree, double sigma2) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("locations_factor: sigma2 must be > 0");
  double total = 0.0;
  for (NodeId id : tree.preorder()) {
    const Node& n = tree.at(id);
    if (n.is_root()) continue;
    const double dt = n.time - tree.at(n.parent).time;
    if (!(dt > 0.0)) throw std::invalid_argument("locations_factor: non-positive edge duration");
    total += log_normal_iso(location_or_origin(tree, id), location_or_origin(tree, n.parent), sigma2 * dt);
  }
  return total;
}

double log_prior(const Tree& tree, const Hyperparams& hyper) {
  return structure_factor(tree, hyper.alpha, hyper.beta) + times_factor(tree, hyper);
}

double log_joint(const Tree& tree, const Hyperparams& hyper) {
  return log_prior(tree, hyper) + locations_factor(tree, hyper.sigma2);
}

double time_node_density(double t, std::span<const int> counts, const Hyperparams& hyper) {
  if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("time_node_density: t must be in (0,1)");
  return std::log(hyper.c) + (hyper.c * j_factor(counts, hyper.alpha, hyper.beta) - 1.0) * std::log1p(-t);
}

double sequential_log_prob(const Tree& tree, std::span<const int> ordering, const Hyperparams& hyper,
                           bool with_locations) {
  const int n = tree.num_leaves();
  if (static_cast<int>(ordering.size()) != n) throw std::invalid_argument("sequential_log_prob: ordering size");
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (int idx : ordering) {
    if (idx < 0 || idx >= n || seen[static_cast<std::size_t>(idx)]++) {
      throw std::invalid_argument("sequential_log_prob: ordering is not a permutation of the leaves");
    }
  }
  const double alpha = hyper.alpha;
  const double beta = hyper.beta;
  const double c = hyper.c;
  const double s2 = hyper.sigma2;
  const std::vector<NodeId> post = tree.postorder();
  std::vector<int> earlier(static_cast<std::size_t>(tree.capacity()), 0);
  auto early = [&](NodeId id) { return earlier[static_cast<std::size_t>(id.value)]; };
  auto active_children = [&](NodeId id) {
    int k = 0;
    for (NodeId ch : tree.at(id).children) k += early(ch) > 0 ? 1 : 0;
    return k;
  };
  std::vector<char> placed(static_cast<std::size_t>(n), 0);

  double logp = 0.0;
  for (std::size_t r = 0; r < ordering.size(); ++r) {
    // earlier[v] = number of already-placed points below v
    for (NodeId id : post) {
      const Node& node = tree.at(id);
      int cnt = node.is_leaf() ? placed[static_cast<std::size_t>(node.leaf_index)] : 0;
      for (NodeId ch : node.children) cnt += early(ch);
      earlier[static_cast<std::size_t>(id.value)] = cnt;
    }
    const NodeId leaf = tree.leaf(ordering[r]);
    placed[static_cast<std::size_t>(ordering[r])] = 1;

    if (r == 0) {
      if (with_locations) logp += log_normal_iso(location_or_origin(tree, leaf), Eigen::VectorXd::Zero(tree.dim()), s2);
      continue;
    }

    std::vector<NodeId> path;  // root's child ... leaf
    for (NodeId id = leaf; !tree.at(id).is_root(); id = tree.at(id).parent) path.push_back(id);
    std::reverse(path.begin(), path.end());

    std::size_t u_pos = 0;  // deepest path node already traversed by earlier points
    while (u_pos + 1 < path.size() && early(path[u_pos + 1]) > 0) ++u_pos;
    const NodeId u = path[u_pos];
    const Node& un = tree.at(u);
    const int k_u = active_children(u);
    const bool created = (k_u == 1);

    for (std::size_t i = 0; i <= u_pos; ++i) {
      const NodeId v = path[i];
      const Node& vn = tree.at(v);
      const double t_par = tree.at(vn.parent).time;
      const int m = early(v);
      if (i == u_pos && created) {
        logp += log_survival(t_par, vn.time, m, c, alpha, beta);
        logp += std::log(a_rate(vn.time, c)) - log_divergence_scale(m, alpha, beta);
        break;
      }
      logp += log_survival(t_par, vn.time, m, c, alpha, beta);
      if (i == u_pos) {
        logp += std::log((alpha + beta * k_u) / (m + alpha));
      } else if (active_children(v) >= 2) {
        logp += std::log((early(path[i + 1]) - beta) / (m + alpha));
      }
    }

    if (!with_locations) continue;
    const Eigen::VectorXd x_u = location_or_origin(tree, u);
    logp += log_normal_iso(location_or_origin(tree, leaf), x_u, s2 * (1.0 - un.time));
    if (created) {
      // The new branch point splits the induced edge (p', v'): Brownian bridge.
      NodeId above = un.parent;
      while (!tree.at(above).is_root() && active_children(above) < 2) above = tree.at(above).parent;
      NodeId below = u;
      do {
        NodeId next = kNoNode;
        for (NodeId ch : tree.at(below).children) {
          if (early(ch) > 0) next = ch;
        }
        below = next;
      } while (tree.at(below).is_internal() && active_children(below) < 2);
      const double ta = tree.at(above).time;
      const double tb = tree.at(below).time;
      const double lambda = (un.time - ta) / (tb - ta);
      const Eigen::VectorXd x_a = location_or_origin(tree, above);
      const Eigen::VectorXd x_b = location_or_origin(tree, below);
      logp += log_normal_iso(x_u, x_a + lambda * (x_b - x_a), s2 * (un.time - ta) * (tb - un.time) / (tb - ta));
    }
  }
  return logp;
}

}  // namespace pydt
