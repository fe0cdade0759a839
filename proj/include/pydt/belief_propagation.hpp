#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pydt/divergence.hpp"
#include "pydt/gaussian_message.hpp"
#include "pydt/tree.hpp"

namespace pydt {

/// Per-leaf, per-dimension potentials on the leaf locations (rows indexed by
/// leaf index).
struct LeafPotentials {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd var;
  Eigen::MatrixXd log_z;

  /// Point masses at the data; NaN cells become flat (unobserved).
  static LeafPotentials observed(const Eigen::MatrixXd& data);
  static LeafPotentials flat(int n, int dim);

  int rows() const { return static_cast<int>(mean.rows()); }
  int dim() const { return static_cast<int>(mean.cols()); }
  GaussMsg at(int leaf, int d) const { return {log_z(leaf, d), mean(leaf, d), var(leaf, d)}; }
  void set(int leaf, int d, const GaussMsg& m) {
    log_z(leaf, d) = m.log_z;
    mean(leaf, d) = m.mean;
    var(leaf, d) = m.var;
  }
};

/// Posterior mean/variance per node (rows indexed by node id).
struct NodeBeliefs {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd var;
};

/// Exact Gaussian message passing over internal-node locations for a fixed
/// tree, diffusion variance and leaf potentials. The root is a point mass at
/// the origin. Holds a reference to the tree; any structural edit of the tree
/// makes the evaluator stale and it refuses further use.
class BeliefPropagation {
 public:
  BeliefPropagation(const Tree& tree, double sigma2, const LeafPotentials& leaves);

  const Tree& tree() const { return *tree_; }
  double sigma2() const { return sigma2_; }
  int dim() const { return dim_; }

  double log_marginal_likelihood() const { return log_ml_.sum(); }
  const Eigen::ArrayXd& log_marginal_likelihood_per_dim() const { return log_ml_; }

  /// Potential on x_v from the data below v (leaf potential for leaves).
  GaussMsg up(NodeId v, int d) const { return up_[index(v, d)]; }
  /// Potential on x_v from everything outside the subtree of v.
  GaussMsg outside(NodeId v, int d) const;
  /// Posterior marginal of x_v (normalized).
  GaussMsg marginal(NodeId v, int d) const;
  NodeBeliefs posterior_marginals() const;

  /// Posterior marginal of the location at time t on the edge above `below`.
  GaussMsg marginal_on_edge(NodeId below, double t, int d) const;

  /// E[(x_child - x_parent)^2] under the joint posterior of the edge ends.
  double edge_expected_sq(NodeId child, int d) const;

  /// Exact joint posterior draw of all node locations (rows by node id);
  /// leaves with point-mass potentials reproduce their data.
  Eigen::MatrixXd sample_locations(Rng& rng) const;

  /// Change in log marginal likelihood from attaching a subtree whose root
  /// sits at `subtree_time` and whose upward messages are `subtree_up`
  /// (one per dimension). O(D).
  double attach_score(const Attachment& where, double subtree_time, std::span<const GaussMsg> subtree_up) const;

 private:
  std::size_t index(NodeId v, int d) const {
    return static_cast<std::size_t>(v.value) * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(d);
  }
  void check_fresh() const;

  const Tree* tree_;
  std::uint64_t revision_;
  double sigma2_;
  int dim_;
  std::vector<GaussMsg> up_;
  std::vector<GaussMsg> pre_edge_;  // potential on x_parent excluding the child's branch
  Eigen::ArrayXd log_ml_;
};

/// Log marginal likelihood of point-mass data at the leaves.
double marginal_likelihood(const Tree& tree, double sigma2, const Eigen::MatrixXd& data);

}  // namespace pydt
