#pragma once

#include <Eigen/Dense>

#include "pydt/divergence.hpp"
#include "pydt/hyperparams.hpp"
#include "pydt/tree.hpp"

namespace pydt {

/// One run of the sequential generative walk for a new path on `tree`:
/// follow existing branches, diverge on an edge or open a new branch at a
/// branch point. On an empty tree the result is Attachment::at_node(root).
Attachment sample_attachment(const Tree& tree, const Hyperparams& hyper, Rng& rng);

/// Log probability (density in time for edge attachments) that the walk of
/// sample_attachment ends at `where`.
double attachment_log_prob(const Tree& tree, const Hyperparams& hyper, const Attachment& where);

/// Grows the tree by one data point (structure and times only).
NodeId add_point(Tree& tree, const Hyperparams& hyper, Rng& rng);

/// Root at the origin, every node ~ Normal(parent, sigma2 * dt * I).
void sample_locations_forward(Tree& tree, double sigma2, Rng& rng);

/// N points by repeated add_point, then forward diffusion of locations.
Tree sample_tree(int n, int dim, const Hyperparams& hyper, Rng& rng, bool with_locations = true);

/// Leaf locations stacked as an N x D matrix in leaf-index order.
Eigen::MatrixXd leaf_data(const Tree& tree);

}  // namespace pydt
